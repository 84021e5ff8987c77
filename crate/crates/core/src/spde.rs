//! Explicit Euler–Maruyama solvers for the Wright–Fisher SPDE and the
//! coupled tracer system on a periodic mesh, plus the martingale-problem
//! and Green's-function diagnostics.
//!
//! White noise is discretised as one standard normal per cell per step,
//! scaled by `sqrt(dt/dx)`. Square-root arguments are clamped at 0 and the
//! fields are clamped back to `0 <= ell <= u <= 1` after every step; the
//! number of clamp activations is reported.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::forward::{density_profiles, simulate, Configuration};
use crate::kernel::{HeatKernel, KernelTestFunction, TestFunction};
use crate::lattice::Domain;
use crate::rng::SimRng;
use crate::scaling::{LimitParams, ScalingFamily};
use crate::Error;

/// Uniform periodic mesh: cell `k` sits at `x0 + k dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dx: f64,
    pub dt: f64,
    pub width: usize,
    pub x0: f64,
}

impl Mesh {
    /// Mesh covering `[lo, lo + width dx)`.
    pub fn new(lo: f64, dx: f64, width: usize, dt: f64) -> Self {
        Self { dx, dt, width, x0: lo }
    }

    pub fn x(&self, k: usize) -> f64 {
        self.x0 + k as f64 * self.dx
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.width).map(|k| self.x(k)).collect()
    }

    /// Errors unless `dt <= dx^2 / (4 alpha)`.
    pub fn check(&self, alpha: f64) -> Result<(), Error> {
        if !(self.dx > 0.0 && self.dt > 0.0) || self.width < 3 {
            return Err(Error::InvalidParameter("mesh needs dx, dt > 0 and at least 3 cells".into()));
        }
        let limit = self.dx * self.dx / (4.0 * alpha);
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::Unstable { dt: self.dt, limit });
        }
        Ok(())
    }

    /// Index of the cell nearest to `x` (periodic).
    pub fn nearest(&self, x: f64) -> usize {
        let k = ((x - self.x0) / self.dx).round() as i64;
        k.rem_euclid(self.width as i64) as usize
    }
}

/// Type density `u` and label density `ell` on a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeField {
    pub u: Vec<f64>,
    pub ell: Vec<f64>,
    pub time: f64,
}

impl SpdeField {
    /// Field with no labels.
    pub fn single(u: Vec<f64>) -> Self {
        let n = u.len();
        Self { u, ell: vec![0.0; n], time: 0.0 }
    }

    pub fn coupled(u: Vec<f64>, ell: Vec<f64>) -> Result<Self, Error> {
        let f = Self { u, ell, time: 0.0 };
        f.check()?;
        Ok(f)
    }

    pub fn from_fn(mesh: &Mesh, u0: impl Fn(f64) -> f64, l0: impl Fn(f64) -> f64) -> Result<Self, Error> {
        Self::coupled(mesh.points().iter().map(|&x| u0(x)).collect(), mesh.points().iter().map(|&x| l0(x)).collect())
    }

    pub fn check(&self) -> Result<(), Error> {
        if self.u.len() != self.ell.len() {
            return Err(Error::Precondition("u and ell differ in length".into()));
        }
        for (&u, &l) in self.u.iter().zip(&self.ell) {
            if !(0.0..=1.0).contains(&u) || !(0.0..=u).contains(&l) {
                return Err(Error::Precondition(format!("need 0 <= ell <= u <= 1, got u={u} ell={l}")));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mesh: &Mesh, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,u,ell")?;
        for k in 0..self.u.len() {
            writeln!(w, "{},{},{}", mesh.x(k), self.u[k], self.ell[k])?;
        }
        Ok(())
    }

    /// Linear interpolation of `u` at `x` (periodic).
    pub fn u_at(&self, mesh: &Mesh, x: f64) -> f64 {
        let y = (x - mesh.x0) / mesh.dx;
        let k = y.floor();
        let frac = y - k;
        let n = self.u.len() as i64;
        let i = (k as i64).rem_euclid(n) as usize;
        let j = (i + 1) % self.u.len();
        self.u[i] * (1.0 - frac) + self.u[j] * frac
    }
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
fn lap(f: &[f64], k: usize, inv_dx2: f64) -> f64 {
    let n = f.len();
    (f[(k + 1) % n] + f[(k + n - 1) % n] - 2.0 * f[k]) * inv_dx2
}

/// One step of `du = (alpha Lap u + 2 theta beta u(1-u)) dt +
/// sqrt(4 gamma u(1-u)) dW`. Returns the number of cells clamped.
pub fn step_wf_spde(
    field: &mut SpdeField,
    scratch: &mut Vec<f64>,
    mesh: &Mesh,
    limits: &LimitParams,
    theta: f64,
    rng: &mut SimRng,
) -> usize {
    step_wf_with(field, scratch, mesh, limits, theta, |_| StandardNormal.sample(rng))
}

/// [`step_wf_spde`] with the standard normal for cell `k` supplied by
/// `draw(k)`, called in cell order (only when `gamma > 0`).
fn step_wf_with(
    field: &mut SpdeField,
    scratch: &mut Vec<f64>,
    mesh: &Mesh,
    limits: &LimitParams,
    theta: f64,
    mut draw: impl FnMut(usize) -> f64,
) -> usize {
    let dt = mesh.dt;
    let inv_dx2 = 1.0 / (mesh.dx * mesh.dx);
    let noise = (dt / mesh.dx).sqrt();
    let sel = 2.0 * theta * limits.beta;
    let four_g = 4.0 * limits.gamma;
    let u = &field.u;
    scratch.clear();
    let mut clamps = 0;
    for k in 0..u.len() {
        let uk = u[k];
        let mut next = uk + dt * (limits.alpha * lap(u, k, inv_dx2) + sel * uk * (1.0 - uk));
        if four_g > 0.0 {
            next += noise * (four_g * pos(uk * (1.0 - uk))).sqrt() * draw(k);
        }
        if !(0.0..=1.0).contains(&next) {
            clamps += 1;
            next = next.clamp(0.0, 1.0);
        }
        scratch.push(next);
    }
    std::mem::swap(&mut field.u, scratch);
    field.ell.iter_mut().for_each(|l| *l = 0.0);
    field.time += dt;
    clamps
}

/// Runs the single equation on `coarse` and on its halving (`dx / 2`,
/// `dt / 4`, twice the cells) driven by the same white noise: the coarse
/// normal for cell `k` is the normalised sum of the fine normals over
/// cells `2k, 2k+1` and the four fine steps. The two fields start from
/// `u0` sampled on their own meshes. Returns `(coarse, fine)` final fields.
pub fn run_spde_halving(
    u0: impl Fn(f64) -> f64,
    coarse: &Mesh,
    limits: &LimitParams,
    theta: f64,
    coarse_steps: usize,
    rng: &mut SimRng,
) -> Result<(SpdeField, SpdeField), Error> {
    limits.validate()?;
    coarse.check(limits.alpha)?;
    let fine = Mesh::new(coarse.x0, coarse.dx / 2.0, 2 * coarse.width, coarse.dt / 4.0);
    let mut fc = SpdeField::from_fn(coarse, &u0, |_| 0.0)?;
    let mut ff = SpdeField::from_fn(&fine, &u0, |_| 0.0)?;
    let mut scratch = Vec::with_capacity(fine.width);
    let mut sums = vec![0.0; coarse.width];
    let noisy = limits.gamma > 0.0;
    for _ in 0..coarse_steps {
        sums.iter_mut().for_each(|x| *x = 0.0);
        for _ in 0..4 {
            step_wf_with(&mut ff, &mut scratch, &fine, limits, theta, |k| {
                let z: f64 = StandardNormal.sample(rng);
                sums[k / 2] += z;
                z
            });
        }
        let scale = 1.0 / 8f64.sqrt();
        step_wf_with(&mut fc, &mut scratch, coarse, limits, theta, |k| if noisy { sums[k] * scale } else { 0.0 });
    }
    Ok((fc, ff))
}

/// One step of the coupled system. `u` gets drift `2 theta beta u(1-u)` and
/// noise `sqrt(4g ell(1-u)) W0 + sqrt(4g (u-ell)(1-u)) W1`; `ell` gets drift
/// `2 theta beta ell(1-u)` and noise `sqrt(4g ell(1-u)) W0 +
/// sqrt(4g ell(u-ell)) W2`, with the same `W0` draw in both. The three
/// noises come from three separate streams.
pub fn step_coupled_spde(
    field: &mut SpdeField,
    scratch: &mut (Vec<f64>, Vec<f64>),
    mesh: &Mesh,
    limits: &LimitParams,
    theta: f64,
    noise_streams: &mut [SimRng; 3],
) -> usize {
    let dt = mesh.dt;
    let inv_dx2 = 1.0 / (mesh.dx * mesh.dx);
    let noise = (dt / mesh.dx).sqrt();
    let sel = 2.0 * theta * limits.beta;
    let four_g = 4.0 * limits.gamma;
    let (u, l) = (&field.u, &field.ell);
    let (nu, nl) = scratch;
    nu.clear();
    nl.clear();
    let mut clamps = 0;
    for k in 0..u.len() {
        let (uk, lk) = (u[k], l[k]);
        let mut un = uk + dt * (limits.alpha * lap(u, k, inv_dx2) + sel * uk * (1.0 - uk));
        let mut ln = lk + dt * (limits.alpha * lap(l, k, inv_dx2) + sel * lk * (1.0 - uk));
        if four_g > 0.0 {
            let [g0, g1, g2] = noise_streams;
            let w0: f64 = StandardNormal.sample(g0);
            let w1: f64 = StandardNormal.sample(g1);
            let w2: f64 = StandardNormal.sample(g2);
            let shared = noise * (four_g * pos(lk * (1.0 - uk))).sqrt() * w0;
            un += shared + noise * (four_g * pos((uk - lk) * (1.0 - uk))).sqrt() * w1;
            ln += shared + noise * (four_g * pos(lk * (uk - lk))).sqrt() * w2;
        }
        let uc = un.clamp(0.0, 1.0);
        let lc = ln.clamp(0.0, uc);
        if uc != un || lc != ln {
            clamps += 1;
        }
        nu.push(uc);
        nl.push(lc);
    }
    std::mem::swap(&mut field.u, nu);
    std::mem::swap(&mut field.ell, nl);
    field.time += dt;
    clamps
}

/// Noise for a run: one stream for the single equation, three for the
/// coupled system.
pub enum Noise<'a> {
    Single(&'a mut SimRng),
    Coupled(&'a mut [SimRng; 3]),
}

/// Result of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdeRun {
    pub final_field: SpdeField,
    /// Snapshots at multiples of `sample_every` steps, starting with the
    /// initial field.
    pub samples: Vec<SpdeField>,
    pub clamps: usize,
}

/// Runs `steps` steps from `start`.
pub fn run_spde(
    start: &SpdeField,
    mesh: &Mesh,
    limits: &LimitParams,
    theta: f64,
    steps: usize,
    sample_every: Option<usize>,
    noise: Noise<'_>,
) -> Result<SpdeRun, Error> {
    limits.validate()?;
    mesh.check(limits.alpha)?;
    start.check()?;
    if start.u.len() != mesh.width {
        return Err(Error::Precondition("field does not match mesh".into()));
    }
    let mut field = start.clone();
    let mut samples = Vec::new();
    if sample_every.is_some() {
        samples.push(field.clone());
    }
    let mut clamps = 0;
    let mut s1 = Vec::with_capacity(mesh.width);
    let mut s2 = (Vec::with_capacity(mesh.width), Vec::with_capacity(mesh.width));
    let mut noise = noise;
    for k in 1..=steps {
        clamps += match &mut noise {
            Noise::Single(g) => step_wf_spde(&mut field, &mut s1, mesh, limits, theta, g),
            Noise::Coupled(gs) => step_coupled_spde(&mut field, &mut s2, mesh, limits, theta, gs),
        };
        if let Some(every) = sample_every {
            if k % every.max(1) == 0 {
                samples.push(field.clone());
            }
        }
    }
    Ok(SpdeRun { final_field: field, samples, clamps })
}

/// Martingale-problem residual of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `M` at every sample time.
    pub series: Vec<f64>,
    /// `sum (Delta M)^2` over the sample grid.
    pub realized_qv: f64,
    /// Quadrature of the predicted quadratic-variation density.
    pub predicted_qv: f64,
}

fn inner(dx: f64, f: impl Iterator<Item = f64>) -> f64 {
    dx * f.sum::<f64>()
}

/// Residual `M_t = <u_t, phi_t> - <u_0, phi_0> - int (<u, d_s phi> +
/// alpha <u, Lap phi> + 2 theta beta <u(1-u), phi>) ds` on snapshots taken
/// every `sample_dt`, with trapezoidal time quadrature. The predicted
/// quadratic variation is `4 gamma int <u(1-u), phi^2> ds`.
pub fn martingale_residual(
    samples: &[SpdeField],
    mesh: &Mesh,
    sample_dt: f64,
    phi: &dyn TestFunction,
    limits: &LimitParams,
    theta: f64,
) -> ResidualReport {
    let xs = mesh.points();
    let sel = 2.0 * theta * limits.beta;
    let drift = |f: &SpdeField| {
        let s = f.time;
        inner(
            mesh.dx,
            xs.iter().zip(&f.u).map(|(&x, &u)| {
                u * (phi.time_derivative(s, x) + limits.alpha * phi.laplacian(s, x)) + sel * u * (1.0 - u) * phi.value(s, x)
            }),
        )
    };
    let qv_density = |f: &SpdeField| {
        let s = f.time;
        4.0 * limits.gamma * inner(mesh.dx, xs.iter().zip(&f.u).map(|(&x, &u)| u * (1.0 - u) * phi.value(s, x).powi(2)))
    };
    let pairing = |f: &SpdeField| inner(mesh.dx, xs.iter().zip(&f.u).map(|(&x, &u)| u * phi.value(f.time, x)));
    assemble(samples, sample_dt, pairing, drift, qv_density)
}

/// Coupled residual for the pair `(phi, psi)` acting on `(u, ell)`: the
/// `u` part as in [`martingale_residual`] plus `<ell_t, psi_t> - ... -
/// int (<ell, d_s psi> + alpha <ell, Lap psi> + 2 theta beta <ell(1-u),
/// psi>) ds`. Predicted quadratic variation density is `4 gamma (<u(1-u),
/// phi^2> + <ell(1-ell), psi^2> + 2 <ell(1-u), phi psi>)`.
pub fn coupled_martingale_residual(
    samples: &[SpdeField],
    mesh: &Mesh,
    sample_dt: f64,
    phi: &dyn TestFunction,
    psi: &dyn TestFunction,
    limits: &LimitParams,
    theta: f64,
) -> ResidualReport {
    let xs = mesh.points();
    let sel = 2.0 * theta * limits.beta;
    let a = limits.alpha;
    let drift = |f: &SpdeField| {
        let s = f.time;
        inner(
            mesh.dx,
            (0..xs.len()).map(|k| {
                let (x, u, l) = (xs[k], f.u[k], f.ell[k]);
                u * (phi.time_derivative(s, x) + a * phi.laplacian(s, x))
                    + sel * u * (1.0 - u) * phi.value(s, x)
                    + l * (psi.time_derivative(s, x) + a * psi.laplacian(s, x))
                    + sel * l * (1.0 - u) * psi.value(s, x)
            }),
        )
    };
    let qv_density = |f: &SpdeField| {
        let s = f.time;
        4.0 * limits.gamma
            * inner(
                mesh.dx,
                (0..xs.len()).map(|k| {
                    let (x, u, l) = (xs[k], f.u[k], f.ell[k]);
                    let (p, q) = (phi.value(s, x), psi.value(s, x));
                    u * (1.0 - u) * p * p + l * (1.0 - l) * q * q + 2.0 * l * (1.0 - u) * p * q
                }),
            )
    };
    let pairing = |f: &SpdeField| {
        inner(
            mesh.dx,
            (0..xs.len()).map(|k| f.u[k] * phi.value(f.time, xs[k]) + f.ell[k] * psi.value(f.time, xs[k])),
        )
    };
    assemble(samples, sample_dt, pairing, drift, qv_density)
}

fn assemble(
    samples: &[SpdeField],
    sample_dt: f64,
    pairing: impl Fn(&SpdeField) -> f64,
    drift: impl Fn(&SpdeField) -> f64,
    qv_density: impl Fn(&SpdeField) -> f64,
) -> ResidualReport {
    let p0 = pairing(&samples[0]);
    let mut series = vec![0.0];
    let mut integral = 0.0;
    let mut qv = 0.0;
    let mut prev_drift = drift(&samples[0]);
    let mut prev_qv = qv_density(&samples[0]);
    for f in &samples[1..] {
        let d = drift(f);
        let q = qv_density(f);
        integral += 0.5 * sample_dt * (prev_drift + d);
        qv += 0.5 * sample_dt * (prev_qv + q);
        series.push(pairing(f) - p0 - integral);
        prev_drift = d;
        prev_qv = q;
    }
    let realized_qv = series.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    ResidualReport { series, realized_qv, predicted_qv: qv }
}

/// Precomputed pieces of the Green's-function decomposition of the lattice
/// density at deme `z` and time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenCheck {
    pub domain: Domain,
    pub family: ScalingFamily,
    pub t: f64,
    pub z: usize,
    /// `P_{alpha_n t} u_0(z)`.
    pub smoothed_initial: f64,
    /// Quadrature nodes in `[0, t]`.
    pub nodes: Vec<f64>,
    /// `phi_s(w) = p_{alpha_n (t - s)}(w - z)` per node, per deme.
    phi: Vec<Vec<f64>>,
}

/// One replica of the Green's-function check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenSample {
    /// `u_t(z) - P_{alpha_n t} u_0(z)`.
    pub remainder: f64,
    /// Selection drift term `Y_t`.
    pub drift: f64,
}

impl GreenCheck {
    /// Sets up the check for initial configuration `start`, using `nodes`
    /// equally spaced quadrature intervals.
    pub fn new(domain: &Domain, family: &ScalingFamily, start: &Configuration, t: f64, z: usize, nodes: usize) -> Result<Self, Error> {
        if nodes == 0 || !(t >= 0.0) || z >= domain.demes {
            return Err(Error::InvalidParameter("green check needs t >= 0, nodes >= 1 and z inside the ring".into()));
        }
        let alpha_n = family.derived_ratios().alpha_n;
        let u0 = density_profiles(start, domain, family, 0).u;
        let lf = family.demes_per_unit as f64;
        let times: Vec<f64> = (0..=nodes).map(|j| t * j as f64 / nodes as f64).collect();
        let phi: Vec<Vec<f64>> = times
            .iter()
            .map(|&s| {
                KernelTestFunction { l: family.demes_per_unit, alpha: alpha_n, t, z_index: z, period: domain.demes }.values(s)
            })
            .collect();
        let kern = HeatKernel::new(family.demes_per_unit, alpha_n * t).wrapped(domain.demes);
        let smoothed_initial = (0..domain.demes)
            .map(|w| kern[(w + domain.demes - z) % domain.demes] * u0[w])
            .sum::<f64>()
            / lf;
        Ok(Self { domain: *domain, family: *family, t, z, smoothed_initial, nodes: times, phi })
    }

    /// Runs the forward model once from `start` and returns the remainder
    /// and the drift term.
    pub fn sample(&self, start: &Configuration, rng: &mut SimRng) -> Result<GreenSample, Error> {
        let (end, snaps) = simulate(&self.domain, &self.family, start, self.t, &self.nodes, rng)?;
        let beta_n = self.family.derived_ratios().beta_n;
        let lf = self.family.demes_per_unit as f64;
        let w = self.domain.demes;
        let integrand: Vec<f64> = snaps
            .iter()
            .zip(&self.phi)
            .map(|(c, phi)| {
                let u = density_profiles(c, &self.domain, &self.family, 0).u;
                (0..w).map(|k| (u[(k + w - 1) % w] + u[(k + 1) % w]) * (1.0 - u[k]) * phi[k]).sum::<f64>()
            })
            .collect();
        let h = self.t / (self.nodes.len() - 1) as f64;
        let integral: f64 = integrand.windows(2).map(|p| 0.5 * h * (p[0] + p[1])).sum();
        let drift = self.family.theta * beta_n / lf * integral;
        let u_end = density_profiles(&end, &self.domain, &self.family, 0).u[self.z];
        Ok(GreenSample { remainder: u_end - self.smoothed_initial, drift })
    }
}
