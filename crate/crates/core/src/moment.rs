//! Wright–Fisher diffusions, the birth–death chain dual to their moments,
//! and the moment and label-functional duality checks.
//!
//! The single diffusion is `dU = beta U(1-U) dt + sigma sqrt(U(1-U)) dB`
//! with `Z = 1 - U`. The coupled system tracks the unlabeled type-0 mass
//! `Z` and the label mass `V`:
//!
//! ```text
//! dZ = -beta Z(1-Z) dt - sigma sqrt(VZ) dB0 - sigma sqrt(Z(1-Z-V)) dB1
//! dV =  beta VZ dt     + sigma sqrt(VZ) dB0 + sigma sqrt(V(1-V-Z)) dB2
//! ```
//!
//! The chain jumps `m -> m+1` at rate `beta m` and `m -> m-1` at rate
//! `sigma^2 m(m-1)/2`.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::continuum::{simulate_bbm_ordered, BbmParams};
use crate::par::map_replicas;
use crate::rng::{self, tag, SimRng};
use crate::stats::{agree_within, Estimate};
use crate::Error;

/// Default cap on the chain state.
pub const DEFAULT_CHAIN_CAP: u64 = 10_000;

/// State of either diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DiffusionState {
    Single { u: f64, time: f64 },
    Coupled { z: f64, v: f64, time: f64 },
}

impl DiffusionState {
    pub fn single(u: f64) -> Result<Self, Error> {
        let s = Self::Single { u, time: 0.0 };
        s.check()?;
        Ok(s)
    }

    pub fn coupled(z: f64, v: f64) -> Result<Self, Error> {
        let s = Self::Coupled { z, v, time: 0.0 };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), Error> {
        let ok = match *self {
            Self::Single { u, .. } => (0.0..=1.0).contains(&u),
            Self::Coupled { z, v, .. } => z >= 0.0 && v >= 0.0 && z + v <= 1.0 + 1e-12,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("diffusion state outside the simplex: {self:?}")))
        }
    }

    /// `Z`: `1 - U` in the single case.
    pub fn z(&self) -> f64 {
        match *self {
            Self::Single { u, .. } => 1.0 - u,
            Self::Coupled { z, .. } => z,
        }
    }

    pub fn time(&self) -> f64 {
        match *self {
            Self::Single { time, .. } | Self::Coupled { time, .. } => time,
        }
    }
}

/// Euclidean projection onto `{z, v >= 0, z + v <= 1}`.
pub fn project_simplex(z: f64, v: f64) -> (f64, f64) {
    let (mut z, mut v) = (z, v);
    let excess = z + v - 1.0;
    if excess > 0.0 {
        z -= excess / 2.0;
        v -= excess / 2.0;
    }
    if z < 0.0 {
        z = 0.0;
        v = v.min(1.0);
    }
    if v < 0.0 {
        v = 0.0;
        z = z.min(1.0);
    }
    (z.max(0.0), v.max(0.0))
}

#[inline]
fn sqrt_pos(x: f64) -> f64 {
    x.max(0.0).sqrt()
}

/// Supplies standard normals, either plainly or refined: a refined source
/// at level `k` returns `2^k` draws per coarse step whose scaled sum equals
/// the coarse draw, so halving `dt` reuses the coarse Brownian path.
struct Increments<'a> {
    coarse: &'a mut SimRng,
    refine: Option<&'a mut SimRng>,
    buf: [f64; 2],
    pending: usize,
}

impl Increments<'_> {
    fn next(&mut self) -> f64 {
        match &mut self.refine {
            None => StandardNormal.sample(self.coarse),
            Some(fine) => {
                if self.pending == 0 {
                    let a: f64 = StandardNormal.sample(self.coarse);
                    let b: f64 = StandardNormal.sample(*fine);
                    self.buf = [(a + b) / std::f64::consts::SQRT_2, (a - b) / std::f64::consts::SQRT_2];
                    self.pending = 2;
                }
                self.pending -= 1;
                self.buf[1 - self.pending]
            }
        }
    }
}

fn single_step(u: f64, beta: f64, sigma: f64, dt: f64, sq: f64, w: f64) -> f64 {
    (u + beta * u * (1.0 - u) * dt + sigma * sqrt_pos(u * (1.0 - u)) * sq * w).clamp(0.0, 1.0)
}

fn coupled_step(z: f64, v: f64, beta: f64, sigma: f64, dt: f64, sq: f64, w: [f64; 3]) -> (f64, f64) {
    let shared = sigma * sqrt_pos(v * z) * sq * w[0];
    let zn = z - beta * z * (1.0 - z) * dt - shared - sigma * sqrt_pos(z * (1.0 - z - v)) * sq * w[1];
    let vn = v + beta * v * z * dt + shared + sigma * sqrt_pos(v * (1.0 - v - z)) * sq * w[2];
    project_simplex(zn, vn)
}

fn step_state(state: &mut DiffusionState, beta: f64, sigma: f64, dt: f64, sq: f64, inc: &mut Increments<'_>) {
    match state {
        DiffusionState::Single { u, time } => {
            // absorbed paths still consume their draw so paths stay aligned
            let w = inc.next();
            if *u > 0.0 && *u < 1.0 {
                *u = single_step(*u, beta, sigma, dt, sq, w);
            }
            *time += dt;
        }
        DiffusionState::Coupled { z, v, time } => {
            let w = [inc.next(), inc.next(), inc.next()];
            (*z, *v) = coupled_step(*z, *v, beta, sigma, dt, sq, w);
            *time += dt;
        }
    }
}

fn run_diffusion(
    state0: DiffusionState,
    beta: f64,
    sigma: f64,
    horizon: f64,
    dt: f64,
    coarse: &mut SimRng,
    refine: Option<&mut SimRng>,
) -> Result<DiffusionState, Error> {
    state0.check()?;
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::InvalidParameter("diffusion needs dt > 0 and T >= 0".into()));
    }
    let refined = refine.is_some();
    let (steps, h) = if refined {
        (2 * (horizon / dt).round() as usize, dt / 2.0)
    } else {
        ((horizon / dt).round() as usize, dt)
    };
    let sq = h.sqrt();
    let mut inc = Increments { coarse, refine, buf: [0.0; 2], pending: 0 };
    let mut s = state0;
    if refined {
        if let DiffusionState::Coupled { .. } = s {
            // each of the three noises is split into its own two halves
            return run_coupled_refined(s, beta, sigma, horizon, dt, &mut inc);
        }
    }
    for _ in 0..steps {
        step_state(&mut s, beta, sigma, h, sq, &mut inc);
    }
    Ok(s)
}

fn run_coupled_refined(
    mut s: DiffusionState,
    beta: f64,
    sigma: f64,
    horizon: f64,
    dt: f64,
    inc: &mut Increments<'_>,
) -> Result<DiffusionState, Error> {
    let coarse_steps = (horizon / dt).round() as usize;
    let h = dt / 2.0;
    let sq = h.sqrt();
    for _ in 0..coarse_steps {
        let mut halves = [[0.0; 3]; 2];
        let [a, b] = &mut halves;
        for (x, y) in a.iter_mut().zip(b.iter_mut()) {
            *x = inc.next();
            *y = inc.next();
        }
        if let DiffusionState::Coupled { z, v, time } = &mut s {
            for w in halves {
                (*z, *v) = coupled_step(*z, *v, beta, sigma, h, sq, w);
                *time += h;
            }
        }
    }
    Ok(s)
}

/// Euler–Maruyama run to time `horizon` with step `dt`.
pub fn simulate_diffusion(
    state0: DiffusionState,
    beta: f64,
    sigma: f64,
    horizon: f64,
    dt: f64,
    rng: &mut SimRng,
) -> Result<DiffusionState, Error> {
    run_diffusion(state0, beta, sigma, horizon, dt, rng, None)
}

/// Same Brownian path as [`simulate_diffusion`] with the same `rng`, but
/// integrated at step `dt / 2`; `fine` supplies the extra randomness.
pub fn simulate_diffusion_halved(
    state0: DiffusionState,
    beta: f64,
    sigma: f64,
    horizon: f64,
    dt: f64,
    rng: &mut SimRng,
    fine: &mut SimRng,
) -> Result<DiffusionState, Error> {
    run_diffusion(state0, beta, sigma, horizon, dt, rng, Some(fine))
}

/// Chain state after a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualChain {
    pub n: u64,
    pub cap: u64,
    pub overflowed: bool,
    pub jumps: u64,
}

/// Exposure time and jump counts per chain state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SojournTally {
    /// Indexed by state; entry 0 unused.
    pub time: Vec<f64>,
    pub ups: Vec<u64>,
    pub downs: Vec<u64>,
}

impl SojournTally {
    fn add(&mut self, m: u64, dt: f64, up: Option<bool>) {
        let m = m as usize;
        if self.time.len() <= m {
            self.time.resize(m + 1, 0.0);
            self.ups.resize(m + 1, 0);
            self.downs.resize(m + 1, 0);
        }
        self.time[m] += dt;
        match up {
            Some(true) => self.ups[m] += 1,
            Some(false) => self.downs[m] += 1,
            None => {}
        }
    }

    /// Birth- and death-rate estimates at `m` (jumps over exposure) with
    /// Poisson standard errors.
    pub fn rates(&self, m: u64) -> Option<(Estimate, Estimate)> {
        let m = m as usize;
        let t = *self.time.get(m)?;
        if t <= 0.0 {
            return None;
        }
        let est = |k: u64| Estimate { mean: k as f64 / t, se: Some((k as f64).sqrt() / t), n: k as usize };
        Some((est(self.ups[m]), est(self.downs[m])))
    }

    /// Completed holding periods at `m`.
    pub fn holds(&self, m: u64) -> u64 {
        let m = m as usize;
        self.ups.get(m).copied().unwrap_or(0) + self.downs.get(m).copied().unwrap_or(0)
    }
}

/// Birth rate `beta m`.
pub fn birth_rate(m: u64, beta: f64) -> f64 {
    beta * m as f64
}

/// Death rate `sigma^2 m(m-1)/2`; zero at `m = 1`.
pub fn death_rate(m: u64, sigma: f64) -> f64 {
    sigma * sigma * (m * m.saturating_sub(1)) as f64 / 2.0
}

/// Gillespie run of the chain from `n0` for time `horizon`. Reaching `cap`
/// stops the run with `overflowed` set.
pub fn simulate_chain(
    n0: u64,
    beta: f64,
    sigma: f64,
    horizon: f64,
    cap: u64,
    rng: &mut SimRng,
    mut tally: Option<&mut SojournTally>,
) -> Result<DualChain, Error> {
    if n0 == 0 || n0 > cap {
        return Err(Error::InvalidParameter(format!("chain start {n0} outside 1..={cap}")));
    }
    if beta < 0.0 || sigma < 0.0 {
        return Err(Error::InvalidParameter("chain rates must be nonnegative".into()));
    }
    let mut n = n0;
    let mut t = 0.0;
    let mut jumps = 0;
    loop {
        let up = birth_rate(n, beta);
        let down = death_rate(n, sigma);
        let total = up + down;
        let hold = if total > 0.0 { Exp::new(total).expect("positive rate").sample(rng) } else { f64::INFINITY };
        if t + hold > horizon {
            if let Some(tl) = tally.as_deref_mut() {
                tl.add(n, horizon - t, None);
            }
            return Ok(DualChain { n, cap, overflowed: false, jumps });
        }
        t += hold;
        let is_up = rng.random::<f64>() * total < up;
        if let Some(tl) = tally.as_deref_mut() {
            tl.add(n, hold, Some(is_up));
        }
        jumps += 1;
        n = if is_up { n + 1 } else { n - 1 };
        if n >= cap {
            return Ok(DualChain { n, cap, overflowed: true, jumps });
        }
    }
}

/// `z^n` with `0^0 = 1`.
fn pow_conv(z: f64, n: u64) -> f64 {
    if n == 0 {
        1.0
    } else {
        z.powi(n.min(i32::MAX as u64) as i32)
    }
}

/// Two-sided duality report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub se_lhs: Option<f64>,
    pub se_rhs: Option<f64>,
    pub reps: usize,
    pub pass: bool,
    pub overflow_count: usize,
}

impl DualityReport {
    fn new(lhs: &[f64], rhs: &[f64], overflow_count: usize) -> Self {
        let a = Estimate::from_samples(lhs);
        let b = Estimate::from_samples(rhs);
        let agreement = agree_within(&a, &b, 3.0, 0.0);
        Self {
            lhs: a.mean,
            rhs: b.mean,
            se_lhs: a.se,
            se_rhs: b.se,
            reps: lhs.len(),
            pass: agreement.pass,
            overflow_count,
        }
    }

    pub fn lhs_estimate(&self) -> Estimate {
        Estimate { mean: self.lhs, se: self.se_lhs, n: self.reps }
    }

    pub fn rhs_estimate(&self) -> Estimate {
        Estimate { mean: self.rhs, se: self.se_rhs, n: self.reps }
    }
}

/// Settings shared by the duality checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualitySettings {
    pub beta: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub dt: f64,
    pub reps: usize,
    pub seed: u64,
    pub cap: u64,
}

fn chain_side(n0: u64, s: &DualitySettings, f: impl Fn(u64) -> f64 + Sync) -> (Vec<f64>, usize) {
    let runs = map_replicas(s.reps, |i| {
        let mut g = rng::stream(s.seed, &[tag::CHAIN, i as u64]);
        simulate_chain(n0, s.beta, s.sigma, s.horizon, s.cap, &mut g, None).expect("validated chain input")
    });
    let overflow = runs.iter().filter(|c| c.overflowed).count();
    let vals = runs.iter().filter(|c| !c.overflowed).map(|c| f(c.n)).collect();
    (vals, overflow)
}

fn diffusion_side(state0: DiffusionState, s: &DualitySettings, f: impl Fn(&DiffusionState) -> f64 + Sync) -> Vec<f64> {
    map_replicas(s.reps, |i| {
        let mut g = rng::stream(s.seed, &[tag::DIFFUSION, i as u64]);
        f(&simulate_diffusion(state0, s.beta, s.sigma, s.horizon, s.dt, &mut g).expect("validated diffusion input"))
    })
}

/// `E Z_T^{n0}` from the diffusion against `E z0^{N_T}` from the chain.
pub fn check_moment_duality(z0: f64, n0: u64, s: &DualitySettings) -> Result<DualityReport, Error> {
    if !(0.0..=1.0).contains(&z0) || n0 == 0 || s.reps == 0 {
        return Err(Error::InvalidParameter("need z0 in [0,1], n0 >= 1 and reps >= 1".into()));
    }
    let state0 = DiffusionState::single(1.0 - z0)?;
    let lhs = diffusion_side(state0, s, |st| pow_conv(st.z(), n0));
    let (rhs, overflow) = chain_side(n0, s, |n| pow_conv(z0, n));
    Ok(DualityReport::new(&lhs, &rhs, overflow))
}

/// `E Z_T^{n0}` at step `dt` and at `dt / 2` on the same Brownian paths.
/// Returns the two estimates and the per-path difference estimate.
pub fn moment_step_halving(z0: f64, n0: u64, s: &DualitySettings) -> Result<(Estimate, Estimate, Estimate), Error> {
    let state0 = DiffusionState::single(1.0 - z0)?;
    let pairs = map_replicas(s.reps, |i| {
        let mut g = rng::stream(s.seed, &[tag::DIFFUSION, i as u64]);
        let coarse = simulate_diffusion(state0, s.beta, s.sigma, s.horizon, s.dt, &mut g).expect("validated");
        let mut g = rng::stream(s.seed, &[tag::DIFFUSION, i as u64]);
        let mut fine = rng::stream(s.seed, &[tag::DIFFUSION, i as u64, 1]);
        let halved = simulate_diffusion_halved(state0, s.beta, s.sigma, s.horizon, s.dt, &mut g, &mut fine).expect("validated");
        (pow_conv(coarse.z(), n0), pow_conv(halved.z(), n0))
    });
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let d: Vec<f64> = pairs.iter().map(|p| p.1 - p.0).collect();
    Ok((Estimate::from_samples(&a), Estimate::from_samples(&b), Estimate::from_samples(&d)))
}

/// Generator of the `Z` diffusion applied to `z^m`:
/// `beta m (z^{m+1} - z^m) + sigma^2 m(m-1)/2 (z^{m-1} - z^m)`.
pub fn generator_drift(z: f64, m: u64, beta: f64, sigma: f64) -> f64 {
    let zm = pow_conv(z, m);
    birth_rate(m, beta) * (z * zm - zm) + death_rate(m, sigma) * (pow_conv(z, m.saturating_sub(1)) - zm)
}

/// Monte Carlo drift `(E Z_h^m - z0^m) / h` for each `m` in `ms`, from
/// `reps` paths of the `Z` diffusion integrated with `substeps` Euler steps
/// over `[0, h]`. All `m` share the same paths.
pub fn mc_drift(
    z0: f64,
    ms: &[u64],
    beta: f64,
    sigma: f64,
    h: f64,
    substeps: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<Estimate>, Error> {
    if reps < 2 || substeps == 0 || !(h > 0.0) {
        return Err(Error::InvalidParameter("drift needs reps >= 2, substeps >= 1 and h > 0".into()));
    }
    let state0 = DiffusionState::single(1.0 - z0)?;
    let dt = h / substeps as f64;
    let ends = map_replicas(reps, |i| {
        let mut g = rng::stream(seed, &[tag::DIFFUSION, 2, i as u64]);
        simulate_diffusion(state0, beta, sigma, h, dt, &mut g).expect("validated").z()
    });
    Ok(ms
        .iter()
        .map(|&m| {
            let base = pow_conv(z0, m);
            let d: Vec<f64> = ends.iter().map(|&z| (pow_conv(z, m) - base) / h).collect();
            Estimate::from_samples(&d)
        })
        .collect())
}

/// `F_k((z, ell), (x, n)) = sum over j_1 < ... < j_k of ell(x_{j_1}) ...
/// ell(x_{j_k}) prod_{i < j_1} z(x_i)`, given `z` and `ell` already
/// evaluated at the ordered positions. `k = 0` gives `prod z`.
pub fn eval_fk(z: &[f64], ell: &[f64], k: usize) -> Result<f64, Error> {
    let n = z.len();
    if ell.len() != n {
        return Err(Error::Precondition("z and ell differ in length".into()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds n = {n}")));
    }
    if k == 0 {
        return Ok(z.iter().product());
    }
    // e[j][c]: sum over c-subsets of positions j.. of the product of ell
    let mut e = vec![vec![0.0; k + 1]; n + 1];
    for row in e.iter_mut() {
        row[0] = 1.0;
    }
    for j in (0..n).rev() {
        for c in 1..=k {
            e[j][c] = e[j + 1][c] + ell[j] * e[j + 1][c - 1];
        }
    }
    let mut prefix = 1.0;
    let mut total = 0.0;
    for j in 0..n {
        total += prefix * ell[j] * e[j + 1][k - 1];
        prefix *= z[j];
    }
    Ok(total)
}

/// Where the dual side of the label-functional check comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoupledMode {
    /// Homogeneous data: coupled scalar diffusion against the chain.
    Scalar,
    /// Spatial data: the ordered BBM supplies the dual positions; the
    /// forward side must be supplied by the caller.
    Spatial,
}

/// `E F_k((Z_T, V_T), n0)` from the coupled diffusion against
/// `E F_k((Z_0, V_0), N_T)` from the chain, homogeneous data.
pub fn check_coupled_duality(k: usize, z0: f64, v0: f64, n0: u64, s: &DualitySettings) -> Result<DualityReport, Error> {
    if k as u64 > n0 {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds n0 = {n0}")));
    }
    if s.reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let state0 = DiffusionState::coupled(z0, v0)?;
    let fk = |z: f64, v: f64, n: u64| {
        let n = n as usize;
        eval_fk(&vec![z; n], &vec![v; n], k).unwrap_or(0.0)
    };
    let lhs = diffusion_side(state0, s, |st| match *st {
        DiffusionState::Coupled { z, v, .. } => fk(z, v, n0),
        _ => unreachable!("coupled start stays coupled"),
    });
    let (rhs, overflow) = chain_side(n0, s, |n| if (n as usize) < k { 0.0 } else { fk(z0, v0, n) });
    Ok(DualityReport::new(&lhs, &rhs, overflow))
}

/// Dual side of the spatial label-functional identity: `E F_k((z_0, ell_0),
/// (x_T, n_T))` with the ordered BBM started from `x0`.
pub fn spatial_dual_side(
    k: usize,
    x0: &[f64],
    z0: impl Fn(f64) -> f64 + Sync,
    ell0: impl Fn(f64) -> f64 + Sync,
    params: &BbmParams,
    horizon: f64,
    reps: usize,
    seed: u64,
) -> Result<Estimate, Error> {
    if reps == 0 || k > x0.len() {
        return Err(Error::InvalidParameter("need reps >= 1 and k <= n0".into()));
    }
    params.validate()?;
    let vals = map_replicas(reps, |i| {
        let mut g = rng::stream(seed, &[tag::BBM, i as u64]);
        let st = simulate_bbm_ordered(x0, params, horizon, &mut g).expect("validated BBM input");
        let xs = st.view_positions(0);
        let z: Vec<f64> = xs.iter().map(|&x| z0(x)).collect();
        let l: Vec<f64> = xs.iter().map(|&x| ell0(x)).collect();
        if xs.len() < k { 0.0 } else { eval_fk(&z, &l, k).expect("lengths match") }
    });
    Ok(Estimate::from_samples(&vals))
}
