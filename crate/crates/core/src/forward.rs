//! Event-driven simulation of the biased voter model with tracer labels.
//!
//! The simulator draws the same arrows as [`crate::graphical`] on the fly:
//! with `P` directed pairs the next event comes after an exponential time of
//! rate `P (r + theta/R)`, lands on a uniform pair, and is a selection event
//! with probability `(theta/R) / (r + theta/R)`. Nothing is stored.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::graphical::{apply_arrow, Arrow, ArrowKind};
use crate::lattice::Domain;
use crate::rng::SimRng;
use crate::scaling::ScalingFamily;
use crate::Error;

/// Type field `xi` and label field `eta` over all sites, `eta <= xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub xi: Vec<u8>,
    pub eta: Vec<u8>,
    pub time: f64,
}

impl Configuration {
    pub fn new(xi: Vec<u8>, eta: Vec<u8>) -> Result<Self, Error> {
        let c = Self { xi, eta, time: 0.0 };
        c.check()?;
        Ok(c)
    }

    /// All sites type `xi`, unlabeled.
    pub fn uniform(domain: &Domain, xi: u8) -> Self {
        Self {
            xi: vec![xi; domain.num_sites()],
            eta: vec![0; domain.num_sites()],
            time: 0.0,
        }
    }

    pub fn check(&self) -> Result<(), Error> {
        if self.xi.len() != self.eta.len() {
            return Err(Error::Precondition("xi and eta differ in length".into()));
        }
        if self.xi.iter().chain(&self.eta).any(|&v| v > 1) {
            return Err(Error::Precondition("fields must be 0/1".into()));
        }
        if self.xi.iter().zip(&self.eta).any(|(&x, &e)| e > x) {
            return Err(Error::Precondition("eta must not exceed xi".into()));
        }
        Ok(())
    }
}

/// Gillespie run from `start` up to time `horizon`. Returns the final
/// configuration and snapshots at each of `sample_times` (ascending, within
/// `[0, horizon]`).
pub fn simulate(
    domain: &Domain,
    family: &ScalingFamily,
    start: &Configuration,
    horizon: f64,
    sample_times: &[f64],
    rng: &mut SimRng,
) -> Result<(Configuration, Vec<Configuration>), Error> {
    start.check()?;
    if start.xi.len() != domain.num_sites() {
        return Err(Error::Precondition("configuration does not match domain".into()));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter("horizon must be finite and nonnegative".into()));
    }
    if sample_times.windows(2).any(|w| w[0] > w[1]) || sample_times.iter().any(|&t| !(0.0..=horizon).contains(&t)) {
        return Err(Error::InvalidParameter("sample times must be ascending within [0, horizon]".into()));
    }
    let r = family.voter_rate;
    let b = family.selection_rate();
    let pairs = domain.num_pairs();
    let total = pairs as f64 * (r + b);
    let exp = Exp::new(total).expect("positive rate");
    let mut c = start.clone();
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut next_sample = 0;
    let mut t = start.time;
    let end = start.time + horizon;
    loop {
        let dt = exp.sample(rng);
        while next_sample < sample_times.len() && start.time + sample_times[next_sample] < t + dt {
            let mut snap = c.clone();
            snap.time = start.time + sample_times[next_sample];
            samples.push(snap);
            next_sample += 1;
        }
        t += dt;
        if t > end {
            break;
        }
        let (source, target) = domain.pair(rng.random_range(0..pairs));
        let kind = if b > 0.0 && rng.random::<f64>() * (r + b) >= r {
            ArrowKind::Selection
        } else {
            ArrowKind::Voter
        };
        apply_arrow(&mut c, &Arrow { time: t, source, target, kind });
        debug_assert!(c.eta[target] <= c.xi[target]);
    }
    while next_sample < sample_times.len() {
        let mut snap = c.clone();
        snap.time = start.time + sample_times[next_sample];
        samples.push(snap);
        next_sample += 1;
    }
    c.time = end;
    Ok((c, samples))
}

/// Per-deme type and label densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    /// Position of each deme, `(k - origin) / L`.
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub ell: Vec<f64>,
    /// Deme spacing `1/L`.
    pub spacing: f64,
}

/// Averages `xi` and `eta` over the cells of each deme. Deme `origin` sits
/// at position 0.
pub fn density_profiles(config: &Configuration, domain: &Domain, family: &ScalingFamily, origin: usize) -> DensityProfile {
    let m = domain.cells;
    let h = family.spacing();
    let mut u = Vec::with_capacity(domain.demes);
    let mut ell = Vec::with_capacity(domain.demes);
    for k in 0..domain.demes {
        let cells = k * m..(k + 1) * m;
        u.push(config.xi[cells.clone()].iter().map(|&v| f64::from(v)).sum::<f64>() / m as f64);
        ell.push(config.eta[cells].iter().map(|&v| f64::from(v)).sum::<f64>() / m as f64);
    }
    DensityProfile {
        grid: (0..domain.demes).map(|k| (k as f64 - origin as f64) * h).collect(),
        u,
        ell,
        spacing: h,
    }
}

impl DensityProfile {
    /// `u` at position `w`, linear between demes and periodic.
    pub fn u_at(&self, w: f64) -> f64 {
        self.interpolate(&self.u, w)
    }

    pub fn ell_at(&self, w: f64) -> f64 {
        self.interpolate(&self.ell, w)
    }

    fn interpolate(&self, f: &[f64], w: f64) -> f64 {
        let n = f.len();
        let x = (w - self.grid[0]) / self.spacing;
        let k = x.floor();
        let frac = x - k;
        let i = (k as i64).rem_euclid(n as i64) as usize;
        let j = (i + 1) % n;
        f[i] * (1.0 - frac) + f[j] * frac
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "w,u,ell")?;
        for k in 0..self.grid.len() {
            writeln!(w, "{},{},{}", self.grid[k], self.u[k], self.ell[k])?;
        }
        Ok(())
    }
}

/// `prod_{a in A} (1 - u(a))` over a multiset of deme indices.
pub fn product_statistic(profile: &DensityProfile, demes: &[usize]) -> f64 {
    demes.iter().map(|&a| 1.0 - profile.u[a]).product()
}
