//! Continuum dual: branching Brownian motion whose pairs coalesce through
//! local time, and the two-particle coalescence-time experiments.
//!
//! Particles diffuse with variance `2 alpha t`, branch at rate
//! `2 theta beta` (the offspring starts at the parent's position and takes the
//! parent's place in every ordered view), and a pair coalesces once the
//! local time at 0 of its separation exceeds an `Exp(1)` threshold scaled by
//! `alpha / gamma`. The separation has quadratic variation `4 alpha t`, so
//! its local time is `4 alpha` times the occupation density, which is what
//! the band estimator measures.

use rand::Rng;
use rand_distr::{Distribution, Exp, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::rng::{self, tag, SimRng};
use crate::scaling::LimitParams;
use crate::Error;

/// Hard cap on the limit-law clock, in time units.
pub const LIMIT_LAW_CAP: f64 = 1e4;

/// Band half-width used when none is given: `4 sqrt(dt)`.
pub fn default_band(dt: f64) -> f64 {
    4.0 * dt.sqrt()
}

/// `(1/(2 eps)) * sum_k 1{|diff_k| <= eps} * dt`: occupation density at 0
/// of a path sampled every `dt`.
pub fn local_time_band(path_diff: &[f64], eps: f64, dt: f64) -> f64 {
    let hits = path_diff.iter().filter(|d| d.abs() <= eps).count();
    hits as f64 * dt / (2.0 * eps)
}

/// How a pair decides to coalesce once its local time clock runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoalescenceRule {
    /// Coalesce when local time first exceeds `alpha tau / gamma`.
    #[default]
    Threshold,
    /// Kill the pair at hazard `4 gamma` per unit occupation density,
    /// sampled step by step. Same law as `Threshold` in the limit.
    KillingClock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbmParams {
    pub limits: LimitParams,
    pub theta: f64,
    pub dt: f64,
    /// Band half-width; `None` means [`default_band`].
    pub eps: Option<f64>,
    pub rule: CoalescenceRule,
}

impl BbmParams {
    pub fn new(limits: LimitParams, theta: f64, dt: f64) -> Self {
        Self { limits, theta, dt, eps: None, rule: CoalescenceRule::Threshold }
    }

    pub fn band(&self) -> f64 {
        self.eps.unwrap_or_else(|| default_band(self.dt))
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.limits.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.theta >= 0.0) {
            return Err(Error::InvalidParameter("theta must be nonnegative".into()));
        }
        if !(self.band() > 0.0) {
            return Err(Error::InvalidParameter("band half-width must be positive".into()));
        }
        Ok(())
    }
}

/// Local-time clock of one unordered pair of live particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairClock {
    pub a: usize,
    pub b: usize,
    /// Accumulated local time at 0 of `x_b - x_a`.
    pub local_time: f64,
    /// Coalescence level `alpha tau / gamma` (infinite when `gamma = 0`).
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbmState {
    /// Position of every particle ever created, indexed by particle id.
    pub positions: Vec<f64>,
    pub alive: Vec<bool>,
    /// One ordered list of particle ids per root.
    pub views: Vec<Vec<usize>>,
    pub pairs: Vec<PairClock>,
    pub time: f64,
    pub births: usize,
    pub coalescences: usize,
}

impl BbmState {
    pub fn new(roots: &[f64]) -> Self {
        Self {
            positions: roots.to_vec(),
            alive: vec![true; roots.len()],
            views: (0..roots.len()).map(|i| vec![i]).collect(),
            pairs: Vec::new(),
            time: 0.0,
            births: 0,
            coalescences: 0,
        }
    }

    /// All roots in one ordered view, in the given order.
    pub fn single_view(roots: &[f64]) -> Self {
        Self { views: vec![(0..roots.len()).collect()], ..Self::new(roots) }
    }

    pub fn live_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.positions.len()).filter(|&i| self.alive[i])
    }

    pub fn live_positions(&self) -> Vec<f64> {
        self.live_ids().map(|i| self.positions[i]).collect()
    }

    pub fn num_live(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    /// Positions of root `k`'s view, in ancestry order.
    pub fn view_positions(&self, k: usize) -> Vec<f64> {
        self.views[k].iter().map(|&i| self.positions[i]).collect()
    }

    /// `prod over live particles of (1 - u0(x))`.
    pub fn product(&self, u0: impl Fn(f64) -> f64) -> f64 {
        self.live_ids().map(|i| 1.0 - u0(self.positions[i])).product()
    }
}

fn new_threshold(limits: &LimitParams, rule: CoalescenceRule, rng: &mut SimRng) -> f64 {
    if limits.gamma == 0.0 {
        return f64::INFINITY;
    }
    match rule {
        CoalescenceRule::Threshold => {
            let tau: f64 = Exp1.sample(rng);
            limits.alpha * tau / limits.gamma
        }
        CoalescenceRule::KillingClock => f64::INFINITY,
    }
}

/// Merges particle `drop` into `keep`. In a view holding both, the one with
/// the lower index stays (relabelled `keep`); in a view holding one, that
/// entry becomes `keep`.
fn merge(state: &mut BbmState, keep: usize, drop: usize) {
    for v in &mut state.views {
        let pk = v.iter().position(|&i| i == keep);
        let pd = v.iter().position(|&i| i == drop);
        match (pk, pd) {
            (Some(k), Some(d)) => {
                if d < k {
                    v[d] = keep;
                    v.remove(k);
                } else {
                    v.remove(d);
                }
            }
            (None, Some(d)) => v[d] = keep,
            _ => {}
        }
    }
    state.alive[drop] = false;
    state.pairs.retain(|p| p.a != drop && p.b != drop);
    state.coalescences += 1;
}

/// Advances the state by one step of size `params.dt`.
pub fn step_bbm(state: &mut BbmState, params: &BbmParams, rng: &mut SimRng) {
    let dt = params.dt;
    let eps = params.band();
    let a = params.limits.alpha;
    let sd = (2.0 * a * dt).sqrt();
    for i in 0..state.positions.len() {
        if state.alive[i] {
            let z: f64 = StandardNormal.sample(rng);
            state.positions[i] += sd * z;
        }
    }
    if params.limits.gamma > 0.0 {
        // occupation density increment for a pair in the band
        let d_occ = dt / (2.0 * eps);
        let mut k = 0;
        while k < state.pairs.len() {
            let p = state.pairs[k];
            if (state.positions[p.b] - state.positions[p.a]).abs() <= eps {
                state.pairs[k].local_time += 4.0 * a * d_occ;
                let hit = match params.rule {
                    CoalescenceRule::Threshold => state.pairs[k].local_time > p.threshold,
                    CoalescenceRule::KillingClock => {
                        rng.random::<f64>() < 1.0 - (-4.0 * params.limits.gamma * d_occ).exp()
                    }
                };
                if hit {
                    // merge drops every pair involving p.b; resume the scan
                    // at the first surviving pair after this one
                    let before = state.pairs[..k].iter().filter(|q| q.a == p.b || q.b == p.b).count();
                    merge(state, p.a, p.b);
                    k -= before;
                    continue;
                }
            }
            k += 1;
        }
    }
    let rate = 2.0 * params.theta * params.limits.beta;
    if rate > 0.0 {
        let p_birth = 1.0 - (-rate * dt).exp();
        let n = state.positions.len();
        for i in 0..n {
            if state.alive[i] && rng.random::<f64>() < p_birth {
                let child = state.positions.len();
                state.positions.push(state.positions[i]);
                state.alive.push(true);
                for v in &mut state.views {
                    if let Some(pi) = v.iter().position(|&j| j == i) {
                        v.insert(pi, child);
                    }
                }
                for j in 0..child {
                    if state.alive[j] {
                        let threshold = new_threshold(&params.limits, params.rule, rng);
                        state.pairs.push(PairClock { a: j, b: child, local_time: 0.0, threshold });
                    }
                }
                state.births += 1;
            }
        }
    }
    state.time += dt;
}

/// Runs the BBM from `roots` to time `horizon`. Pairs among distinct roots
/// get their thresholds first, in order. Optionally records live positions
/// every `record_every` steps.
pub fn simulate_bbm(
    roots: &[f64],
    params: &BbmParams,
    horizon: f64,
    rng: &mut SimRng,
    record_every: Option<usize>,
) -> Result<(BbmState, Vec<(f64, Vec<f64>)>), Error> {
    run_bbm(BbmState::new(roots), params, horizon, rng, record_every)
}

/// Like [`simulate_bbm`] but with every root in a single ordered view, as
/// the label functionals need.
pub fn simulate_bbm_ordered(
    roots: &[f64],
    params: &BbmParams,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<BbmState, Error> {
    Ok(run_bbm(BbmState::single_view(roots), params, horizon, rng, None)?.0)
}

fn run_bbm(
    mut state: BbmState,
    params: &BbmParams,
    horizon: f64,
    rng: &mut SimRng,
    record_every: Option<usize>,
) -> Result<(BbmState, Vec<(f64, Vec<f64>)>), Error> {
    params.validate()?;
    let roots = state.positions.clone();
    if roots.is_empty() {
        return Err(Error::Precondition("BBM needs at least one particle".into()));
    }
    for b in 0..roots.len() {
        for a in 0..b {
            let threshold = new_threshold(&params.limits, params.rule, rng);
            state.pairs.push(PairClock { a, b, local_time: 0.0, threshold });
        }
    }
    let steps = (horizon / params.dt).round() as usize;
    let mut traj = Vec::new();
    if record_every.is_some() {
        traj.push((0.0, state.live_positions()));
    }
    for k in 1..=steps {
        step_bbm(&mut state, params, rng);
        if let Some(every) = record_every {
            if k % every.max(1) == 0 {
                traj.push((state.time, state.live_positions()));
            }
        }
    }
    Ok((state, traj))
}

/// Time until two particles started `separation` apart first coalesce
/// (`None` if not by `horizon`). Uses no branching.
pub fn pair_coalescence_time(
    separation: f64,
    params: &BbmParams,
    horizon: f64,
    rng: &mut SimRng,
) -> Result<Option<f64>, Error> {
    let p = BbmParams { theta: 0.0, ..*params };
    p.validate()?;
    let mut state = BbmState::new(&[0.0, separation]);
    let threshold = new_threshold(&p.limits, p.rule, rng);
    state.pairs.push(PairClock { a: 0, b: 1, local_time: 0.0, threshold });
    let steps = (horizon / p.dt).round() as usize;
    for _ in 0..steps {
        step_bbm(&mut state, &p, rng);
        if state.coalescences > 0 {
            return Ok(Some(state.time));
        }
    }
    Ok(None)
}

/// Local time at 0 of a continuous-time walk on `(1/L) Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeRecord {
    /// `(4 r M / L) * (time spent at 0)`.
    pub v: f64,
    /// Number of arrivals at 0.
    pub n: u64,
    pub t: f64,
    /// Final position in lattice units.
    pub position: i64,
}

/// Walk jumping `+-1/L` at rate `2 r M` each way (total `4 r M`), started at
/// `start` (lattice units), run to time `t`.
pub fn walk_local_time(l: u64, m: u64, r: f64, start: i64, t: f64, rng: &mut SimRng) -> LocalTimeRecord {
    let rate = 4.0 * r * m as f64;
    let exp = Exp::new(rate).expect("positive rate");
    let mut s = 0.0;
    let mut x = start;
    let mut occ = 0.0;
    let mut n = 0;
    loop {
        let h = exp.sample(rng);
        if x == 0 {
            occ += h.min(t - s);
        }
        s += h;
        if s > t {
            break;
        }
        x += if rng.random::<bool>() { 1 } else { -1 };
        if x == 0 {
            n += 1;
        }
    }
    LocalTimeRecord { v: rate / l as f64 * occ, n, t, position: x }
}

// ---------------------------------------------------------------------------
// Two-particle coalescence time at finite L and its limit law.

/// Saddle-point deviance `x ln(x/np) + np - x`, accurate for `x` near `np`.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        let v2 = v * v;
        let mut j = 1;
        loop {
            ej *= v2;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
            j += 1;
        }
    }
    x * (x / np).ln() + np - x
}

/// `ln(n!) - ((n + 1/2) ln n - n + ln(2 pi)/2)`.
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        let lg = statrs::function::gamma::ln_gamma(n + 1.0);
        return lg - (n + 0.5) * n.ln() + n - 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// `P(B = k)` for `B ~ Bin(n, 1/2)`.
fn binom_half_pmf(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    if k == 0 || k == n {
        return (-(n as f64) * std::f64::consts::LN_2).exp();
    }
    let (nf, kf) = (n as f64, k as f64);
    let half = nf / 2.0;
    let lc = stirlerr(nf) - stirlerr(kf) - stirlerr(nf - kf) - bd0(kf, half) - bd0(nf - kf, half);
    lc.exp() * (nf / (2.0 * std::f64::consts::PI * kf * (nf - kf))).sqrt()
}

/// `P(B >= k)` for `B ~ Bin(n, 1/2)` with `k > n/2`, summed upward.
fn binom_half_upper(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut term = binom_half_pmf(n, k);
    let mut sum = 0.0;
    let mut j = k;
    while term > 0.0 {
        sum += term;
        if j == n || term < sum * 1e-17 {
            break;
        }
        term *= (n - j) as f64 / (j + 1) as f64;
        j += 1;
    }
    sum
}

/// `P(T_d <= n)` for the first passage of a simple random walk from `d`
/// to 0, `n >= d`, `n - d` even: `2 P(B >= k) - P(B = k)` with
/// `k = (n + d)/2`, by reflection.
pub fn passage_cdf(d: u64, n: u64) -> f64 {
    debug_assert!(n >= d && (n - d) % 2 == 0);
    if d == 0 {
        return 1.0;
    }
    let k = (n + d) / 2;
    (2.0 * binom_half_upper(n, k) - binom_half_pmf(n, k)).clamp(0.0, 1.0)
}

/// Smallest step count `n` with `P(T_d <= n) >= u`, or `None` if that
/// exceeds `cap` steps.
pub fn passage_quantile(d: u64, u: f64, cap: u64) -> Option<u64> {
    if d == 0 {
        return Some(0);
    }
    // search over n = d + 2 m
    let cdf = |m: u64| passage_cdf(d, d + 2 * m);
    if cdf(0) >= u {
        return Some(d);
    }
    let max_m = cap.saturating_sub(d) / 2;
    // Brownian guess d^2 / Z^2 as a starting bracket
    let z = Normal::standard().inverse_cdf(1.0 - u / 2.0);
    let guess = ((d as f64 / z).powi(2) / 2.0).clamp(1.0, max_m.max(1) as f64) as u64;
    let (mut lo, mut hi) = (0u64, guess.max(1));
    if cdf(hi) < u {
        lo = hi;
        loop {
            if hi >= max_m {
                return None;
            }
            hi = (hi * 2).min(max_m);
            if cdf(hi) >= u {
                break;
            }
            lo = hi;
        }
    } else {
        let half = hi / 2;
        if half > 0 && cdf(half) < u {
            lo = half;
        }
    }
    // invariant: cdf(lo) < u <= cdf(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if cdf(mid) >= u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(d + 2 * hi)
}

/// Per-sample inputs shared by the discrete experiment and the limit law
/// under the same seed: the mark `tau` and the first-passage uniform.
fn shared_inputs(seed: u64, index: usize) -> (f64, f64, SimRng) {
    let mut g = rng::stream(seed, &[tag::COALESCENCE, index as u64]);
    let tau: f64 = Exp1.sample(&mut g);
    let u: f64 = g.random_range(f64::EPSILON..1.0);
    (tau, u, g)
}

/// Rescaled coalescence times with censoring accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceSamples {
    /// Censored samples are `+inf`.
    pub samples: Vec<f64>,
    pub truncated: usize,
}

/// One rescaled coalescence time `2 nu t0 / L^2` for two lineages `L`
/// apart. The difference walk jumps `+-1` at total rate `2 nu` and each
/// arrival at 0 coalesces with probability `1/M`.
///
/// Sampled exactly: if coalescence happens on visit `G` (geometric), the
/// jump count is `T_L + (G - 1) + T_{G-1}` where `T_d` is a first-passage
/// step count (each return to 0 is one step out plus a passage from 1),
/// and `t0` is a gamma time with that many exponential gaps.
pub fn coalescence_time_sample(l: u64, m: u64, nu: f64, seed: u64, index: usize) -> f64 {
    let (tau, u1, mut g) = shared_inputs(seed, index);
    let lf = l as f64;
    let cap = (LIMIT_LAW_CAP * lf * lf).min(u64::MAX as f64 / 4.0) as u64;
    let visits = if m == 1 {
        1
    } else {
        let c = -(-1.0 / m as f64).ln_1p();
        ((tau / c).ceil() as u64).max(1)
    };
    let Some(first) = passage_quantile(l, u1, cap) else {
        return f64::INFINITY;
    };
    let u2: f64 = g.random_range(f64::EPSILON..1.0);
    let Some(rest) = passage_quantile(visits - 1, u2, cap) else {
        return f64::INFINITY;
    };
    let jumps = first + (visits - 1) + rest;
    if jumps as f64 > cap as f64 {
        return f64::INFINITY;
    }
    let t0 = Gamma::new(jumps as f64, 1.0 / (2.0 * nu)).expect("positive shape").sample(&mut g);
    let x = 2.0 * nu * t0 / (lf * lf);
    if x > LIMIT_LAW_CAP {
        f64::INFINITY
    } else {
        x
    }
}

/// `n_reps` samples of [`coalescence_time_sample`].
pub fn coalescence_time_experiment(l: u64, m: u64, nu: f64, n_reps: usize, seed: u64) -> Result<CoalescenceSamples, Error> {
    if l == 0 || m == 0 || !(nu > 0.0) {
        return Err(Error::InvalidParameter("L, M and nu must be positive".into()));
    }
    let samples = crate::par::map_replicas(n_reps, |i| coalescence_time_sample(l, m, nu, seed, i));
    let truncated = samples.iter().filter(|x| x.is_infinite()).count();
    Ok(CoalescenceSamples { samples, truncated })
}

/// Step-by-step version of [`coalescence_time_sample`] for validation.
pub fn coalescence_time_direct(l: u64, m: u64, nu: f64, rng: &mut SimRng) -> f64 {
    let mut x = l as i64;
    let mut jumps: u64 = 0;
    loop {
        x += if rng.random::<bool>() { 1 } else { -1 };
        jumps += 1;
        if x == 0 && rng.random_range(0..m) == 0 {
            break;
        }
    }
    let t0 = Gamma::new(jumps as f64, 1.0 / (2.0 * nu)).expect("positive shape").sample(rng);
    2.0 * nu * t0 / (l * l) as f64
}

/// One draw of `inf{t : l_t > alpha tau}` for standard Brownian motion from
/// 1, where `l` is the band estimate of local time at 0.
///
/// The hitting time of 0 is drawn exactly (`1/Z^2`) from the shared
/// first-passage uniform. After that the path is stepped with Euler
/// increments while it is within `2 eps` of 0; once it leaves, the return
/// time to the band edge is drawn exactly. Returns `+inf` past the cap.
pub fn limit_law_sample(alpha: f64, dt: f64, eps: f64, seed: u64, index: usize) -> f64 {
    let (tau, u1, _) = shared_inputs(seed, index);
    let z = Normal::standard().inverse_cdf(1.0 - u1 / 2.0);
    let mut t = 1.0 / (z * z);
    let level = alpha * tau;
    if t > LIMIT_LAW_CAP {
        return f64::INFINITY;
    }
    if level <= 0.0 {
        return t;
    }
    let mut g = rng::stream(seed, &[tag::LIMIT_LAW, index as u64]);
    let edge = 2.0 * eps;
    let sd = dt.sqrt();
    let d_occ = dt / (2.0 * eps);
    let mut x = 0.0f64;
    let mut ell = 0.0;
    loop {
        if x.abs() > edge {
            let z: f64 = StandardNormal.sample(&mut g);
            t += ((x.abs() - edge) / z).powi(2);
            x = edge.copysign(x);
        } else {
            let z: f64 = StandardNormal.sample(&mut g);
            x += sd * z;
            t += dt;
            if x.abs() <= eps {
                ell += d_occ;
                if ell > level {
                    return t;
                }
            }
        }
        if t > LIMIT_LAW_CAP {
            return f64::INFINITY;
        }
    }
}

/// `n_reps` draws of [`limit_law_sample`] with the default band.
pub fn sample_limit_law(alpha: f64, n_reps: usize, dt: f64, seed: u64) -> Result<CoalescenceSamples, Error> {
    if !(alpha >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter("alpha must be >= 0 and dt > 0".into()));
    }
    let eps = default_band(dt);
    let samples = crate::par::map_replicas(n_reps, |i| limit_law_sample(alpha, dt, eps, seed, i));
    let truncated = samples.iter().filter(|x| x.is_infinite()).count();
    Ok(CoalescenceSamples { samples, truncated })
}

/// KS distances from each rung of the coalescence-time ladder to the limit
/// law, all from one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub alpha: f64,
    pub ls: Vec<u64>,
    pub ms: Vec<u64>,
    pub ks: Vec<f64>,
    pub truncated: Vec<usize>,
    pub limit_truncated: usize,
    /// KS distance of the limit sample to the exact limit CDF.
    pub limit_ks_exact: f64,
    pub strictly_decreasing: bool,
}

/// Exact CDF of the limit law: `E erfc((1 + alpha tau) / sqrt(2 t))` over
/// `tau ~ Exp(1)`, by midpoint quadrature over the exponential's quantiles.
pub fn limit_law_cdf(alpha: f64, t: f64) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    let n = 2000;
    let mut total = 0.0;
    for k in 0..n {
        let q = (k as f64 + 0.5) / n as f64;
        let tau = -(1.0 - q).ln();
        total += statrs::function::erf::erfc((1.0 + alpha * tau) / (2.0 * t).sqrt());
    }
    total / n as f64
}

/// Runs every rung `L` with `M = alpha L / nu` cells and compares each with
/// one limit-law sample under the same seed.
pub fn coalescence_ladder(alpha: f64, ls: &[u64], nu: f64, n_reps: usize, dt: f64, seed: u64) -> Result<LadderReport, Error> {
    if ls.is_empty() || n_reps == 0 {
        return Err(Error::InvalidParameter("ladder needs rungs and samples".into()));
    }
    let limit = sample_limit_law(alpha, n_reps, dt, seed)?;
    let mut ms = Vec::new();
    let mut ks = Vec::new();
    let mut truncated = Vec::new();
    for &l in ls {
        let m = (alpha * l as f64 / nu).round().max(1.0) as u64;
        let rung = coalescence_time_experiment(l, m, nu, n_reps, seed)?;
        ms.push(m);
        ks.push(crate::stats::ks_two_sample(&rung.samples, &limit.samples));
        truncated.push(rung.truncated);
    }
    let limit_ks_exact = crate::stats::ks_one_sample(&limit.samples, |t| limit_law_cdf(alpha, t));
    let strictly_decreasing = ks.windows(2).all(|w| w[1] < w[0]);
    Ok(LadderReport {
        alpha,
        ls: ls.to_vec(),
        ms,
        ks,
        truncated,
        limit_truncated: limit.truncated,
        limit_ks_exact,
        strictly_decreasing,
    })
}
