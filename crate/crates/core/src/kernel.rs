//! Lattice heat kernel and the test functions used by the residual checks.
//!
//! `p_t(w) = L P(X_t = w)` where `X` is the walk on `(1/L) Z` jumping
//! `+-1/L` at total rate `2 L^2`. The jump count by time `t` is Poisson
//! with mean `lambda = 2 L^2 t`; the kernel is the Poisson mixture of
//! simple-random-walk laws, summed over a window of `lambda +- 12 sqrt(lambda)`
//! (plus a margin) with the Poisson weights renormalised on that window.

use serde::{Deserialize, Serialize};

/// Poisson weights on `[lo, hi]`, built outward from the mode and
/// renormalised to sum to 1.
fn poisson_window(lambda: f64) -> (usize, Vec<f64>) {
    if lambda == 0.0 {
        return (0, vec![1.0]);
    }
    let spread = 12.0 * lambda.sqrt() + 40.0;
    let lo = (lambda - spread).floor().max(0.0) as usize;
    let hi = (lambda + spread).ceil() as usize;
    let mode = (lambda.floor() as usize).clamp(lo, hi);
    let mut w = vec![0.0; hi - lo + 1];
    w[mode - lo] = 1.0;
    for n in mode + 1..=hi {
        w[n - lo] = w[n - 1 - lo] * lambda / n as f64;
    }
    for n in (lo..mode).rev() {
        w[n - lo] = w[n + 1 - lo] * (n + 1) as f64 / lambda;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    (lo, w)
}

/// The law of `L X_t` on the integers, cached for one `(L, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernel {
    pub l: u64,
    pub t: f64,
    /// `probs[k + reach] = P(L X_t = k)` for `|k| <= reach`.
    probs: Vec<f64>,
    reach: usize,
}

impl HeatKernel {
    pub fn new(l: u64, t: f64) -> Self {
        assert!(t >= 0.0 && t.is_finite(), "heat kernel needs finite t >= 0");
        let lf = l as f64;
        let (lo, weights) = poisson_window(2.0 * lf * lf * t);
        let reach = lo + weights.len() - 1;
        let width = 2 * reach + 1;
        // Pascal recursion: walk[j] = P(S_n = j - reach) after n steps
        let mut walk = vec![0.0; width];
        let mut next = vec![0.0; width];
        walk[reach] = 1.0;
        let mut probs = vec![0.0; width];
        for n in 0..=reach {
            if n >= lo {
                let w = weights[n - lo];
                let span = reach - n..=reach + n;
                for j in span.step_by(2) {
                    probs[j] += w * walk[j];
                }
            }
            if n == reach {
                break;
            }
            let lo_j = reach - n;
            let hi_j = reach + n;
            next[lo_j.saturating_sub(1)..=(hi_j + 1).min(width - 1)].fill(0.0);
            for j in (lo_j..=hi_j).step_by(2) {
                let half = 0.5 * walk[j];
                next[j - 1] += half;
                next[j + 1] += half;
            }
            std::mem::swap(&mut walk, &mut next);
        }
        Self { l, t, probs, reach }
    }

    /// `P(L X_t = k)`.
    pub fn prob(&self, k: i64) -> f64 {
        let i = k + self.reach as i64;
        if i < 0 || i as usize >= self.probs.len() {
            0.0
        } else {
            self.probs[i as usize]
        }
    }

    /// `p_t(w)` for `w` on the lattice `(1/L) Z` (rounded to the nearest
    /// site).
    pub fn value(&self, w: f64) -> f64 {
        let k = (w * self.l as f64).round() as i64;
        self.l as f64 * self.prob(k)
    }

    /// Largest `|k|` with nonzero mass.
    pub fn reach(&self) -> usize {
        self.reach
    }

    /// Kernel folded onto a ring of `period` sites: entry `k` is
    /// `L sum_m P(L X_t = k + m period)`.
    pub fn wrapped(&self, period: usize) -> Vec<f64> {
        let mut out = vec![0.0; period];
        for (i, &p) in self.probs.iter().enumerate() {
            let k = i as i64 - self.reach as i64;
            out[k.rem_euclid(period as i64) as usize] += p;
        }
        let lf = self.l as f64;
        out.iter_mut().for_each(|x| *x *= lf);
        out
    }
}

/// Largest deviations in the kernel identities at one `(L, t)`, measured
/// on the probabilities `P(L X_t = k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelIdentityErrors {
    pub l: u64,
    pub t: f64,
    /// `|sum_k P(k) - 1|`.
    pub normalization: f64,
    /// `max_k |P(k) - P(-k)|`.
    pub symmetry: f64,
    /// `max_k |P_t(k) - sum_j P_{t/2}(j) P_{t/2}(k - j)|`.
    pub chapman_kolmogorov: f64,
}

impl KernelIdentityErrors {
    pub fn max(&self) -> f64 {
        self.normalization.max(self.symmetry).max(self.chapman_kolmogorov)
    }
}

/// Checks normalization, symmetry and the semigroup identity at `(l, t)`.
pub fn kernel_identities(l: u64, t: f64) -> KernelIdentityErrors {
    let full = HeatKernel::new(l, t);
    let half = HeatKernel::new(l, t / 2.0);
    let normalization = (full.probs.iter().sum::<f64>() - 1.0).abs();
    let r = full.reach as i64;
    let symmetry = (0..=r).map(|k| (full.prob(k) - full.prob(-k)).abs()).fold(0.0, f64::max);
    let h = half.reach as i64;
    let mut conv = vec![0.0; (4 * h + 1) as usize];
    for (i, &a) in half.probs.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (j, &b) in half.probs.iter().enumerate() {
            conv[i + j] += a * b;
        }
    }
    let reach = r.max(2 * h);
    let chapman_kolmogorov = (-reach..=reach)
        .map(|k| {
            let c = if k.abs() <= 2 * h { conv[(k + 2 * h) as usize] } else { 0.0 };
            (full.prob(k) - c).abs()
        })
        .fold(0.0, f64::max);
    KernelIdentityErrors { l, t, normalization, symmetry, chapman_kolmogorov }
}

/// `p_t(w)` for one point. Prefer [`HeatKernel`] for repeated use.
pub fn heat_kernel(l: u64, t: f64, w: f64) -> f64 {
    HeatKernel::new(l, t).value(w)
}

/// A test function `phi_s(x)` with the derivatives the martingale residual
/// needs.
pub trait TestFunction: Sync {
    fn value(&self, s: f64, x: f64) -> f64;
    fn time_derivative(&self, s: f64, x: f64) -> f64;
    fn laplacian(&self, s: f64, x: f64) -> f64;
}

/// `phi(x) = amplitude (1 - q)^3` for `q = ((x - center)/half_width)^2 < 1`,
/// zero outside; constant in time, `C^2` with compact support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactBump {
    pub center: f64,
    pub half_width: f64,
    pub amplitude: f64,
}

impl TestFunction for CompactBump {
    fn value(&self, _s: f64, x: f64) -> f64 {
        let q = ((x - self.center) / self.half_width).powi(2);
        if q >= 1.0 {
            0.0
        } else {
            self.amplitude * (1.0 - q).powi(3)
        }
    }

    fn time_derivative(&self, _s: f64, _x: f64) -> f64 {
        0.0
    }

    fn laplacian(&self, _s: f64, x: f64) -> f64 {
        let a2 = self.half_width * self.half_width;
        let q = (x - self.center).powi(2) / a2;
        if q >= 1.0 {
            return 0.0;
        }
        let dq = 2.0 * (x - self.center) / a2;
        let ddq = 2.0 / a2;
        self.amplitude * (6.0 * (1.0 - q) * dq * dq - 3.0 * (1.0 - q).powi(2) * ddq)
    }
}

/// `phi_s(w) = p_{alpha (t - s)}(w - z)` on a ring of `period` demes with
/// spacing `1/L`, for `s <= t`. Time and space derivatives are the lattice
/// ones, so `d/ds phi + alpha Delta_L phi = 0` holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTestFunction {
    pub l: u64,
    pub alpha: f64,
    pub t: f64,
    pub z_index: usize,
    pub period: usize,
}

impl KernelTestFunction {
    /// Values `phi_s(w_k)` for every deme `k` of the ring.
    pub fn values(&self, s: f64) -> Vec<f64> {
        let kern = HeatKernel::new(self.l, self.alpha * (self.t - s).max(0.0)).wrapped(self.period);
        (0..self.period)
            .map(|k| kern[(k + self.period - self.z_index) % self.period])
            .collect()
    }

    /// Lattice Laplacian `L^2 (f(w + 1/L) + f(w - 1/L) - 2 f(w))` of
    /// [`values`](Self::values).
    pub fn laplacian_values(&self, s: f64) -> Vec<f64> {
        lattice_laplacian(&self.values(s), 1.0 / self.l as f64)
    }
}

/// Periodic second difference `(f[k+1] + f[k-1] - 2 f[k]) / h^2`.
pub fn lattice_laplacian(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let inv = 1.0 / (h * h);
    (0..n)
        .map(|k| (f[(k + 1) % n] + f[(k + n - 1) % n] - 2.0 * f[k]) * inv)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_zero_is_a_point_mass() {
        let k = HeatKernel::new(8, 0.0);
        assert_eq!(k.value(0.0), 8.0);
        assert_eq!(k.value(0.125), 0.0);
    }

    #[test]
    fn poisson_window_is_normalised() {
        for lambda in [0.5, 3.0, 128.0, 2048.0] {
            let (_, w) = poisson_window(lambda);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn bump_laplacian_matches_finite_difference() {
        let b = CompactBump { center: 0.3, half_width: 1.5, amplitude: 2.0 };
        let h = 1e-4;
        for x in [-1.0, 0.0, 0.3, 1.2, 1.79] {
            let fd = (b.value(0.0, x + h) + b.value(0.0, x - h) - 2.0 * b.value(0.0, x)) / (h * h);
            assert!((fd - b.laplacian(0.0, x)).abs() < 1e-5, "x={x}");
        }
        assert_eq!(b.value(0.0, 2.0), 0.0);
        assert_eq!(b.laplacian(0.0, -1.3), 0.0);
    }

    #[test]
    fn kernel_test_function_solves_backward_equation() {
        let f = KernelTestFunction { l: 4, alpha: 0.5, t: 1.0, z_index: 10, period: 24 };
        let s = 0.4;
        let h = 1e-5;
        let lap = f.laplacian_values(s);
        let up = f.values(s + h);
        let dn = f.values(s - h);
        for k in 0..24 {
            let ds = (up[k] - dn[k]) / (2.0 * h);
            assert!((ds + 0.5 * lap[k]).abs() < 1e-6, "k={k}");
        }
    }

    #[test]
    fn identities_hold_on_a_small_case() {
        let e = kernel_identities(4, 0.3);
        assert!(e.max() < 1e-13, "{e:?}");
    }

    #[test]
    fn wrapped_kernel_keeps_mass() {
        let k = HeatKernel::new(4, 2.0);
        let w = k.wrapped(10);
        assert!((w.iter().sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
    }
}
