//! Monte Carlo summaries and the handful of tests the duality checks use.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean with its standard error. `se` is `None` for a single
/// observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: Option<f64>,
    pub n: usize,
}

impl Estimate {
    /// Mean and SE (sample standard deviation over sqrt(n)).
    ///
    /// Panics on an empty slice.
    pub fn from_samples(xs: &[f64]) -> Self {
        assert!(!xs.is_empty(), "estimate of an empty sample");
        let mut acc = Welford::default();
        for &x in xs {
            acc.push(x);
        }
        acc.estimate()
    }

    pub fn exact(value: f64) -> Self {
        Self { mean: value, se: Some(0.0), n: 0 }
    }

    pub fn se_or_zero(&self) -> f64 {
        self.se.unwrap_or(0.0)
    }
}

/// Streaming mean/variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sample_variance(&self) -> Option<f64> {
        (self.n > 1).then(|| self.m2 / (self.n - 1) as f64)
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean,
            se: self.sample_variance().map(|v| (v / self.n as f64).sqrt()),
            n: self.n,
        }
    }
}

/// Combined standard error of the difference of two independent estimates.
pub fn combined_se(a: &Estimate, b: &Estimate) -> f64 {
    a.se_or_zero().hypot(b.se_or_zero())
}

/// Result of comparing two estimates at `k` combined standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub difference: f64,
    pub combined_se: f64,
    /// |difference| / combined_se; infinite when the SE is zero and the
    /// estimates differ.
    pub z: f64,
    pub pass: bool,
}

/// Passes iff |a - b| <= max(k * combined SE, slack).
pub fn agree_within(a: &Estimate, b: &Estimate, k: f64, slack: f64) -> Agreement {
    let difference = a.mean - b.mean;
    let se = combined_se(a, b);
    let z = if se > 0.0 {
        difference.abs() / se
    } else if difference == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Agreement {
        difference,
        combined_se: se,
        z,
        pass: difference.abs() <= (k * se).max(slack),
    }
}

/// Two-sample Kolmogorov–Smirnov distance. Non-finite values (censored
/// samples) count in the sample size but never fall below any finite
/// threshold, which is the right treatment when both samples are censored
/// at the same cap.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS of an empty sample");
    let sorted = |xs: &[f64]| {
        let mut v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < sa.len() && sa[i] <= next {
            i += 1;
        }
        while j < sb.len() && sb[j] <= next {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// One-sample KS distance against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = if x.is_finite() { cdf(x) } else { 1.0 };
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Pearson chi-square test of homogeneity for two count vectors over the
/// same categories. Categories empty in both samples are dropped. Returns
/// (statistic, degrees of freedom, p-value).
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> (f64, usize, f64) {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let total = (na + nb) as f64;
    let mut stat = 0.0;
    let mut cats = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cats += 1;
        let ea = col * na as f64 / total;
        let eb = col * nb as f64 / total;
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    let dof = cats.saturating_sub(1).max(1);
    let p = 1.0 - ChiSquared::new(dof as f64).expect("dof > 0").cdf(stat);
    (stat, dof, p)
}
