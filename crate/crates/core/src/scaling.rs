//! Parameter sequences of the lattice model and their diffusive limits.

use serde::{Deserialize, Serialize};

use crate::Error;

/// Default cutoff on `gamma_n` below which a family counts as deterministic.
pub const DEFAULT_REGIME_TOL: f64 = 1e-6;

/// One member of a scaling sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFamily {
    /// Demes per unit length (`L`); deme spacing is `1/L`.
    pub demes_per_unit: u64,
    /// Cells per deme (`M`).
    pub cells_per_deme: u64,
    /// Selection scale (`R`); selection arrows fire at rate `theta / R`.
    pub selection_scale: f64,
    /// Voter rate per directed neighbor pair (`r`).
    pub voter_rate: f64,
    /// Selection strength.
    pub theta: f64,
}

/// Limit coefficients of the density SPDE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Finite-n versions of the limit coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedRatios {
    /// `r M / L^2`
    pub alpha_n: f64,
    /// `M / R`
    pub beta_n: f64,
    /// `r / L`
    pub gamma_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Stochastic,
    Deterministic,
}

impl ScalingFamily {
    pub fn new(
        demes_per_unit: u64,
        cells_per_deme: u64,
        selection_scale: f64,
        voter_rate: f64,
        theta: f64,
    ) -> Result<Self, Error> {
        let family = Self {
            demes_per_unit,
            cells_per_deme,
            selection_scale,
            voter_rate,
            theta,
        };
        family.validate()?;
        Ok(family)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.demes_per_unit == 0 || self.cells_per_deme == 0 {
            return Err(Error::InvalidParameter("L and M must be positive".into()));
        }
        if !(self.selection_scale > 0.0 && self.selection_scale.is_finite()) {
            return Err(Error::InvalidParameter("R must be positive and finite".into()));
        }
        if !(self.voter_rate > 0.0 && self.voter_rate.is_finite()) {
            return Err(Error::InvalidParameter("r must be positive and finite".into()));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::InvalidParameter("theta must be nonnegative".into()));
        }
        Ok(())
    }

    /// Power-law family with `r = n^(1/a)`, `L = n^(1/b)` (rounded),
    /// `M = ceil(alpha n^(2/b - 1/a))` and `R = M / beta`. The noise ratio
    /// `r/L = n^(1/a - 1/b)` goes to zero when `a > b`, and `M` grows when
    /// `2a > b`.
    pub fn power_law(n: f64, a: f64, b: f64, alpha: f64, beta: f64, theta: f64) -> Result<Self, Error> {
        if !(n >= 1.0 && a > 0.0 && b > 0.0 && alpha > 0.0 && beta > 0.0) {
            return Err(Error::InvalidParameter("power-law family needs n >= 1 and positive a, b, alpha, beta".into()));
        }
        let r = n.powf(1.0 / a);
        let l = n.powf(1.0 / b).round().max(1.0) as u64;
        let m = (alpha * n.powf(2.0 / b - 1.0 / a)).ceil().max(1.0) as u64;
        Self::new(l, m, m as f64 / beta, r, theta)
    }

    /// Spacing between adjacent demes, `1/L`.
    pub fn spacing(&self) -> f64 {
        1.0 / self.demes_per_unit as f64
    }

    /// Selection arrow rate per directed neighbor pair, `theta / R`.
    pub fn selection_rate(&self) -> f64 {
        self.theta / self.selection_scale
    }

    pub fn derived_ratios(&self) -> DerivedRatios {
        let l = self.demes_per_unit as f64;
        let m = self.cells_per_deme as f64;
        DerivedRatios {
            alpha_n: self.voter_rate * m / (l * l),
            beta_n: m / self.selection_scale,
            gamma_n: self.voter_rate / l,
        }
    }
}

impl DerivedRatios {
    pub fn as_limits(&self) -> LimitParams {
        LimitParams {
            alpha: self.alpha_n,
            beta: self.beta_n,
            gamma: self.gamma_n,
        }
    }
}

impl LimitParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, Error> {
        let p = Self { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite() && self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter("beta and gamma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Deterministic iff `gamma_n < tol`.
pub fn classify_regime(ratios: &DerivedRatios, tol: f64) -> Result<Regime, Error> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("regime tolerance must be positive".into()));
    }
    Ok(if ratios.gamma_n < tol {
        Regime::Deterministic
    } else {
        Regime::Stochastic
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_root_family_has_unit_ratios() {
        for k in [4u64, 16, 32, 100] {
            let f = ScalingFamily::new(k, k, k as f64, k as f64, 1.0).unwrap();
            let d = f.derived_ratios();
            assert_eq!((d.alpha_n, d.beta_n, d.gamma_n), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn huge_selection_scale_is_neutral() {
        let f = ScalingFamily::new(10, 100, 1e9, 1.0, 1.0).unwrap();
        assert!((f.derived_ratios().beta_n - 1e-7).abs() < 1e-20);
    }

    #[test]
    fn power_law_noise_vanishes_when_a_exceeds_b() {
        let g: Vec<f64> = [256.0, 4096.0, 65536.0]
            .iter()
            .map(|&n| ScalingFamily::power_law(n, 1.5, 1.0, 1.0, 1.0, 1.0).unwrap().derived_ratios().gamma_n)
            .collect();
        assert!(g[0] > g[1] && g[1] > g[2]);
        let f = ScalingFamily::power_law(4096.0, 1.5, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(f.demes_per_unit, 4096);
        assert!((f.derived_ratios().gamma_n - 1.0 / 16.0).abs() < 1e-12);
        assert!((f.derived_ratios().alpha_n - 1.0).abs() < 1e-3);
    }

    #[test]
    fn power_law_noise_grows_when_b_exceeds_a() {
        let f = ScalingFamily::power_law(4096.0, 1.0, 1.5, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(f.demes_per_unit, 256);
        assert_eq!(f.cells_per_deme, 16);
        assert_eq!(f.derived_ratios().gamma_n, 16.0);
    }

    #[test]
    fn regime_threshold() {
        let mk = |g| DerivedRatios { alpha_n: 1.0, beta_n: 1.0, gamma_n: g };
        assert_eq!(classify_regime(&mk(1.0), DEFAULT_REGIME_TOL).unwrap(), Regime::Stochastic);
        assert_eq!(classify_regime(&mk(0.0), DEFAULT_REGIME_TOL).unwrap(), Regime::Deterministic);
        assert_eq!(classify_regime(&mk(1e-6), 1e-3).unwrap(), Regime::Deterministic);
        assert!(classify_regime(&mk(1.0), 0.0).is_err());
    }

    #[test]
    fn rejects_bad_fields() {
        assert!(ScalingFamily::new(0, 1, 1.0, 1.0, 0.0).is_err());
        assert!(ScalingFamily::new(1, 1, 1.0, 1.0, -1.0).is_err());
        assert!(LimitParams::new(0.0, 1.0, 1.0).is_err());
    }
}
