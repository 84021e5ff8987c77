//! Monte Carlo laboratory for the spatial biased voter model with tracer
//! labels and its duals.
//!
//! The crate covers the lattice model ([`graphical`], [`forward`]), its
//! ordered branching–coalescing dual ([`dual`]), the continuum limit of the
//! dual ([`continuum`]), finite-difference solvers for the limiting
//! stochastic PDEs ([`spde`], [`kernel`]), scalar moment dualities
//! ([`moment`]) and an experiment harness ([`harness`]). Duality identities
//! connect these pieces and double as correctness checks.

pub mod continuum;
pub mod dual;
pub mod forward;
pub mod graphical;
pub mod harness;
pub mod kernel;
pub mod lattice;
pub mod moment;
pub mod par;
pub mod rng;
pub mod scaling;
pub mod spde;
pub mod stats;

pub use scaling::{DerivedRatios, LimitParams, Regime, ScalingFamily};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain too small: {0}")]
    DomainTooSmall(String),
    #[error("time {requested} exceeds log horizon {horizon}")]
    BeyondHorizon { requested: f64, horizon: f64 },
    #[error("stale particle index {index} (dual has {len} particles)")]
    StaleIndex { index: usize, len: usize },
    #[error("unstable mesh: dt = {dt} exceeds dx^2/(4 alpha) = {limit}")]
    Unstable { dt: f64, limit: f64 },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
