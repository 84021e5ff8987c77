//! Experiment orchestration: specs, replica fan-out, result records and
//! aggregation.
//!
//! A spec is a small TOML file:
//!
//! ```toml
//! kind = "moment-duality"
//! reps = 100000
//! seed = 7
//!
//! [params]
//! z0 = 0.5
//! n0 = 2
//! ```
//!
//! Every kind has typed parameters with defaults, so `[params]` may be
//! partial or absent. Results are deterministic in `(spec, seed)` for any
//! worker count. Every CSV file written starts with `#` header lines
//! carrying the spec hash and seed; JSON records carry them as fields.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::continuum::{coalescence_ladder, simulate_bbm, BbmParams, CoalescenceRule};
use crate::dual::{product_duality_mc, tracer_duality_mc, DualityEstimates};
use crate::forward::{density_profiles, simulate, Configuration};
use crate::graphical::{check_pathwise, EventLog};
use crate::kernel::{kernel_identities, CompactBump};
use crate::lattice::Domain;
use crate::moment::{check_coupled_duality, check_moment_duality, DualityReport, DualitySettings, DEFAULT_CHAIN_CAP};
use crate::par::map_replicas;
use crate::rng::{self, tag};
use crate::scaling::{LimitParams, ScalingFamily};
use crate::spde::{martingale_residual, run_spde, Mesh, Noise, SpdeField};
use crate::stats::Estimate;
use crate::Error;

/// Experiment kinds, one per CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SimulateForward,
    ReplayDuality,
    DualMc,
    Bbm,
    CoalescenceLadder,
    Spde,
    CoupledSpde,
    MartingaleResidual,
    MomentDuality,
    CoupledDuality,
    KernelCheck,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::SimulateForward,
        Kind::ReplayDuality,
        Kind::DualMc,
        Kind::Bbm,
        Kind::CoalescenceLadder,
        Kind::Spde,
        Kind::CoupledSpde,
        Kind::MartingaleResidual,
        Kind::MomentDuality,
        Kind::CoupledDuality,
        Kind::KernelCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::SimulateForward => "simulate-forward",
            Kind::ReplayDuality => "replay-duality",
            Kind::DualMc => "dual-mc",
            Kind::Bbm => "bbm",
            Kind::CoalescenceLadder => "coalescence-ladder",
            Kind::Spde => "spde",
            Kind::CoupledSpde => "coupled-spde",
            Kind::MartingaleResidual => "martingale-residual",
            Kind::MomentDuality => "moment-duality",
            Kind::CoupledDuality => "coupled-duality",
            Kind::KernelCheck => "kernel-check",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown experiment kind `{s}`")))
    }
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: Kind,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; nothing is written when absent.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub params: toml::Table,
}

fn default_reps() -> usize {
    1000
}

impl ExperimentSpec {
    pub fn new(kind: Kind) -> Self {
        Self { kind, reps: default_reps(), seed: 0, output: None, params: toml::Table::new() }
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, Error> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Checks `reps` and that the parameters parse for this kind.
    pub fn validate(&self) -> Result<(), Error> {
        if self.reps == 0 {
            return Err(Error::InvalidSpec("reps must be at least 1".into()));
        }
        match self.kind {
            Kind::SimulateForward => self.params::<ForwardParams>().map(drop),
            Kind::ReplayDuality => self.params::<ReplayParams>().map(drop),
            Kind::DualMc => self.params::<DualMcParams>().map(drop),
            Kind::Bbm => self.params::<BbmExperiment>().map(drop),
            Kind::CoalescenceLadder => self.params::<LadderParams>().map(drop),
            Kind::Spde | Kind::CoupledSpde => self.params::<SpdeParams>().map(drop),
            Kind::MartingaleResidual => self.params::<ResidualParams>().map(drop),
            Kind::MomentDuality => self.params::<MomentParams>().map(drop),
            Kind::CoupledDuality => self.params::<CoupledParams>().map(drop),
            Kind::KernelCheck => self.params::<KernelParams>().map(drop),
        }
    }

    /// Typed parameters, defaults filled in.
    pub fn params<P: DeserializeOwned>(&self) -> Result<P, Error> {
        toml::Value::Table(self.params.clone())
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidSpec(format!("{}: {}", self.kind, e.message())))
    }

    /// SHA-256 of the canonical JSON form (kind, reps, seed, params; the
    /// output directory is excluded).
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Lattice model settings shared by the particle-system kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeParams {
    pub demes: usize,
    pub cells: usize,
    /// Demes per unit length.
    pub l: u64,
    pub big_r: f64,
    pub r: f64,
    pub theta: f64,
    /// Demes `0..round(demes * ones)` start as type 1.
    pub ones: f64,
    /// Demes `0..round(demes * labeled)` start labeled (needs
    /// `labeled <= ones`).
    pub labeled: f64,
}

impl Default for LatticeParams {
    fn default() -> Self {
        Self { demes: 16, cells: 4, l: 4, big_r: 4.0, r: 1.0, theta: 0.5, ones: 0.5, labeled: 0.25 }
    }
}

impl LatticeParams {
    pub fn domain(&self) -> Result<Domain, Error> {
        Domain::new(self.demes, self.cells)
    }

    pub fn family(&self) -> Result<ScalingFamily, Error> {
        ScalingFamily::new(self.l, self.cells as u64, self.big_r, self.r, self.theta)
    }

    pub fn start(&self) -> Result<Configuration, Error> {
        let d = self.domain()?;
        let ones = (self.demes as f64 * self.ones).round() as usize;
        let labeled = (self.demes as f64 * self.labeled).round() as usize;
        let xi = (0..d.num_sites()).map(|s| u8::from(s / self.cells < ones)).collect();
        let eta = (0..d.num_sites()).map(|s| u8::from(s / self.cells < labeled.min(ones))).collect();
        Configuration::new(xi, eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardParams {
    #[serde(flatten)]
    pub lattice: LatticeParams,
    pub horizon: f64,
    /// Number of equally spaced snapshots written for replica 0.
    pub snapshots: usize,
}

impl Default for ForwardParams {
    fn default() -> Self {
        Self { lattice: LatticeParams::default(), horizon: 2.0, snapshots: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayParams {
    #[serde(flatten)]
    pub lattice: LatticeParams,
    pub horizon: f64,
    /// Random `(A, xi0, eta0)` triples per seed.
    pub cases: usize,
    pub max_roots: usize,
}

impl Default for ReplayParams {
    fn default() -> Self {
        Self { lattice: LatticeParams::default(), horizon: 2.0, cases: 5, max_roots: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualMcParams {
    #[serde(flatten)]
    pub lattice: LatticeParams,
    pub horizon: f64,
    /// Deme multiset for the product moment. Ignored when `zeros` or
    /// `labeled_sites` is nonempty.
    pub product_demes: Vec<usize>,
    /// Sites required to be type 0 (tracer mode).
    pub zeros: Vec<usize>,
    /// Sites required to be labeled (tracer mode).
    pub labeled_sites: Vec<usize>,
}

impl Default for DualMcParams {
    fn default() -> Self {
        Self { lattice: LatticeParams::default(), horizon: 1.0, product_demes: vec![7, 8], zeros: vec![], labeled_sites: vec![] }
    }
}

/// `u0(x) = base + amplitude exp(-x^2 / (2 width^2))`, with labels
/// `ell0 = label_fraction * u0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialProfile {
    pub base: f64,
    pub amplitude: f64,
    pub width: f64,
    pub label_fraction: f64,
}

impl Default for InitialProfile {
    fn default() -> Self {
        Self { base: 0.3, amplitude: 0.4, width: 1.0, label_fraction: 0.5 }
    }
}

impl InitialProfile {
    pub fn u0(&self, x: f64) -> f64 {
        (self.base + self.amplitude * (-x * x / (2.0 * self.width * self.width)).exp()).clamp(0.0, 1.0)
    }

    pub fn ell0(&self, x: f64) -> f64 {
        self.label_fraction.clamp(0.0, 1.0) * self.u0(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BbmExperiment {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
    pub dt: f64,
    pub horizon: f64,
    pub roots: Vec<f64>,
    pub killing_clock: bool,
    pub initial: InitialProfile,
    /// Record live positions every this many steps for replica 0.
    pub record_every: usize,
}

impl Default for BbmExperiment {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.25,
            theta: 1.0,
            dt: 1e-3,
            horizon: 0.5,
            roots: vec![-0.5, 0.5],
            killing_clock: false,
            initial: InitialProfile::default(),
            record_every: 10,
        }
    }
}

impl BbmExperiment {
    pub fn bbm_params(&self) -> Result<BbmParams, Error> {
        let mut p = BbmParams::new(LimitParams::new(self.alpha, self.beta, self.gamma)?, self.theta, self.dt);
        if self.killing_clock {
            p.rule = CoalescenceRule::KillingClock;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderParams {
    pub alpha: f64,
    pub ls: Vec<u64>,
    pub nu: f64,
    pub dt: f64,
}

impl Default for LadderParams {
    fn default() -> Self {
        Self { alpha: 0.05, ls: vec![20, 40, 80], nu: 1.0, dt: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpdeParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
    /// Left end of the periodic domain.
    pub lo: f64,
    pub hi: f64,
    pub dx: f64,
    pub dt: f64,
    pub horizon: f64,
    pub initial: InitialProfile,
}

impl Default for SpdeParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.25,
            theta: 1.0,
            lo: -10.0,
            hi: 10.0,
            dx: 0.1,
            dt: 0.0025,
            horizon: 0.5,
            initial: InitialProfile::default(),
        }
    }
}

impl SpdeParams {
    pub fn limits(&self) -> Result<LimitParams, Error> {
        LimitParams::new(self.alpha, self.beta, self.gamma)
    }

    pub fn mesh(&self) -> Result<Mesh, Error> {
        if !(self.hi > self.lo) || !(self.dx > 0.0) {
            return Err(Error::InvalidParameter("need hi > lo and dx > 0".into()));
        }
        let width = ((self.hi - self.lo) / self.dx).round() as usize;
        let mesh = Mesh::new(self.lo, self.dx, width, self.dt);
        mesh.check(self.alpha)?;
        Ok(mesh)
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn start(&self, coupled: bool) -> Result<SpdeField, Error> {
        let mesh = self.mesh()?;
        let init = self.initial;
        if coupled {
            SpdeField::from_fn(&mesh, |x| init.u0(x), |x| init.ell0(x))
        } else {
            SpdeField::from_fn(&mesh, |x| init.u0(x), |_| 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualParams {
    #[serde(flatten)]
    pub spde: SpdeParams,
    pub phi_center: f64,
    pub phi_half_width: f64,
    /// Solver steps between residual samples.
    pub sample_every: usize,
}

impl Default for ResidualParams {
    fn default() -> Self {
        Self { spde: SpdeParams::default(), phi_center: 0.0, phi_half_width: 2.0, sample_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentParams {
    pub z0: f64,
    pub n0: u64,
    pub beta: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub dt: f64,
    pub cap: u64,
}

impl Default for MomentParams {
    fn default() -> Self {
        Self { z0: 0.5, n0: 2, beta: 1.0, sigma: 1.0, horizon: 0.5, dt: 1e-4, cap: DEFAULT_CHAIN_CAP }
    }
}

impl MomentParams {
    pub fn settings(&self, reps: usize, seed: u64) -> DualitySettings {
        DualitySettings { beta: self.beta, sigma: self.sigma, horizon: self.horizon, dt: self.dt, reps, seed, cap: self.cap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledParams {
    pub k: usize,
    pub z0: f64,
    pub v0: f64,
    pub n0: u64,
    pub beta: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub dt: f64,
    pub cap: u64,
}

impl Default for CoupledParams {
    fn default() -> Self {
        Self { k: 1, z0: 0.4, v0: 0.3, n0: 2, beta: 1.0, sigma: 1.0, horizon: 0.5, dt: 1e-4, cap: DEFAULT_CHAIN_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelParams {
    pub ls: Vec<u64>,
    pub ts: Vec<f64>,
    pub tolerance: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { ls: vec![8, 32], ts: vec![0.01, 0.1, 1.0], tolerance: 1e-12 }
    }
}

/// A named estimate in a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedEstimate {
    pub name: String,
    pub mean: f64,
    /// `None` for a single replica.
    pub se: Option<f64>,
    pub n: usize,
}

impl NamedEstimate {
    pub fn new(name: impl Into<String>, e: Estimate) -> Self {
        Self { name: name.into(), mean: e.mean, se: e.se, n: e.n }
    }

    pub fn exact(name: impl Into<String>, value: f64) -> Self {
        Self { name: name.into(), mean: value, se: None, n: 1 }
    }
}

/// A declared pass/fail criterion and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub criterion: String,
    pub pass: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, criterion: impl Into<String>, pass: bool) -> Self {
        Self { name: name.into(), criterion: criterion.into(), pass }
    }
}

/// Outcome of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub spec_hash: String,
    pub seed: u64,
    pub kind: Kind,
    pub reps: usize,
    pub estimates: Vec<NamedEstimate>,
    pub checks: Vec<Check>,
    /// All checks passed (vacuously true without checks).
    pub pass: bool,
    pub wall_time_s: f64,
    /// Replica `i` draws from streams keyed by `(seed, tag, i)`.
    pub seed_scheme: String,
    pub version: String,
    pub files: Vec<PathBuf>,
}

impl ResultRecord {
    pub fn estimate(&self, name: &str) -> Option<&NamedEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }
}

struct Output<'a> {
    dir: Option<&'a Path>,
    header: String,
    files: Vec<PathBuf>,
}

impl Output<'_> {
    fn csv(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Error> {
        let Some(dir) = self.dir else { return Ok(()) };
        fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        w.write_all(self.header.as_bytes())?;
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }
}

fn duality_estimates(out: &mut Vec<NamedEstimate>, d: &DualityEstimates) {
    out.push(NamedEstimate::new("forward", d.forward));
    out.push(NamedEstimate::new("dual", d.dual));
}

fn report_estimates(out: &mut Vec<NamedEstimate>, r: &DualityReport) {
    out.push(NamedEstimate::new("lhs", r.lhs_estimate()));
    out.push(NamedEstimate::new("rhs", r.rhs_estimate()));
    out.push(NamedEstimate::exact("overflow_count", r.overflow_count as f64));
}

/// Runs `spec` and, when it names an output directory, writes CSV data and
/// `result.json` there.
pub fn run(spec: &ExperimentSpec) -> Result<ResultRecord, Error> {
    spec.validate()?;
    let started = Instant::now();
    let hash = spec.hash();
    let mut out = Output {
        dir: spec.output.as_deref(),
        header: format!("# spec_hash={hash}\n# seed={}\n# kind={}\n", spec.seed, spec.kind),
        files: Vec::new(),
    };
    let (reps, seed) = (spec.reps, spec.seed);
    let mut estimates = Vec::new();
    let mut checks = Vec::new();
    match spec.kind {
        Kind::SimulateForward => {
            let p: ForwardParams = spec.params()?;
            let (d, f, start) = (p.lattice.domain()?, p.lattice.family()?, p.lattice.start()?);
            let times: Vec<f64> = (0..=p.snapshots).map(|k| p.horizon * k as f64 / p.snapshots.max(1) as f64).collect();
            let runs = map_replicas(reps, |i| {
                let mut g = rng::stream(seed, &[tag::FORWARD, i as u64]);
                let sample = if i == 0 { times.as_slice() } else { &[] };
                simulate(&d, &f, &start, p.horizon, sample, &mut g)
            });
            let mut means = Vec::with_capacity(reps);
            let mut labels = Vec::with_capacity(reps);
            for r in &runs {
                let (end, _) = r.as_ref().map_err(|e| Error::Precondition(e.to_string()))?;
                let prof = density_profiles(end, &d, &f, 0);
                means.push(prof.u.iter().sum::<f64>() / d.demes as f64);
                labels.push(prof.ell.iter().sum::<f64>() / d.demes as f64);
            }
            estimates.push(NamedEstimate::new("mean_u", Estimate::from_samples(&means)));
            estimates.push(NamedEstimate::new("mean_ell", Estimate::from_samples(&labels)));
            if let Some(Ok((_, snaps))) = runs.first() {
                out.csv("forward_profiles.csv", |w| {
                    writeln!(w, "t,w,u,ell")?;
                    for s in snaps {
                        let prof = density_profiles(s, &d, &f, 0);
                        for k in 0..d.demes {
                            writeln!(w, "{},{},{},{}", s.time, prof.grid[k], prof.u[k], prof.ell[k])?;
                        }
                    }
                    Ok(())
                })?;
            }
        }
        Kind::ReplayDuality => {
            let p: ReplayParams = spec.params()?;
            let (d, f) = (p.lattice.domain()?, p.lattice.family()?);
            let results = map_replicas(reps, |i| replay_cases(&d, &f, &p, rng::replica_seed(seed, i as u64)));
            let mut type_v = 0;
            let mut label_v = 0;
            let mut cases = 0;
            for r in results {
                let c = r?;
                type_v += c.type_violations;
                label_v += c.label_violations;
                cases += c.cases;
            }
            estimates.push(NamedEstimate::exact("type_violations", type_v as f64));
            estimates.push(NamedEstimate::exact("label_violations", label_v as f64));
            estimates.push(NamedEstimate::exact("cases", cases as f64));
            checks.push(Check::new("pathwise", "zero type and label violations", type_v + label_v == 0));
        }
        Kind::DualMc => {
            let p: DualMcParams = spec.params()?;
            let (d, f, start) = (p.lattice.domain()?, p.lattice.family()?, p.lattice.start()?);
            let est = if p.zeros.is_empty() && p.labeled_sites.is_empty() {
                product_duality_mc(&d, &f, &start, &p.product_demes, p.horizon, reps, seed)?
            } else {
                tracer_duality_mc(&d, &f, &start, &p.zeros, &p.labeled_sites, p.horizon, reps, seed)?
            };
            duality_estimates(&mut estimates, &est);
            checks.push(Check::new("duality", "|forward - dual| <= 3 combined SE", est.agreement(3.0).pass));
        }
        Kind::Bbm => {
            let p: BbmExperiment = spec.params()?;
            let params = p.bbm_params()?;
            let init = p.initial;
            let runs = map_replicas(reps, |i| {
                let mut g = rng::stream(seed, &[tag::BBM, i as u64]);
                let record = if i == 0 { Some(p.record_every.max(1)) } else { None };
                simulate_bbm(&p.roots, &params, p.horizon, &mut g, record)
            });
            let mut live = Vec::with_capacity(reps);
            let mut prod = Vec::with_capacity(reps);
            for r in &runs {
                let (st, _) = r.as_ref().map_err(|e| Error::Precondition(e.to_string()))?;
                live.push(st.num_live() as f64);
                prod.push(st.product(|x| init.u0(x)));
            }
            estimates.push(NamedEstimate::new("live_particles", Estimate::from_samples(&live)));
            estimates.push(NamedEstimate::new("product", Estimate::from_samples(&prod)));
            if let Some(Ok((_, traj))) = runs.first() {
                out.csv("bbm_trajectory.csv", |w| {
                    writeln!(w, "t,particle,x")?;
                    for (t, xs) in traj {
                        for (k, x) in xs.iter().enumerate() {
                            writeln!(w, "{t},{k},{x}")?;
                        }
                    }
                    Ok(())
                })?;
            }
        }
        Kind::CoalescenceLadder => {
            let p: LadderParams = spec.params()?;
            let rep = coalescence_ladder(p.alpha, &p.ls, p.nu, reps, p.dt, seed)?;
            for (l, ks) in rep.ls.iter().zip(&rep.ks) {
                estimates.push(NamedEstimate::exact(format!("ks_L{l}"), *ks));
            }
            estimates.push(NamedEstimate::exact("limit_ks_exact", rep.limit_ks_exact));
            checks.push(Check::new("trend", "KS distance strictly decreasing along the ladder", rep.strictly_decreasing));
            out.csv("ladder.csv", |w| {
                writeln!(w, "L,M,ks,truncated")?;
                for k in 0..rep.ls.len() {
                    writeln!(w, "{},{},{},{}", rep.ls[k], rep.ms[k], rep.ks[k], rep.truncated[k])?;
                }
                Ok(())
            })?;
        }
        Kind::Spde | Kind::CoupledSpde => {
            let coupled = spec.kind == Kind::CoupledSpde;
            let p: SpdeParams = spec.params()?;
            let (mesh, limits, start) = (p.mesh()?, p.limits()?, p.start(coupled)?);
            let runs = map_replicas(reps, |i| {
                let i = i as u64;
                if coupled {
                    let mut gs = [0, 1, 2].map(|k| rng::stream(seed, &[tag::SPDE, i, k]));
                    run_spde(&start, &mesh, &limits, p.theta, p.steps(), None, Noise::Coupled(&mut gs))
                } else {
                    let mut g = rng::stream(seed, &[tag::SPDE, i]);
                    run_spde(&start, &mesh, &limits, p.theta, p.steps(), None, Noise::Single(&mut g))
                }
            });
            let mut m1 = Vec::with_capacity(reps);
            let mut m2 = Vec::with_capacity(reps);
            let mut ml = Vec::with_capacity(reps);
            let mut clamps = 0;
            for r in &runs {
                let run = r.as_ref().map_err(|e| Error::Precondition(e.to_string()))?;
                let f = &run.final_field;
                m1.push(mesh.dx * f.u.iter().sum::<f64>());
                m2.push(mesh.dx * f.u.iter().map(|u| u * u).sum::<f64>());
                ml.push(mesh.dx * f.ell.iter().sum::<f64>());
                clamps += run.clamps;
            }
            estimates.push(NamedEstimate::new("integral_u", Estimate::from_samples(&m1)));
            estimates.push(NamedEstimate::new("integral_u2", Estimate::from_samples(&m2)));
            if coupled {
                estimates.push(NamedEstimate::new("integral_ell", Estimate::from_samples(&ml)));
            }
            estimates.push(NamedEstimate::exact("clamps", clamps as f64));
            if let Some(Ok(run)) = runs.first() {
                out.csv("spde_final.csv", |w| run.final_field.write_csv(&mesh, w))?;
            }
        }
        Kind::MartingaleResidual => {
            let p: ResidualParams = spec.params()?;
            let (mesh, limits, start) = (p.spde.mesh()?, p.spde.limits()?, p.spde.start(false)?);
            let phi = CompactBump { center: p.phi_center, half_width: p.phi_half_width, amplitude: 1.0 };
            let every = p.sample_every.max(1);
            let reports = map_replicas(reps, |i| {
                let mut g = rng::stream(seed, &[tag::SPDE, 1, i as u64]);
                run_spde(&start, &mesh, &limits, p.spde.theta, p.spde.steps(), Some(every), Noise::Single(&mut g))
                    .map(|run| martingale_residual(&run.samples, &mesh, every as f64 * mesh.dt, &phi, &limits, p.spde.theta))
            });
            let mut finals = Vec::with_capacity(reps);
            let (mut realized, mut predicted) = (0.0, 0.0);
            for r in &reports {
                let rep = r.as_ref().map_err(|e| Error::Precondition(e.to_string()))?;
                finals.push(*rep.series.last().unwrap_or(&0.0));
                realized += rep.realized_qv;
                predicted += rep.predicted_qv;
            }
            let m = Estimate::from_samples(&finals);
            let ratio = if predicted > 0.0 { realized / predicted } else { f64::NAN };
            estimates.push(NamedEstimate::new("residual", m));
            estimates.push(NamedEstimate::exact("qv_ratio", ratio));
            checks.push(Check::new("mean", "|mean M_T| <= 3 SE", m.mean.abs() <= 3.0 * m.se_or_zero()));
            checks.push(Check::new("qv", "realized/predicted QV in [0.9, 1.1]", (0.9..=1.1).contains(&ratio)));
        }
        Kind::MomentDuality => {
            let p: MomentParams = spec.params()?;
            let r = check_moment_duality(p.z0, p.n0, &p.settings(reps, seed))?;
            report_estimates(&mut estimates, &r);
            checks.push(Check::new("duality", "|lhs - rhs| <= 3 combined SE", r.pass));
        }
        Kind::CoupledDuality => {
            let p: CoupledParams = spec.params()?;
            let settings = DualitySettings { beta: p.beta, sigma: p.sigma, horizon: p.horizon, dt: p.dt, reps, seed, cap: p.cap };
            let r = check_coupled_duality(p.k, p.z0, p.v0, p.n0, &settings)?;
            report_estimates(&mut estimates, &r);
            checks.push(Check::new("duality", "|lhs - rhs| <= 3 combined SE", r.pass));
        }
        Kind::KernelCheck => {
            let p: KernelParams = spec.params()?;
            let mut rows = Vec::new();
            for &l in &p.ls {
                for &t in &p.ts {
                    let e = kernel_identities(l, t);
                    estimates.push(NamedEstimate::exact(format!("max_error_L{l}_t{t}"), e.max()));
                    rows.push(e);
                }
            }
            let worst = rows.iter().map(|e| e.max()).fold(0.0, f64::max);
            checks.push(Check::new("identities", format!("all errors <= {:e}", p.tolerance), worst <= p.tolerance));
            out.csv("kernel_identities.csv", |w| {
                writeln!(w, "L,t,normalization,symmetry,chapman_kolmogorov")?;
                for e in &rows {
                    writeln!(w, "{},{},{:e},{:e},{:e}", e.l, e.t, e.normalization, e.symmetry, e.chapman_kolmogorov)?;
                }
                Ok(())
            })?;
        }
    }
    let pass = checks.iter().all(|c| c.pass);
    let mut record = ResultRecord {
        spec_hash: hash,
        seed,
        kind: spec.kind,
        reps,
        estimates,
        checks,
        pass,
        wall_time_s: started.elapsed().as_secs_f64(),
        seed_scheme: "replica i uses ChaCha8 streams keyed by (seed, tag, i)".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        files: Vec::new(),
    };
    if let Some(dir) = spec.output.as_deref() {
        fs::create_dir_all(dir)?;
        let path = dir.join("result.json");
        out.files.push(path.clone());
        record.files = out.files;
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &record)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(record)
}

fn replay_cases(d: &Domain, f: &ScalingFamily, p: &ReplayParams, seed: u64) -> Result<crate::graphical::PathwiseCheck, Error> {
    let log = EventLog::generate(d, f, p.horizon, seed)?;
    let mut g = rng::stream(seed, &[tag::HARNESS]);
    let n = d.num_sites();
    let mut total = crate::graphical::PathwiseCheck::default();
    for _ in 0..p.cases {
        let xi: Vec<u8> = (0..n).map(|_| u8::from(g.random::<bool>())).collect();
        let eta: Vec<u8> = xi.iter().map(|&x| x & u8::from(g.random::<bool>())).collect();
        let k = g.random_range(1..=p.max_roots.max(1));
        let roots: Vec<usize> = (0..k).map(|_| g.random_range(0..n)).collect();
        let start = Configuration::new(xi, eta)?;
        let c = check_pathwise(&log, &start, p.horizon, &roots)?;
        total.type_violations += c.type_violations;
        total.label_violations += c.label_violations;
        total.cases += c.cases;
    }
    Ok(total)
}

/// Pooled estimates across records of one kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: Kind,
    pub records: usize,
    pub rows: Vec<NamedEstimate>,
    pub all_pass: bool,
}

/// Pools same-named estimates across records: the mean is weighted by
/// replica count and the SE comes from the pooled sample variance (within
/// plus between batches).
pub fn aggregate(records: &[ResultRecord]) -> Result<Summary, Error> {
    let first = records.first().ok_or_else(|| Error::InvalidSpec("nothing to aggregate".into()))?;
    if records.iter().any(|r| r.kind != first.kind) {
        return Err(Error::InvalidSpec("cannot aggregate records of different kinds".into()));
    }
    let mut rows = Vec::new();
    for e in &first.estimates {
        let parts: Vec<&NamedEstimate> = records.iter().filter_map(|r| r.estimate(&e.name)).collect();
        let total: usize = parts.iter().map(|p| p.n).sum();
        if total == 0 {
            continue;
        }
        let mean = parts.iter().map(|p| p.mean * p.n as f64).sum::<f64>() / total as f64;
        let se = if total > 1 && parts.iter().all(|p| p.se.is_some() || p.n == 1) {
            let ss: f64 = parts
                .iter()
                .map(|p| {
                    let within = p.se.map_or(0.0, |s| s * s * p.n as f64 * (p.n as f64 - 1.0));
                    within + p.n as f64 * (p.mean - mean).powi(2)
                })
                .sum();
            Some((ss / (total as f64 - 1.0) / total as f64).sqrt())
        } else {
            None
        };
        rows.push(NamedEstimate { name: e.name.clone(), mean, se, n: total });
    }
    Ok(Summary { kind: first.kind, records: records.len(), rows, all_pass: records.iter().all(|r| r.pass) })
}

impl Summary {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# kind={}\n# records={}", self.kind, self.records)?;
        writeln!(w, "name,mean,se,n")?;
        for r in &self.rows {
            let se = r.se.map_or(String::new(), |s| s.to_string());
            writeln!(w, "{},{},{},{}", r.name, r.mean, se, r.n)?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<(), Error> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}
