//! Harris graphical representation.
//!
//! An [`EventLog`] holds every arrow on `[0, T]`: voter arrows at rate `r`
//! and selection arrows at rate `theta/R` on each directed neighbor pair.
//! Replaying it forward in time gives the configuration; reading it
//! backward from time `t` gives the ordered dual. Both readings of one log
//! are pathwise coupled, which is what the duality checks rely on.

use std::io::Write;

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::dual::{DualSnapshot, JointDual};
use crate::forward::Configuration;
use crate::lattice::Domain;
use crate::rng::{self, tag};
use crate::scaling::ScalingFamily;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrowKind {
    /// The target copies the source unconditionally.
    Voter,
    /// The target copies the source only if the source has type 1.
    Selection,
}

/// Arrow from `source` to `target` at `time`; sites are domain indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    pub time: f64,
    pub source: usize,
    pub target: usize,
    pub kind: ArrowKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub horizon: f64,
    pub domain: Domain,
    /// Sorted by (time, source, target, kind).
    pub arrows: Vec<Arrow>,
    pub seed: u64,
}

fn arrow_order(a: &Arrow, b: &Arrow) -> std::cmp::Ordering {
    a.time
        .total_cmp(&b.time)
        .then(a.source.cmp(&b.source))
        .then(a.target.cmp(&b.target))
        .then(a.kind.cmp(&b.kind))
}

/// Poisson arrival times on `[0, horizon]` at `rate`, appended as arrows.
fn push_poisson(out: &mut Vec<Arrow>, rate: f64, horizon: f64, rng: &mut rng::SimRng, src: usize, dst: usize, kind: ArrowKind) {
    if rate <= 0.0 {
        return;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = exp.sample(rng);
    while t <= horizon {
        out.push(Arrow { time: t, source: src, target: dst, kind });
        t += exp.sample(rng);
    }
}

impl EventLog {
    /// Draws all arrows on `[0, horizon]`. Each (pair, kind) has its own
    /// random stream, so the log does not depend on generation order.
    pub fn generate(domain: &Domain, family: &ScalingFamily, horizon: f64, seed: u64) -> Result<Self, Error> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!("horizon must be positive and finite, got {horizon}")));
        }
        let domain = Domain::new(domain.demes, domain.cells)?;
        family.validate()?;
        let mut arrows = Vec::new();
        for p in 0..domain.num_pairs() {
            let (src, dst) = domain.pair(p);
            let mut g = rng::stream(seed, &[tag::EVENT_LOG, 0, p as u64]);
            push_poisson(&mut arrows, family.voter_rate, horizon, &mut g, src, dst, ArrowKind::Voter);
            let mut g = rng::stream(seed, &[tag::EVENT_LOG, 1, p as u64]);
            push_poisson(&mut arrows, family.selection_rate(), horizon, &mut g, src, dst, ArrowKind::Selection);
        }
        arrows.sort_by(arrow_order);
        Ok(Self { horizon, domain, arrows, seed })
    }

    /// Builds a log from explicit arrows (sorted on the way in).
    pub fn from_arrows(domain: Domain, horizon: f64, mut arrows: Vec<Arrow>) -> Result<Self, Error> {
        for a in &arrows {
            if a.source == a.target || !domain.adjacent(domain.site(a.source), domain.site(a.target)) {
                return Err(Error::Precondition(format!("arrow {a:?} does not join neighbors")));
            }
            if !(0.0..=horizon).contains(&a.time) {
                return Err(Error::Precondition(format!("arrow time {} outside [0, {horizon}]", a.time)));
            }
        }
        arrows.sort_by(arrow_order);
        Ok(Self { horizon, domain, arrows, seed: 0 })
    }

    pub fn count(&self, kind: ArrowKind) -> usize {
        self.arrows.iter().filter(|a| a.kind == kind).count()
    }

    /// Applies every arrow with time `<= t` to `start`.
    pub fn replay_forward(&self, start: &Configuration, t: f64) -> Result<Configuration, Error> {
        self.check_time(t)?;
        start.check()?;
        let mut c = start.clone();
        for a in self.arrows.iter().take_while(|a| a.time <= t) {
            apply_arrow(&mut c, a);
            debug_assert!(c.xi[a.target] >= c.eta[a.target]);
        }
        c.time = t;
        Ok(c)
    }

    /// Reads the log backward from time `t`, starting one ordered list per
    /// root. A voter arrow `y -> x` makes a particle at `x` jump to `y`; a
    /// selection arrow makes it give birth at `y`. Returns the final dual
    /// and, if `record` is set, every state with its dual time `t - time`.
    pub fn replay_dual(&self, t: f64, roots: &[usize], record: bool) -> Result<(JointDual, Vec<DualSnapshot>), Error> {
        self.check_time(t)?;
        let mut dual = JointDual::new(roots)?;
        let mut traj = Vec::new();
        if record {
            traj.push(DualSnapshot { s: 0.0, views: dual.views.clone() });
        }
        let end = self.arrows.partition_point(|a| a.time <= t);
        for a in self.arrows[..end].iter().rev() {
            if !dual.occupied(a.target) {
                continue;
            }
            match a.kind {
                ArrowKind::Voter => dual.jump(a.target, a.source),
                ArrowKind::Selection => dual.birth(a.target, a.source),
            }
            if record {
                traj.push(DualSnapshot { s: t - a.time, views: dual.views.clone() });
            }
        }
        Ok((dual, traj))
    }

    fn check_time(&self, t: f64) -> Result<(), Error> {
        if !(t >= 0.0) || t > self.horizon {
            return Err(Error::BeyondHorizon { requested: t, horizon: self.horizon });
        }
        Ok(())
    }

    /// Debug dump: `time,src_deme,src_cell,dst_deme,dst_cell,kind`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time,src_deme,src_cell,dst_deme,dst_cell,kind")?;
        for a in &self.arrows {
            let s = self.domain.site(a.source);
            let d = self.domain.site(a.target);
            let kind = match a.kind {
                ArrowKind::Voter => "voter",
                ArrowKind::Selection => "selection",
            };
            writeln!(w, "{},{},{},{},{},{}", a.time, s.deme, s.cell, d.deme, d.cell, kind)?;
        }
        Ok(())
    }
}

/// The target imitates the source (selection only from type-1 sources).
#[inline]
pub fn apply_arrow(c: &mut Configuration, a: &Arrow) {
    if a.kind == ArrowKind::Voter || c.xi[a.source] == 1 {
        c.xi[a.target] = c.xi[a.source];
        c.eta[a.target] = c.eta[a.source];
    }
}

/// Outcome of comparing forward replay with dual replay on one log.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathwiseCheck {
    /// Cases where "some site of A is 1 at time t" disagreed with "some
    /// site of the union dual is 1 at time 0".
    pub type_violations: usize,
    /// Roots whose label at time t disagreed with the label of the first
    /// occupied site in their ordered dual.
    pub label_violations: usize,
    pub cases: usize,
}

/// Checks both pathwise dualities for one log, one initial configuration
/// and one root set.
pub fn check_pathwise(log: &EventLog, start: &Configuration, t: f64, roots: &[usize]) -> Result<PathwiseCheck, Error> {
    let end = log.replay_forward(start, t)?;
    let (dual, _) = log.replay_dual(t, roots, false)?;
    let mut out = PathwiseCheck { cases: 1, ..Default::default() };
    let fwd = roots.iter().any(|&z| end.xi[z] == 1);
    let bwd = dual.union.iter().any(|&y| start.xi[y] == 1);
    if fwd != bwd {
        out.type_violations += 1;
    }
    for (view, &z) in dual.views.iter().zip(roots) {
        let g = crate::dual::eval_g(view, &start.xi, &start.eta);
        let f = crate::dual::eval_f(view, &start.xi);
        if f64::from(end.eta[z]) != g || f64::from(end.xi[z]) != 1.0 - f {
            out.label_violations += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::OrderedDual;

    fn family(r: f64, theta: f64, big_r: f64) -> ScalingFamily {
        ScalingFamily::new(1, 1, big_r, r, theta).unwrap()
    }

    #[test]
    fn neutral_log_has_no_selection_arrows() {
        let d = Domain::new(6, 2).unwrap();
        let log = EventLog::generate(&d, &family(1.0, 0.0, 1.0), 5.0, 3).unwrap();
        assert_eq!(log.count(ArrowKind::Selection), 0);
        assert!(log.count(ArrowKind::Voter) > 0);
    }

    #[test]
    fn generation_is_deterministic_and_sorted() {
        let d = Domain::new(5, 3).unwrap();
        let f = family(1.0, 0.5, 2.0);
        let a = EventLog::generate(&d, &f, 3.0, 42).unwrap();
        let b = EventLog::generate(&d, &f, 3.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.arrows.windows(2).all(|w| arrow_order(&w[0], &w[1]).is_le()));
        assert_ne!(a, EventLog::generate(&d, &f, 3.0, 43).unwrap());
    }

    #[test]
    fn rejects_bad_horizon_and_domain() {
        let f = family(1.0, 0.0, 1.0);
        assert!(EventLog::generate(&Domain { demes: 4, cells: 1 }, &f, 0.0, 0).is_err());
        assert!(EventLog::generate(&Domain { demes: 4, cells: 1 }, &f, f64::NAN, 0).is_err());
        assert!(EventLog::generate(&Domain { demes: 1, cells: 1 }, &f, 1.0, 0).is_err());
        let log = EventLog::generate(&Domain { demes: 4, cells: 1 }, &f, 1.0, 0).unwrap();
        assert!(log.replay_dual(2.0, &[0], false).is_err());
    }

    #[test]
    fn empty_log_is_identity() {
        let d = Domain::new(4, 2).unwrap();
        let log = EventLog::from_arrows(d, 1.0, vec![]).unwrap();
        let c = Configuration::new(vec![1, 0, 1, 1, 0, 0, 1, 0], vec![1, 0, 0, 1, 0, 0, 0, 0]).unwrap();
        assert_eq!(log.replay_forward(&c, 1.0).unwrap().xi, c.xi);
        let (dual, _) = log.replay_dual(1.0, &[2, 5], false).unwrap();
        assert_eq!(dual.views, vec![OrderedDual::new(2), OrderedDual::new(5)]);
    }

    #[test]
    fn single_voter_arrow() {
        let d = Domain::new(3, 1).unwrap();
        let log = EventLog::from_arrows(
            d,
            1.0,
            vec![Arrow { time: 0.5, source: 1, target: 0, kind: ArrowKind::Voter }],
        )
        .unwrap();
        let c = Configuration::new(vec![0, 1, 0], vec![0, 0, 0]).unwrap();
        assert_eq!(log.replay_forward(&c, 1.0).unwrap().xi, [1, 1, 0]);
    }

    #[test]
    fn selection_birth_inserts_before_parent() {
        let d = Domain::new(3, 1).unwrap();
        let log = EventLog::from_arrows(
            d,
            1.0,
            vec![Arrow { time: 0.5, source: 1, target: 0, kind: ArrowKind::Selection }],
        )
        .unwrap();
        let (dual, _) = log.replay_dual(1.0, &[0], false).unwrap();
        assert_eq!(dual.views[0].sites, [1, 0]);
    }

    /// The worked example: sites are the integers -2..=3 on a ring of 8
    /// one-cell demes (coordinate c lives at deme c + 4). Arrows are listed
    /// in the order the dual meets them, so real times decrease.
    #[test]
    fn worked_example_sequence() {
        let d = Domain::new(8, 1).unwrap();
        let at = |c: i64| (c + 4) as usize;
        use ArrowKind::*;
        // (source, target, kind): the dual particle sits at the target
        let events = [
            (0, 1, Selection),
            (2, 1, Voter),
            (-1, 0, Voter),
            (3, 2, Selection),
            (0, -1, Selection),
            (1, 0, Voter),
            (1, 2, Voter),
            (-2, -1, Selection),
        ];
        let arrows = events
            .iter()
            .enumerate()
            .map(|(k, &(s, t, kind))| Arrow { time: 9.0 - k as f64, source: at(s), target: at(t), kind })
            .collect();
        let log = EventLog::from_arrows(d, 10.0, arrows).unwrap();
        let (dual, traj) = log.replay_dual(10.0, &[at(1)], true).unwrap();
        let expected: Vec<Vec<i64>> = vec![
            vec![1],
            vec![0, 1],
            vec![0, 2],
            vec![-1, 2],
            vec![-1, 3, 2],
            vec![0, -1, 3, 2],
            vec![1, -1, 3, 2],
            vec![1, -1, 3],
            vec![1, -2, -1, 3],
        ];
        let got: Vec<Vec<i64>> = traj
            .iter()
            .map(|s| s.views[0].sites.iter().map(|&y| y as i64 - 4).collect())
            .collect();
        assert_eq!(got, expected);
        let mut fin: Vec<i64> = dual.union.iter().map(|&y| y as i64 - 4).collect();
        fin.sort();
        assert_eq!(fin, [-2, -1, 1, 3]);

        // ancestor is 1 if xi0(1) = 1; -2 if xi0(1) = 0 and xi0(-2) = 1
        let mut xi = vec![0u8; 8];
        let mut eta = vec![0u8; 8];
        xi[at(1)] = 1;
        eta[at(1)] = 1;
        assert_eq!(crate::dual::eval_g(&dual.views[0], &xi, &eta), 1.0);
        xi[at(1)] = 0;
        eta[at(1)] = 0;
        xi[at(-2)] = 1;
        eta[at(-2)] = 1;
        xi[at(-1)] = 1;
        assert_eq!(crate::dual::eval_g(&dual.views[0], &xi, &eta), 1.0);
        assert_eq!(crate::dual::eval_f(&dual.views[0], &xi), 0.0);
    }

    #[test]
    fn all_ones_is_absorbing() {
        let d = Domain::new(4, 2).unwrap();
        let log = EventLog::generate(&d, &family(1.0, 2.0, 1.0), 4.0, 9).unwrap();
        let c = Configuration::new(vec![1; 8], vec![1; 8]).unwrap();
        let out = log.replay_forward(&c, 4.0).unwrap();
        assert!(out.xi.iter().chain(&out.eta).all(|&v| v == 1));
    }

    #[test]
    fn csv_dump_has_one_row_per_arrow() {
        let d = Domain::new(4, 1).unwrap();
        let log = EventLog::generate(&d, &family(1.0, 1.0, 1.0), 2.0, 5).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), log.arrows.len() + 1);
    }
}
