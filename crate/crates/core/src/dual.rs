//! Ordered branching–coalescing dual.
//!
//! Each dual particle list is kept in ancestry order: the first site in the
//! list whose initial type is 1 is the true ancestor. Three rules keep the
//! order consistent:
//!
//! * a jump without collision moves the particle and keeps its index;
//! * a jump onto an occupied site keeps the lower of the two indices at the
//!   landing site and drops the other;
//! * a birth by particle `i` puts the offspring at index `i` and shifts every
//!   index `>= i` up by one. If the offspring lands on an occupied site the
//!   higher of the two entries for that site is dropped.
//!
//! A multi-root dual keeps one physical particle set and one ordered view
//! per root. An event at site `x` acts on every view that contains `x`.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::forward::{simulate, Configuration};
use crate::lattice::{Domain, Site};
use crate::par::map_replicas;
use crate::rng::{self, tag, SimRng};
use crate::scaling::ScalingFamily;
use crate::stats::{agree_within, Agreement, Estimate};
use crate::Error;

/// Dual event addressed by particle index within one ordered list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualEvent {
    /// Particle `index` moves to site `to`.
    Jump { index: usize, to: usize },
    /// Particle `index` places an offspring on site `to`.
    Birth { index: usize, to: usize },
}

/// One ordered dual list (index 0 is the first candidate ancestor).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OrderedDual {
    pub sites: Vec<usize>,
}

impl OrderedDual {
    pub fn new(root: usize) -> Self {
        Self { sites: vec![root] }
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn position(&self, site: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == site)
    }

    /// Applies one event under the ordering rules.
    pub fn apply_order_rules(&mut self, event: DualEvent) -> Result<(), Error> {
        let len = self.sites.len();
        match event {
            DualEvent::Jump { index, to } => {
                if index >= len {
                    return Err(Error::StaleIndex { index, len });
                }
                match self.position(to) {
                    None => self.sites[index] = to,
                    Some(j) if j == index => {}
                    Some(j) if j < index => {
                        self.sites.remove(index);
                    }
                    Some(j) => {
                        self.sites[index] = to;
                        self.sites.remove(j);
                    }
                }
            }
            DualEvent::Birth { index, to } => {
                if index >= len {
                    return Err(Error::StaleIndex { index, len });
                }
                match self.position(to) {
                    // the occupant already outranks the offspring
                    Some(j) if j < index => {}
                    Some(j) => {
                        self.sites.remove(j);
                        self.sites.insert(index, to);
                    }
                    None => self.sites.insert(index, to),
                }
            }
        }
        Ok(())
    }

    /// Site-addressed jump: moves the particle at `from`, if any.
    pub fn jump_site(&mut self, from: usize, to: usize) {
        if let Some(i) = self.position(from) {
            self.apply_order_rules(DualEvent::Jump { index: i, to })
                .expect("index from position() is live");
        }
    }

    /// Site-addressed birth from the particle at `from`, if any.
    pub fn birth_site(&mut self, from: usize, to: usize) {
        if let Some(i) = self.position(from) {
            self.apply_order_rules(DualEvent::Birth { index: i, to })
                .expect("index from position() is live");
        }
    }
}

/// `F = prod_i (1 - xi0(y_i))`.
pub fn eval_f(dual: &OrderedDual, xi0: &[u8]) -> f64 {
    if dual.sites.iter().any(|&y| xi0[y] != 0) {
        0.0
    } else {
        1.0
    }
}

/// `G = sum_j eta0(y_j) prod_{i<j} (1 - xi0(y_i))`: the label of the first
/// occupied site in the list, or 0 if none is occupied.
pub fn eval_g(dual: &OrderedDual, xi0: &[u8], eta0: &[u8]) -> f64 {
    match dual.sites.iter().find(|&&y| xi0[y] != 0) {
        Some(&y) => f64::from(eta0[y]),
        None => 0.0,
    }
}

/// `F` and `G` for real-valued fields, by the defining sums.
pub fn eval_f_real(dual: &OrderedDual, u0: impl Fn(usize) -> f64) -> f64 {
    dual.sites.iter().map(|&y| 1.0 - u0(y)).product()
}

pub fn eval_g_real(dual: &OrderedDual, u0: impl Fn(usize) -> f64, l0: impl Fn(usize) -> f64) -> f64 {
    let mut prefix = 1.0;
    let mut g = 0.0;
    for &y in &dual.sites {
        g += l0(y) * prefix;
        prefix *= 1.0 - u0(y);
    }
    g
}

/// Several ordered views over one physical particle set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointDual {
    pub views: Vec<OrderedDual>,
    /// Distinct occupied sites (union of all views), unordered.
    pub union: Vec<usize>,
}

impl JointDual {
    /// One view per entry of `roots`; repeated roots share a particle.
    pub fn new(roots: &[usize]) -> Result<Self, Error> {
        if roots.is_empty() {
            return Err(Error::Precondition("dual needs at least one root".into()));
        }
        let mut union = Vec::new();
        for &r in roots {
            if !union.contains(&r) {
                union.push(r);
            }
        }
        Ok(Self {
            views: roots.iter().map(|&r| OrderedDual::new(r)).collect(),
            union,
        })
    }

    pub fn occupied(&self, site: usize) -> bool {
        self.union.contains(&site)
    }

    /// The particle at `from` jumps to `to`. No-op if `from` is empty.
    pub fn jump(&mut self, from: usize, to: usize) {
        let Some(k) = self.union.iter().position(|&s| s == from) else {
            return;
        };
        for v in &mut self.views {
            v.jump_site(from, to);
        }
        self.union.swap_remove(k);
        if !self.union.contains(&to) {
            self.union.push(to);
        }
    }

    /// The particle at `from` gives birth onto `to`. No-op if `from` is
    /// empty.
    pub fn birth(&mut self, from: usize, to: usize) {
        if !self.occupied(from) {
            return;
        }
        for v in &mut self.views {
            v.birth_site(from, to);
        }
        if !self.union.contains(&to) {
            self.union.push(to);
        }
    }

    /// The union as a sorted list.
    pub fn union_sorted(&self) -> Vec<usize> {
        let mut u = self.union.clone();
        u.sort_unstable();
        u
    }
}

/// Snapshot of a dual at dual time `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSnapshot {
    pub s: f64,
    pub views: Vec<OrderedDual>,
}

/// Writes a trajectory as CSV rows `s,root,index,deme,cell`.
pub fn write_trajectory_csv<W: Write>(mut w: W, domain: &Domain, traj: &[DualSnapshot]) -> std::io::Result<()> {
    writeln!(w, "s,root,index,deme,cell")?;
    for snap in traj {
        for (root, view) in snap.views.iter().enumerate() {
            for (i, &y) in view.sites.iter().enumerate() {
                let site = domain.site(y);
                writeln!(w, "{},{},{},{},{}", snap.s, root, i, site.deme, site.cell)?;
            }
        }
    }
    Ok(())
}

/// Runs the dual in its own time with its own randomness.
///
/// Every particle jumps to each of its `2M` in-neighbors at rate `r` and
/// gives birth onto each at rate `theta/R`. Returns the dual at `s_max`,
/// plus every intermediate state when `record` is set.
pub fn simulate_dual(
    domain: &Domain,
    roots: &[usize],
    family: &ScalingFamily,
    s_max: f64,
    rng: &mut SimRng,
    record: bool,
) -> Result<(JointDual, Vec<DualSnapshot>), Error> {
    if !(s_max >= 0.0 && s_max.is_finite()) {
        return Err(Error::InvalidParameter("s_max must be finite and nonnegative".into()));
    }
    let mut dual = JointDual::new(roots)?;
    let m = domain.cells;
    let r = family.voter_rate;
    let b = family.selection_rate();
    let per_particle = 2.0 * m as f64 * (r + b);
    let mut traj = Vec::new();
    if record {
        traj.push(DualSnapshot { s: 0.0, views: dual.views.clone() });
    }
    let mut s = 0.0;
    loop {
        let total = per_particle * dual.union.len() as f64;
        s += Exp::new(total).expect("positive rate").sample(rng);
        if s > s_max {
            break;
        }
        let x = dual.union[rng.random_range(0..dual.union.len())];
        let slot = rng.random_range(0..2 * m);
        let (y, _) = domain.pair(x * 2 * m + slot);
        if rng.random::<f64>() * (r + b) < r {
            dual.jump(x, y);
        } else {
            dual.birth(x, y);
        }
        if record {
            traj.push(DualSnapshot { s, views: dual.views.clone() });
        }
    }
    Ok((dual, traj))
}

/// Forward and dual Monte Carlo estimates of the same quantity, each from
/// its own independent replicas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityEstimates {
    pub forward: Estimate,
    pub dual: Estimate,
}

impl DualityEstimates {
    /// `|forward - dual| <= k` combined standard errors.
    pub fn agreement(&self, k: f64) -> Agreement {
        agree_within(&self.forward, &self.dual, k, 0.0)
    }
}

/// `E prod_{a in demes} (1 - u_t(a))` for a multiset of demes, from the
/// forward model and from the dual.
///
/// Each entry of `demes` is resolved to a uniformly chosen cell of that
/// deme, independently; averaging `prod (1 - xi_t)` over those choices gives
/// the product of deme densities exactly, so both sides estimate the same
/// number at finite size. The dual starts from the chosen cells.
pub fn product_duality_mc(
    domain: &Domain,
    family: &ScalingFamily,
    start: &Configuration,
    demes: &[usize],
    t: f64,
    reps: usize,
    seed: u64,
) -> Result<DualityEstimates, Error> {
    if demes.is_empty() || reps == 0 || demes.iter().any(|&a| a >= domain.demes) {
        return Err(Error::InvalidParameter("need a nonempty deme multiset inside the ring and reps >= 1".into()));
    }
    start.check()?;
    let pick = |g: &mut SimRng| -> Vec<usize> {
        demes.iter().map(|&a| domain.index(Site::new(a, g.random_range(0..domain.cells)))).collect()
    };
    let fwd = map_replicas(reps, |i| {
        let mut g = rng::stream(seed, &[tag::FORWARD, i as u64]);
        let (end, _) = simulate(domain, family, start, t, &[], &mut g).expect("validated forward input");
        pick(&mut g).iter().map(|&x| 1.0 - f64::from(end.xi[x])).product::<f64>()
    });
    let dual = map_replicas(reps, |i| {
        let mut g = rng::stream(seed, &[tag::DUAL, i as u64]);
        let roots = pick(&mut g);
        let (d, _) = simulate_dual(domain, &roots, family, t, &mut g, false).expect("validated dual input");
        d.union.iter().map(|&y| 1.0 - f64::from(start.xi[y])).product::<f64>()
    });
    Ok(DualityEstimates { forward: Estimate::from_samples(&fwd), dual: Estimate::from_samples(&dual) })
}

/// `P(xi_t(x) = 0 for x in zeros, eta_t(y) = 1 for y in labeled)` from the
/// forward model against `E[prod F prod G]` over per-root views of the
/// dual started from `zeros` followed by `labeled`.
pub fn tracer_duality_mc(
    domain: &Domain,
    family: &ScalingFamily,
    start: &Configuration,
    zeros: &[usize],
    labeled: &[usize],
    t: f64,
    reps: usize,
    seed: u64,
) -> Result<DualityEstimates, Error> {
    let n = domain.num_sites();
    if zeros.len() + labeled.len() == 0 || reps == 0 || zeros.iter().chain(labeled).any(|&x| x >= n) {
        return Err(Error::InvalidParameter("need sites inside the domain and reps >= 1".into()));
    }
    start.check()?;
    let fwd = map_replicas(reps, |i| {
        let mut g = rng::stream(seed, &[tag::FORWARD, i as u64]);
        let (end, _) = simulate(domain, family, start, t, &[], &mut g).expect("validated forward input");
        let hit = zeros.iter().all(|&x| end.xi[x] == 0) && labeled.iter().all(|&y| end.eta[y] == 1);
        f64::from(u8::from(hit))
    });
    let roots: Vec<usize> = zeros.iter().chain(labeled).copied().collect();
    let dual = map_replicas(reps, |i| {
        let mut g = rng::stream(seed, &[tag::DUAL, i as u64]);
        let (d, _) = simulate_dual(domain, &roots, family, t, &mut g, false).expect("validated dual input");
        let f: f64 = d.views[..zeros.len()].iter().map(|v| eval_f(v, &start.xi)).product();
        let gl: f64 = d.views[zeros.len()..].iter().map(|v| eval_g(v, &start.xi, &start.eta)).product();
        f * gl
    });
    Ok(DualityEstimates { forward: Estimate::from_samples(&fwd), dual: Estimate::from_samples(&dual) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn list(v: &[usize]) -> OrderedDual {
        OrderedDual { sites: v.to_vec() }
    }

    #[test]
    fn jump_without_collision_keeps_order() {
        let mut d = list(&[1, 2, 3]);
        d.apply_order_rules(DualEvent::Jump { index: 1, to: 9 }).unwrap();
        assert_eq!(d.sites, [1, 9, 3]);
    }

    #[test]
    fn collision_drops_higher_index() {
        let mut d = list(&[1, 2, 3, 4]);
        d.apply_order_rules(DualEvent::Jump { index: 3, to: 2 }).unwrap();
        assert_eq!(d.sites, [1, 2, 3]);
        let mut d = list(&[1, 2, 3, 4]);
        d.apply_order_rules(DualEvent::Jump { index: 1, to: 4 }).unwrap();
        assert_eq!(d.sites, [1, 4, 3]);
    }

    #[test]
    fn birth_puts_offspring_first() {
        let mut d = list(&[5, 6]);
        d.apply_order_rules(DualEvent::Birth { index: 0, to: 7 }).unwrap();
        assert_eq!(d.sites, [7, 5, 6]);
    }

    #[test]
    fn birth_onto_occupied_site() {
        // occupant ranks lower: it moves up to the offspring's slot
        let mut d = list(&[1, 2, 3]);
        d.apply_order_rules(DualEvent::Birth { index: 1, to: 3 }).unwrap();
        assert_eq!(d.sites, [1, 3, 2]);
        // occupant ranks higher: nothing changes
        let mut d = list(&[1, 2, 3]);
        d.apply_order_rules(DualEvent::Birth { index: 2, to: 1 }).unwrap();
        assert_eq!(d.sites, [1, 2, 3]);
    }

    #[test]
    fn stale_index_is_an_error() {
        let mut d = list(&[1]);
        assert!(matches!(
            d.apply_order_rules(DualEvent::Jump { index: 1, to: 0 }),
            Err(Error::StaleIndex { index: 1, len: 1 })
        ));
    }

    #[test]
    fn f_and_g_examples() {
        let xi = [0u8, 1, 1, 0];
        let eta = [0u8, 1, 0, 0];
        assert_eq!(eval_f(&list(&[0, 3]), &xi), 1.0);
        assert_eq!(eval_g(&list(&[0, 3]), &xi, &eta), 0.0);
        assert_eq!(eval_f(&list(&[0, 1, 2]), &xi), 0.0);
        assert_eq!(eval_g(&list(&[0, 1, 2]), &xi, &eta), 1.0);
        assert_eq!(eval_g(&list(&[0, 2, 1]), &xi, &eta), 0.0);
    }

    #[test]
    fn real_valued_functionals_reduce_to_binary() {
        let xi = [0u8, 1, 1, 0];
        let eta = [0u8, 1, 0, 0];
        for sites in [vec![0, 3], vec![3, 1, 2], vec![2, 1], vec![0, 1]] {
            let d = list(&sites);
            let u = |y: usize| f64::from(xi[y]);
            let l = |y: usize| f64::from(eta[y]);
            assert_eq!(eval_f_real(&d, u), eval_f(&d, &xi));
            assert_eq!(eval_g_real(&d, u, l), eval_g(&d, &xi, &eta));
        }
    }

    #[test]
    fn joint_views_track_union() {
        let mut j = JointDual::new(&[1, 1, 4]).unwrap();
        assert_eq!(j.union_sorted(), [1, 4]);
        j.birth(1, 2);
        assert_eq!(j.views[0].sites, [2, 1]);
        assert_eq!(j.views[1].sites, [2, 1]);
        assert_eq!(j.views[2].sites, [4]);
        j.jump(4, 2);
        assert_eq!(j.views[2].sites, [2]);
        assert_eq!(j.union_sorted(), [1, 2]);
        // empty source: no-op
        j.jump(7, 0);
        assert_eq!(j.union_sorted(), [1, 2]);
    }
}
