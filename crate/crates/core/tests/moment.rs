//! Scalar diffusions, the dual chain and the label-functional identities.

use bvm_core::continuum::BbmParams;
use bvm_core::moment::{
    check_coupled_duality, check_moment_duality, simulate_chain, simulate_diffusion, spatial_dual_side, DiffusionState,
    DualitySettings, SojournTally, DEFAULT_CHAIN_CAP,
};
use bvm_core::par::map_replicas;
use bvm_core::rng;
use bvm_core::spde::{run_spde, Mesh, Noise, SpdeField};
use bvm_core::stats::{agree_within, Estimate};
use bvm_core::LimitParams;

fn settings(reps: usize, seed: u64) -> DualitySettings {
    DualitySettings { beta: 1.0, sigma: 1.0, horizon: 0.5, dt: 1e-3, reps, seed, cap: DEFAULT_CHAIN_CAP }
}

#[test]
fn neutral_diffusion_is_a_martingale() {
    let u0 = 0.3;
    let ends = map_replicas(20_000, |i| {
        let mut g = rng::stream(60, &[i as u64]);
        let s = simulate_diffusion(DiffusionState::single(u0).unwrap(), 0.0, 1.0, 1.0, 1e-3, &mut g).unwrap();
        1.0 - s.z()
    });
    let e = Estimate::from_samples(&ends);
    assert!((e.mean - u0).abs() <= 3.0 * e.se.unwrap(), "{e:?}");
}

#[test]
fn pair_waits_a_unit_mean_time_to_merge() {
    // from 2 with no births the only move is a death at rate sigma^2 = 1
    let waits = map_replicas(20_000, |i| {
        let mut g = rng::stream(61, &[i as u64]);
        let mut tally = SojournTally::default();
        let c = simulate_chain(2, 0.0, 1.0, 100.0, DEFAULT_CHAIN_CAP, &mut g, Some(&mut tally)).unwrap();
        assert_eq!(c.n, 1);
        tally.time[2]
    });
    let e = Estimate::from_samples(&waits);
    assert!((e.mean - 1.0).abs() <= 3.0 * e.se.unwrap(), "{e:?}");
}

#[test]
fn chain_without_births_never_grows() {
    let mut g = rng::stream(62, &[0]);
    for n0 in [1, 3, 9] {
        let mut tally = SojournTally::default();
        let c = simulate_chain(n0, 0.0, 2.0, 5.0, DEFAULT_CHAIN_CAP, &mut g, Some(&mut tally)).unwrap();
        assert!(c.n <= n0);
        assert_eq!(tally.ups.iter().sum::<u64>(), 0);
    }
}

#[test]
fn moment_duality_small_cases() {
    let r = check_moment_duality(0.3, 3, &settings(20_000, 63)).unwrap();
    assert!(r.pass, "{r:?}");
    let one = check_moment_duality(1.0, 4, &settings(50, 64)).unwrap();
    assert_eq!((one.lhs, one.rhs), (1.0, 1.0));
}

#[test]
fn coupled_duality_reduces_and_single_root_case_holds() {
    // k = 1, n0 = 1: both sides are expected label densities
    let r = check_coupled_duality(1, 0.5, 0.2, 1, &settings(20_000, 65)).unwrap();
    assert!(r.pass, "{r:?}");
    // k = 0 is the moment duality of the Z component
    let r = check_coupled_duality(0, 0.5, 0.2, 2, &settings(20_000, 66)).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(check_coupled_duality(3, 0.5, 0.2, 2, &settings(10, 67)).is_err());
}

#[test]
fn spatial_dual_matches_the_deterministic_label_profile() {
    // without noise the coupled system is a PDE, so E F_1 at one point is
    // just ell_T(x0); the ordered branching dual must reproduce it
    let limits = LimitParams::new(1.0, 1.0, 0.0).unwrap();
    let (theta, horizon, x0) = (0.5, 0.5, 0.3);
    let u0 = |x: f64| 0.3 + 0.4 * (-x * x / 2.0).exp();
    let l0 = |x: f64| 0.5 * u0(x);
    let mesh = Mesh::new(-8.0, 0.05, 320, 0.05 * 0.05 / 4.0);
    let mut quiet = [0, 1, 2].map(|k| rng::stream(68, &[k]));
    let steps = (horizon / mesh.dt).round() as usize;
    let start = SpdeField::from_fn(&mesh, u0, l0).unwrap();
    let end = run_spde(&start, &mesh, &limits, theta, steps, None, Noise::Coupled(&mut quiet)).unwrap().final_field;
    let k = mesh.nearest(x0);
    let w = (x0 - mesh.x(k)) / mesh.dx;
    let forward = if w >= 0.0 {
        (1.0 - w) * end.ell[k] + w * end.ell[k + 1]
    } else {
        (1.0 + w) * end.ell[k] - w * end.ell[k - 1]
    };
    let params = BbmParams::new(limits, theta, 1e-3);
    let dual = spatial_dual_side(1, &[x0], |x| 1.0 - u0(x), l0, &params, horizon, 40_000, 69).unwrap();
    // slack covers the mesh error of the deterministic solve
    let a = agree_within(&Estimate::exact(forward), &dual, 3.0, 1e-3);
    assert!(a.pass, "pde {forward} dual {dual:?}");
}
