//! SPDE solvers, residuals and the lattice Green's-function check.

use bvm_core::forward::Configuration;
use bvm_core::kernel::CompactBump;
use bvm_core::lattice::Domain;
use bvm_core::par::map_replicas;
use bvm_core::rng;
use bvm_core::scaling::ScalingFamily;
use bvm_core::spde::{coupled_martingale_residual, run_spde, GreenCheck, Mesh, Noise, SpdeField};
use bvm_core::stats::Estimate;
use bvm_core::LimitParams;

#[test]
fn heat_flow_matches_the_gaussian_solution() {
    // u_0 = exp(-x^2 / 2) spreads to s / sqrt(s^2 + 2 alpha t) exp(-x^2 / 2(s^2 + 2 alpha t))
    let limits = LimitParams::new(1.0, 0.0, 0.0).unwrap();
    let mesh = Mesh::new(-10.0, 0.05, 400, 0.05 * 0.05 / 4.0);
    let t = 0.5;
    let steps = (t / mesh.dt).round() as usize;
    let mut g = rng::stream(80, &[0]);
    let start = SpdeField::from_fn(&mesh, |x| (-x * x / 2.0).exp(), |_| 0.0).unwrap();
    let end = run_spde(&start, &mesh, &limits, 0.0, steps, None, Noise::Single(&mut g)).unwrap().final_field;
    let var = 1.0 + 2.0 * t;
    let sup = mesh
        .points()
        .iter()
        .zip(&end.u)
        .map(|(&x, &u)| (u - (-x * x / (2.0 * var)).exp() / var.sqrt()).abs())
        .fold(0.0, f64::max);
    assert!(sup < 1e-3, "sup error {sup}");
}

#[test]
fn neutral_mass_is_conserved_in_mean() {
    let limits = LimitParams::new(1.0, 1.0, 0.2).unwrap();
    let mesh = Mesh::new(0.0, 0.1, 100, 0.0025);
    let u0 = |x: f64| 0.5 + 0.2 * (2.0 * std::f64::consts::PI * x / 10.0).sin();
    let start = SpdeField::from_fn(&mesh, u0, |_| 0.0).unwrap();
    let mass0: f64 = start.u.iter().sum::<f64>() * mesh.dx;
    let change = map_replicas(2000, |i| {
        let mut g = rng::stream(81, &[i as u64]);
        let run = run_spde(&start, &mesh, &limits, 0.0, 200, None, Noise::Single(&mut g)).unwrap();
        run.final_field.u.iter().sum::<f64>() * mesh.dx - mass0
    });
    let e = Estimate::from_samples(&change);
    assert!(e.mean.abs() <= 3.0 * e.se.unwrap(), "{e:?}");
}

#[test]
fn coupled_residual_is_centred_with_matching_variation() {
    let limits = LimitParams::new(1.0, 1.0, 0.1).unwrap();
    let mesh = Mesh::new(-6.0, 0.1, 120, 0.0025);
    let u0 = |x: f64| 0.3 + 0.4 * (-x * x / 2.0).exp();
    let start = SpdeField::from_fn(&mesh, u0, |x| 0.5 * u0(x)).unwrap();
    let phi = CompactBump { center: 0.0, half_width: 2.0, amplitude: 1.0 };
    let psi = CompactBump { center: 0.5, half_width: 1.5, amplitude: 0.7 };
    let reports = map_replicas(1000, |i| {
        let mut gs = [0, 1, 2].map(|k| rng::stream(82, &[i as u64, k]));
        let run = run_spde(&start, &mesh, &limits, 1.0, 200, Some(1), Noise::Coupled(&mut gs)).unwrap();
        coupled_martingale_residual(&run.samples, &mesh, mesh.dt, &phi, &psi, &limits, 1.0)
    });
    let finals: Vec<f64> = reports.iter().map(|r| *r.series.last().unwrap()).collect();
    let m = Estimate::from_samples(&finals);
    assert!(m.mean.abs() <= 3.0 * m.se.unwrap(), "{m:?}");
    let ratio = reports.iter().map(|r| r.realized_qv).sum::<f64>() / reports.iter().map(|r| r.predicted_qv).sum::<f64>();
    assert!((0.9..=1.1).contains(&ratio), "{ratio}");
}

fn lattice(theta: f64) -> (Domain, ScalingFamily, Configuration) {
    let d = Domain::new(32, 4).unwrap();
    let f = ScalingFamily::new(4, 4, 4.0, 1.0, theta).unwrap();
    let xi = (0..128).map(|s| u8::from((s / 4) % 8 < 3)).collect();
    (d, f, Configuration::new(xi, vec![0; 128]).unwrap())
}

fn green_samples(theta: f64, seed: u64) -> (Estimate, Estimate) {
    let (d, f, start) = lattice(theta);
    let check = GreenCheck::new(&d, &f, &start, 0.5, 5, 100).unwrap();
    let s = map_replicas(4000, |i| {
        let mut g = rng::stream(seed, &[i as u64]);
        check.sample(&start, &mut g).unwrap()
    });
    let rem: Vec<f64> = s.iter().map(|x| x.remainder).collect();
    let net: Vec<f64> = s.iter().map(|x| x.remainder - x.drift).collect();
    (Estimate::from_samples(&rem), Estimate::from_samples(&net))
}

#[test]
fn green_remainder_is_the_selection_drift_in_mean() {
    let (rem, net) = green_samples(0.8, 83);
    assert!(net.mean.abs() <= 3.0 * net.se.unwrap(), "{net:?}");
    // selection makes the remainder itself clearly positive
    assert!(rem.mean > 3.0 * rem.se.unwrap(), "{rem:?}");
}

#[test]
fn neutral_green_remainder_is_centred() {
    let (rem, _) = green_samples(0.0, 84);
    assert!(rem.mean.abs() <= 3.0 * rem.se.unwrap(), "{rem:?}");
}

#[test]
fn all_ones_has_no_remainder() {
    let d = Domain::new(16, 2).unwrap();
    let f = ScalingFamily::new(4, 2, 2.0, 1.0, 0.5).unwrap();
    let start = Configuration::new(vec![1; 32], vec![0; 32]).unwrap();
    let check = GreenCheck::new(&d, &f, &start, 0.4, 3, 20).unwrap();
    assert!((check.smoothed_initial - 1.0).abs() < 1e-12);
    let mut g = rng::stream(85, &[0]);
    let s = check.sample(&start, &mut g).unwrap();
    assert!(s.remainder.abs() < 1e-12 && s.drift == 0.0);
}
