//! Experiment harness: determinism, records and pooling.

use bvm_core::harness::{aggregate, run, ExperimentSpec, Kind};
use bvm_core::par::with_workers;

fn spec(kind: Kind, reps: usize, params: &str) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(kind);
    s.reps = reps;
    s.seed = 17;
    s.params = toml::from_str(params).unwrap();
    s
}

fn small_specs() -> Vec<ExperimentSpec> {
    vec![
        spec(Kind::SimulateForward, 40, "horizon = 0.5"),
        spec(Kind::ReplayDuality, 20, ""),
        spec(Kind::DualMc, 200, "demes = 12\nproduct_demes = [3, 3, 9]"),
        spec(Kind::Bbm, 50, "horizon = 0.2"),
        spec(Kind::CoalescenceLadder, 200, "ls = [10, 20]"),
        spec(Kind::Spde, 10, "horizon = 0.05"),
        spec(Kind::CoupledSpde, 10, "horizon = 0.05"),
        spec(Kind::MartingaleResidual, 10, "horizon = 0.05"),
        spec(Kind::MomentDuality, 300, "dt = 1e-2"),
        spec(Kind::CoupledDuality, 300, "dt = 1e-2"),
        spec(Kind::KernelCheck, 1, ""),
    ]
}

#[test]
fn worker_count_does_not_change_any_estimate() {
    for s in small_specs() {
        let one = with_workers(1, || run(&s)).unwrap();
        let eight = with_workers(8, || run(&s)).unwrap();
        assert_eq!(one.estimates, eight.estimates, "{}", s.kind);
        assert_eq!(one.checks, eight.checks, "{}", s.kind);
        assert_eq!(one.spec_hash, eight.spec_hash);
    }
}

#[test]
fn single_replica_has_no_standard_error() {
    let rec = run(&spec(Kind::Spde, 1, "horizon = 0.05")).unwrap();
    let e = rec.estimate("integral_u").unwrap();
    assert_eq!((e.n, e.se), (1, None));
    let json = serde_json::to_value(&rec).unwrap();
    let row = json["estimates"].as_array().unwrap().iter().find(|r| r["name"] == "integral_u").unwrap();
    assert!(row["se"].is_null());
}

#[test]
fn outputs_carry_the_provenance_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = spec(Kind::CoupledSpde, 3, "horizon = 0.05");
    s.output = Some(dir.path().to_path_buf());
    let rec = run(&s).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("spde_final.csv")).unwrap();
    let header: Vec<&str> = csv.lines().take(3).collect();
    assert_eq!(header, [format!("# spec_hash={}", rec.spec_hash), "# seed=17".into(), "# kind=coupled-spde".into()]);
    let back: bvm_core::harness::ResultRecord =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(back.estimates, rec.estimates);
}

#[test]
fn spec_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(&path, "kind = \"dual-mc\"\nreps = 50\nseed = 4\n[params]\nproduct_demes = [1, 2]\ndemes = 8\nhorizon = 0.3\n").unwrap();
    let s = ExperimentSpec::from_file(&path).unwrap();
    assert_eq!((s.kind, s.reps, s.seed), (Kind::DualMc, 50, 4));
    let p: bvm_core::harness::DualMcParams = s.params.clone().try_into().unwrap();
    assert_eq!((p.lattice.demes, p.product_demes), (8, vec![1, 2]));
    std::fs::write(&path, "kind = \"dual-mc\"\n[params]\nbogus = 1\n").unwrap();
    assert!(ExperimentSpec::from_file(&path).is_err());
}

#[test]
fn pathwise_kind_passes_over_many_seeds() {
    let rec = run(&spec(Kind::ReplayDuality, 200, "")).unwrap();
    assert!(rec.pass);
    assert_eq!(rec.estimate("cases").unwrap().mean, 1000.0);
}

#[test]
fn aggregation_edge_cases() {
    assert!(aggregate(&[]).is_err());
    let a = run(&spec(Kind::MomentDuality, 200, "dt = 1e-2")).unwrap();
    let one = aggregate(std::slice::from_ref(&a)).unwrap();
    for (row, e) in one.rows.iter().zip(&a.estimates) {
        assert_eq!(row.n, e.n);
        assert!((row.mean - e.mean).abs() < 1e-15);
        if let (Some(x), Some(y)) = (row.se, e.se) {
            assert!((x - y).abs() < 1e-12 * y.max(1e-300));
        }
    }
    let mut b_spec = spec(Kind::MomentDuality, 200, "dt = 1e-2");
    b_spec.seed = 18;
    let b = run(&b_spec).unwrap();
    let both = aggregate(&[a.clone(), b.clone()]).unwrap();
    let lhs = both.rows.iter().find(|r| r.name == "lhs").unwrap();
    let avg = (a.estimate("lhs").unwrap().mean + b.estimate("lhs").unwrap().mean) / 2.0;
    assert!((lhs.mean - avg).abs() < 1e-15);
    let other = run(&spec(Kind::KernelCheck, 1, "")).unwrap();
    assert!(aggregate(&[a, other]).is_err());
}
