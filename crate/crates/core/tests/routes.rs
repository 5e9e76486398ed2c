use proptest::prelude::*;
use qlab_core::bench::{even_taus, synth};
use qlab_core::cjqr::{fit_joint, verify_noncrossing, JointOptions};
use qlab_core::lp::SolveOptions;
use qlab_core::qr::{brute_force_oracle, fit_independent, fit_single, objective};
use qlab_core::sgp::{sgp_batch, Students};
use qlab_core::{load_csv, example_table, Dataset, Policy, QuantileFunction, TauGrid};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn lp_matches_oracle_across_levels() {
    let ds = example_table();
    for k in 1..=19 {
        let tau = k as f64 * 0.05;
        let lp = fit_single(&ds, tau, &SolveOptions::default()).unwrap();
        let oracle = brute_force_oracle(&ds, tau).unwrap();
        assert!(close(lp.objective, oracle.objective, 1e-9), "tau {tau}: {} vs {}", lp.objective, oracle.objective);
        let recomputed = objective(&ds, &lp.beta, tau).unwrap();
        assert!(close(lp.objective, recomputed, 1e-9));
    }
}

#[test]
fn constant_response_fits_exactly() {
    let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
    let ds = Dataset::from_rows(&rows, vec![4.5; 8], &["x"], true).unwrap();
    for tau in [0.1, 0.5, 0.9] {
        let lp = fit_single(&ds, tau, &SolveOptions::default()).unwrap();
        let oracle = brute_force_oracle(&ds, tau).unwrap();
        assert!(lp.objective.abs() < 1e-12 && oracle.objective.abs() < 1e-12);
        assert!((oracle.beta[0] - 4.5).abs() < 1e-12 && oracle.beta[1].abs() < 1e-12);
    }
}

#[test]
fn joint_fit_on_synthetic_data_is_clean() {
    let ds = synth(60, 2, 3).unwrap();
    let taus = even_taus(4).unwrap();
    let joint = fit_joint(&ds, &taus, &JointOptions::default()).unwrap();
    assert!(verify_noncrossing(&joint.model, &ds, 1e-9).unwrap().is_clean());
    let indep = fit_independent(&ds, &taus, &SolveOptions::default()).unwrap();
    let floor: f64 = indep.fit_loss().iter().sum();
    assert!(joint.objective >= floor - 1e-9);

    let (_, summary) = sgp_batch(&joint.model, &Students::from_dataset(&ds), Policy::RequireMonotone).unwrap();
    assert_eq!(summary.n_crossed, 0);
    assert_eq!(summary.n_crossing_errors, 0);
}

#[test]
fn csv_roundtrip_keeps_fit() {
    let ds = example_table();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    ds.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let back = load_csv(&path, "Y", true).unwrap();
    assert_eq!(back.n(), 20);
    for (a, b) in back.y().iter().zip(ds.y()) {
        assert!(close(*a, *b, 1e-12));
    }
    let taus = TauGrid::new(vec![0.25, 0.75]).unwrap();
    let m1 = fit_independent(&ds, &taus, &SolveOptions::default()).unwrap();
    let m2 = fit_independent(&back, &taus, &SolveOptions::default()).unwrap();
    assert_eq!(m1.quantiles_at(ds.row(3)), m2.quantiles_at(back.row(3)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scale_equivariance(seed in 0u64..1000, c in 0.1f64..20.0, tau in 0.05f64..0.95) {
        let ds = synth(25, 2, seed).unwrap();
        let scaled = ds.with_scaled_response(c).unwrap();
        let a = fit_single(&ds, tau, &SolveOptions::default()).unwrap();
        let b = fit_single(&scaled, tau, &SolveOptions::default()).unwrap();
        prop_assert!(close(b.objective, c * a.objective, 1e-9));
    }

    #[test]
    fn oracle_agreement_on_random_data(seed in 0u64..10_000, n in 3usize..30, tau in 0.02f64..0.98) {
        let ds = synth(n, 2, seed).unwrap();
        let lp = fit_single(&ds, tau, &SolveOptions::default()).unwrap();
        let oracle = brute_force_oracle(&ds, tau).unwrap();
        prop_assert!(close(lp.objective, oracle.objective, 1e-9), "{} vs {}", lp.objective, oracle.objective);
    }
}
