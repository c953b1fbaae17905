use feynwick::covariance::ContinuumKernel;
use feynwick::matrix::Matrix;
use feynwick::scaling::{continuum_target, convergence_report, rescaled_kpoint, scaling_csv, Normalize, ScalingSchedule};
use feynwick::wick::{analytic_cumulant_matrix, AnalyticSeries};

const SCHEDULE: &str = r#"{
    "field": {"kind": "dgff", "d": 3},
    "points": [[0.25, 0.5, 0.5], [0.75, 0.5, 0.5]],
    "epsilons": ["1/8", "1/16", "1/24"],
    "eta": {"preset": "power", "p": -1.0},
    "observable": [0, 0, 1],
    "kernel": {"kind": "box-green", "n_terms": 128},
    "normalize": "auto"
}"#;

/// Rescaled `η(ε)² E[:φ(x)²: :φ(y)²:]`, recorded from the first build.
const GOLDEN: [(f64, f64); 3] = [(1.0 / 8.0, 0.140_543_196_815_154_2), (1.0 / 16.0, 0.128_964_283_106_085_74), (1.0 / 24.0, 0.127_413_129_332_693_36)];

#[test]
fn dgff_wick_square_golden_table() {
    let schedule = ScalingSchedule::from_json(SCHEDULE).unwrap();
    let rows = rescaled_kpoint(&schedule).unwrap();
    assert_eq!(rows.len(), 3);
    for (row, (eps, value)) in rows.iter().zip(GOLDEN) {
        assert_eq!(row.epsilon, eps);
        let got = row.rescaled.unwrap();
        assert!((got - value).abs() <= 1e-9 * value, "ε = {eps}: {got} vs {value}");
    }
    assert_eq!(rows.iter().map(|r| r.lattice_sites).collect::<Vec<_>>(), vec![343, 3375, 12167]);
}

#[test]
fn auto_normalized_errors_decrease() {
    let schedule = ScalingSchedule::from_json(SCHEDULE).unwrap();
    let rows = rescaled_kpoint(&schedule).unwrap();
    let target = continuum_target(&schedule, schedule.kernel.as_ref().unwrap()).unwrap();
    let report = convergence_report(&rows, target, Normalize::Auto).unwrap();
    assert!(report.monotone, "{report:?}");
    assert!(report.rows.last().unwrap().error < 0.15);
    let csv = scaling_csv(&rows, Some(&report));
    assert_eq!(csv.lines().next().unwrap(), "epsilon,lattice_sites,raw_value,eta,rescaled,target,rel_error");
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn lattice_normalization_is_one_over_2d() {
    // With -Δ = I - A/(2d) the lattice Green's function is 2d times the
    // continuum-normalized one per factor, so raw errors after dividing by
    // (2d)² must shrink towards zero.
    let schedule = ScalingSchedule::from_json(SCHEDULE).unwrap();
    let rows = rescaled_kpoint(&schedule).unwrap();
    let target = continuum_target(&schedule, schedule.kernel.as_ref().unwrap()).unwrap();
    let errors: Vec<f64> = rows.iter().map(|r| (r.rescaled.unwrap() / 36.0 - target).abs() / target).collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(errors[2] < 0.02, "{errors:?}");
}

#[test]
fn power_zero_leaves_values_unchanged() {
    let schedule = ScalingSchedule::from_json(&SCHEDULE.replace("-1.0", "0.0")).unwrap();
    for row in rescaled_kpoint(&schedule).unwrap() {
        assert_eq!(row.rescaled, row.raw_value);
        assert_eq!(row.eta, 1.0);
    }
}

#[test]
fn table_kernel_reproduces_wick_cumulant() {
    let schedule = ScalingSchedule::from_json(&SCHEDULE.replace("\"normalize\": \"auto\"", "\"mode\": \"cumulant\"")).unwrap();
    let g = Matrix::from_rows(vec![vec![2.0, 0.7], vec![0.7, 1.0]]).unwrap();
    let series = vec![AnalyticSeries::monomial(2), AnalyticSeries::monomial(2)];
    let expected = analytic_cumulant_matrix(&g, &series).unwrap().value;
    assert_eq!(continuum_target(&schedule, &ContinuumKernel::UserTable(g)).unwrap(), expected);
    assert!((expected - 2.0 * 0.49).abs() < 1e-15);
}

#[test]
fn invalid_schedules_are_rejected() {
    for bad in [
        SCHEDULE.replace("\"1/24\"", "\"1/7.5\""),
        SCHEDULE.replace("[0.75, 0.5, 0.5]", "[0.25, 0.5, 0.5]"),
        SCHEDULE.replace("[\"1/8\", \"1/16\", \"1/24\"]", "[\"1/16\", \"1/8\", \"1/24\"]"),
        SCHEDULE.replace("0.75, 0.5, 0.5", "1.5, 0.5, 0.5"),
    ] {
        assert!(ScalingSchedule::from_json(&bad).is_err(), "{bad}");
    }
}
