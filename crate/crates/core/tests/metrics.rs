use proptest::prelude::*;
use spirit_core::metrics::{confidence_interval, evaluate, paired_ttest, student_t_cdf, MetricsReport};

#[test]
fn worked_example() {
    let m = evaluate(&[100.0, 300.0], &[150.0, 250.0]).unwrap();
    assert!((m.nmap - 25.0).abs() < 1e-12);
    assert!((m.mae - 50.0).abs() < 1e-12);
    assert!((m.rmse - 50.0).abs() < 1e-12);
    assert!((m.r2 - 0.75).abs() < 1e-12);
    assert_eq!(m.n, 2);
}

#[test]
fn nmap_needs_positive_mean() {
    assert!(evaluate(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    assert!(evaluate(&[], &[]).is_err());
    assert!(evaluate(&[1.0], &[1.0, 2.0]).is_err());
}

/// (dof, t, cdf) from scipy.stats.t; see `reference/t_reference.py`.
const T_CDF: [(f64, f64, f64); 20] = [
    (1.0, -3.0, 1.024163823495667e-01),
    (1.0, 0.5, 6.475836176504333e-01),
    (2.0, 1.2, 8.234983196103152e-01),
    (2.0, -0.3, 3.962428304200888e-01),
    (3.0, 2.5, 9.561466764959673e-01),
    (4.0, 8.61, 9.994999329380860e-01),
    (4.0, -1.0, 1.869504831500295e-01),
    (5.0, 0.0, 0.5),
    (5.0, 3.1, 9.865734079049824e-01),
    (7.0, -2.2, 3.186550765131839e-02),
    (9.0, 6.3246, 9.999315353444685e-01),
    (10.0, 1.812, 9.499623689670764e-01),
    (12.0, -0.7, 2.486370768953537e-01),
    (15.0, 2.947, 9.950029162882602e-01),
    (20.0, 1.3, 8.958077522433066e-01),
    (25.0, -4.0, 2.477218352660437e-04),
    (30.0, 0.2, 5.785849214703377e-01),
    (50.0, 2.0, 9.745264656311533e-01),
    (100.0, -1.984, 2.499838689808366e-02),
    (250.0, 3.5, 9.997246331521513e-01),
];

#[test]
fn t_cdf_matches_reference() {
    for (dof, t, want) in T_CDF {
        let got = student_t_cdf(t, dof);
        assert!((got - want).abs() < 1e-6, "dof {dof} t {t}: {got} vs {want}");
    }
}

#[test]
fn paired_ttest_matches_reference() {
    // differences alternate around 1 with sample sd 0.5
    let d: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 0.5256583509747431 } else { 1.474341649025257 }).collect();
    let b: Vec<f64> = (0..10).map(|i| 10.0 + i as f64).collect();
    let a: Vec<f64> = b.iter().zip(&d).map(|(x, y)| x + y).collect();
    let r = paired_ttest(&a, &b).unwrap();
    assert_eq!(r.dof, 9);
    assert!((r.t - 6.324555320336758).abs() < 1e-6);
    assert!((r.p_two_sided - 1.369365592652299e-04).abs() < 1e-9);
    assert!(r.significant_at_0001);
    assert!((r.mean_difference - 1.0).abs() < 1e-9);
    let flipped = paired_ttest(&b, &a).unwrap();
    assert!((flipped.t + r.t).abs() < 1e-9 && (flipped.p_two_sided - r.p_two_sided).abs() < 1e-12);
}

#[test]
fn ttest_rejects_degenerate_input() {
    assert!(paired_ttest(&[1.0], &[0.0]).is_err());
    assert!(paired_ttest(&[1.0, 2.0], &[0.0]).is_err());
    assert!(paired_ttest(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn confidence_interval_matches_reference() {
    let (lo, hi) = confidence_interval(&[2.0, 3.5, 1.25, 4.0, 2.75], 0.95).unwrap();
    assert!((lo - 1.3222284559074968).abs() < 1e-9);
    assert!((hi - 4.077771544092504).abs() < 1e-9);
    assert!(confidence_interval(&[1.0], 0.95).is_err());
    assert!(confidence_interval(&[1.0, 2.0], 1.0).is_err());
}

#[test]
fn report_pools_horizons() {
    let y = vec![vec![100.0, 200.0], vec![300.0, 400.0]];
    let yhat = vec![vec![110.0, 190.0], vec![330.0, 370.0]];
    let r = MetricsReport::forecast("W/m2", &[60, 120], &y, &yhat).unwrap();
    let pooled = evaluate(&[100.0, 200.0, 300.0, 400.0], &[110.0, 190.0, 330.0, 370.0]).unwrap();
    assert_eq!(r.overall, pooled);
    assert_eq!(r.per_horizon.len(), 2);
}

proptest! {
    #[test]
    fn error_norms_are_ordered(pairs in prop::collection::vec((0.1f64..1000.0, 0.0f64..1000.0), 1..200)) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let m = evaluate(&y, &yhat).unwrap();
        prop_assert!(m.mae >= 0.0);
        prop_assert!(m.rmse + 1e-9 >= m.mae);
        prop_assert!(m.r2 <= 1.0 + 1e-12);
        prop_assert!(m.nmap >= 0.0);
    }

    #[test]
    fn interval_contains_mean(xs in prop::collection::vec(-100.0f64..100.0, 2..50), level in 0.5f64..0.999) {
        let (lo, hi) = confidence_interval(&xs, level).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        prop_assert!(lo <= mean + 1e-9 && mean <= hi + 1e-9);
    }

    #[test]
    fn t_cdf_is_symmetric(t in -20.0f64..20.0, dof in 1.0f64..200.0) {
        prop_assert!((student_t_cdf(t, dof) + student_t_cdf(-t, dof) - 1.0).abs() < 1e-12);
    }
}
