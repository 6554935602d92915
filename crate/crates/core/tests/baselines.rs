use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spirit_core::baselines::{fit_arima, fit_var, forecast_arima, forecast_var, ArimaModel, VarModel};

fn noise(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[test]
fn ar1_coefficient_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut y = vec![0.0];
    for _ in 1..5000 {
        let prev = *y.last().unwrap();
        y.push(2.0 + 0.8 * prev + noise(&mut rng));
    }
    let m = fit_arima(&y, 0).unwrap();
    assert!((m.phi[0] - 0.8).abs() <= 0.08, "{m:?}");
    assert!(m.stationary);
    let mean = m.intercept / (1.0 - m.phi[0] - m.phi[1]);
    assert!((mean - 10.0).abs() < 0.5, "implied mean {mean}");
}

#[test]
fn white_noise_has_no_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let y: Vec<f64> = (0..5000).map(|_| noise(&mut rng)).collect();
    let m = fit_arima(&y, 0).unwrap();
    for c in m.phi.iter().chain(&m.theta) {
        assert!(c.abs() <= 0.05, "{m:?}");
    }
    assert!((m.sigma2 - 1.0).abs() < 0.1);
}

#[test]
fn var1_coefficients_are_recovered() {
    // lower triangular, eigenvalues 0.7, 0.4, 0.5
    let a = [[0.7, 0.0, 0.0], [0.3, 0.4, 0.0], [0.0, -0.2, 0.5]];
    let c = [1.0, -0.5, 0.2];
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut y = vec![vec![0.0; 3]];
    for _ in 1..10_000 {
        let prev = y.last().unwrap().clone();
        let next: Vec<f64> = (0..3)
            .map(|r| c[r] + (0..3).map(|k| a[r][k] * prev[k]).sum::<f64>() + noise(&mut rng))
            .collect();
        y.push(next);
    }
    let m = fit_var(&y, 1).unwrap();
    for r in 0..3 {
        for k in 0..3 {
            assert!((m.coefs[0][r][k] - a[r][k]).abs() <= 0.05, "A[{r}][{k}] = {}", m.coefs[0][r][k]);
        }
        assert!((m.intercept[r] - c[r]).abs() <= 0.1);
    }
}

#[test]
fn ar1_forecast_decays_geometrically() {
    let m = ArimaModel {
        phi: [0.6, 0.0],
        theta: [0.0; 2],
        intercept: 4.0,
        sigma2: 1.0,
        stationary: true,
    };
    let mu = 4.0 / 0.4;
    let ctx = [3.0, 12.0, 15.0];
    let f = forecast_arima(&m, &ctx, 8).unwrap();
    for (h, v) in f.iter().enumerate() {
        let want = mu + 0.6f64.powi(h as i32 + 1) * (15.0 - mu);
        assert!((v - want).abs() < 1e-10);
    }
}

#[test]
fn arma22_forecast_by_hand() {
    let (c, p1, p2, t1, t2) = (0.5, 0.4, 0.2, 0.3, -0.1);
    let m = ArimaModel {
        phi: [p1, p2],
        theta: [t1, t2],
        intercept: c,
        sigma2: 1.0,
        stationary: true,
    };
    let y = [1.0, 2.0, 1.5, 3.0];
    // zero innovations before the context's third value
    let e2 = y[2] - c - p1 * y[1] - p2 * y[0];
    let e3 = y[3] - c - p1 * y[2] - p2 * y[1] - t1 * e2;
    let y4 = c + p1 * y[3] + p2 * y[2] + t1 * e3 + t2 * e2;
    let y5 = c + p1 * y4 + p2 * y[3] + t2 * e3;
    let y6 = c + p1 * y5 + p2 * y4;
    let f = forecast_arima(&m, &y, 3).unwrap();
    for (got, want) in f.iter().zip([y4, y5, y6]) {
        assert!((got - want).abs() < 1e-10);
    }
    assert!(forecast_arima(&m, &[1.0], 3).is_err());
}

#[test]
fn var1_forecast_matches_matrix_powers() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
    let c = DVector::from_vec(vec![1.0, 2.0]);
    let m = VarModel {
        lags: 1,
        schema: vec!["a".into(), "b".into()],
        known: vec![false, false],
        intercept: c.iter().copied().collect(),
        coefs: vec![vec![vec![0.5, 0.2], vec![-0.1, 0.3]]],
    };
    let mu = (DMatrix::identity(2, 2) - &a).try_inverse().unwrap() * &c;
    let y0 = DVector::from_vec(vec![4.0, -3.0]);
    let f = forecast_var(&m, &[vec![0.0, 0.0], vec![4.0, -3.0]], 6, None).unwrap();
    let mut power = DMatrix::identity(2, 2);
    for row in &f {
        power = &a * power;
        let want = &mu + &power * (&y0 - &mu);
        for k in 0..2 {
            assert!((row[k] - want[k]).abs() < 1e-10);
        }
    }
}

#[test]
fn known_future_values_are_substituted() {
    let m = VarModel {
        lags: 1,
        schema: vec!["cs".into(), "y".into()],
        known: vec![true, false],
        intercept: vec![0.0, 1.0],
        coefs: vec![vec![vec![0.9, 0.0], vec![0.5, 0.5]]],
    };
    let future = vec![vec![10.0, 0.0], vec![20.0, 0.0], vec![30.0, 0.0]];
    let f = forecast_var(&m, &[vec![0.0, 2.0]], 3, Some(&future)).unwrap();
    let mut prev = [0.0, 2.0];
    for (s, row) in f.iter().enumerate() {
        assert_eq!(row[0], future[s][0]);
        let y = 1.0 + 0.5 * prev[0] + 0.5 * prev[1];
        assert!((row[1] - y).abs() < 1e-12);
        prev = [row[0], row[1]];
    }
    assert!(forecast_var(&m, &[vec![0.0, 2.0]], 4, Some(&future)).is_err());
    assert!(forecast_var(&m, &[vec![0.0]], 1, None).is_err());
}

#[test]
fn checkpoints_round_trip_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let y: Vec<f64> = (0..800).map(|i| (i as f64 / 30.0).sin() + 0.1 * noise(&mut rng)).collect();
    let m = fit_arima(&y, 3).unwrap();
    assert_eq!(ArimaModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    let series: Vec<Vec<f64>> = y.windows(2).map(|w| vec![w[0], w[1] * 2.0 + 0.01 * noise(&mut rng)]).collect();
    let v = fit_var(&series, 3).unwrap();
    assert_eq!(VarModel::from_json(&v.to_json().unwrap()).unwrap(), v);
    assert!(ArimaModel::from_json("{\"phi\": [1]}").is_err());
}

#[test]
fn var_rejects_short_or_degenerate_input() {
    assert!(fit_var(&vec![vec![1.0, 2.0]; 30], 2).is_err());
    // collinear columns
    let s: Vec<Vec<f64>> = (0..500).map(|i| vec![i as f64 % 7.0, 2.0 * (i as f64 % 7.0)]).collect();
    assert!(fit_var(&s, 1).is_err());
    assert!(fit_var(&s, 0).is_err());
}
