use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spirit_core::features::FeatureConfig;
use spirit_core::gbdt::{continue_boosting, train_gbdt, GbdtHyper, GbdtModel, KnnRegressor, Node};
use spirit_core::ErrorKind;

fn header(d: usize) -> FeatureConfig {
    FeatureConfig {
        d,
        k: 0,
        p: 0,
        feature_schema_version: 1,
        phase_encodings: false,
    }
}

fn hyper(depth: usize, lr: f64, rounds: usize) -> GbdtHyper {
    GbdtHyper {
        max_depth: depth,
        learning_rate: lr,
        n_estimators: rounds,
        subsample: 1.0,
        colsample_bytree: 1.0,
        gamma: 0.0,
        lambda: 0.0,
        early_stopping_rounds: 0,
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn rmse(model: &GbdtModel, x: &[Vec<f64>], y: &[f64]) -> f64 {
    let se: f64 = x.iter().zip(y).map(|(r, t)| (model.predict(r).unwrap() - t).powi(2)).sum();
    (se / y.len() as f64).sqrt()
}

#[test]
fn stumps_fit_a_step() {
    let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64 / 200.0]).collect();
    let y: Vec<f64> = x.iter().map(|r| if r[0] > 0.5 { 1.0 } else { 0.0 }).collect();
    let model = train_gbdt(&x, &y, header(1), &hyper(1, 0.3, 60), None, 0).unwrap();
    assert!(rmse(&model, &x, &y) < 1e-3);
    assert!(model.trees.iter().all(|t| t.depth() <= 1));
    let root = model.trees[0].nodes[0];
    assert!(root.threshold > 0.5 && root.threshold <= 0.505, "split at {}", root.threshold);
}

fn walk(nodes: &[Node], i: usize, x: &[f64]) -> f64 {
    let n = nodes[i];
    if n.feature < 0 {
        n.value
    } else if x[n.feature as usize] < n.threshold {
        walk(nodes, n.left as usize, x)
    } else {
        walk(nodes, n.right as usize, x)
    }
}

#[test]
fn prediction_equals_manual_tree_walk() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_rows(&mut rng, 400, 5);
    let y: Vec<f64> = x.iter().map(|r| 100.0 + 50.0 * (3.0 * r[0]).sin() + 20.0 * r[1] * r[2]).collect();
    let h = GbdtHyper { subsample: 0.8, colsample_bytree: 0.8, lambda: 1.0, ..hyper(3, 0.1, 80) };
    let model = train_gbdt(&x, &y, header(5), &h, None, 7).unwrap();
    let back = GbdtModel::from_bytes(&model.to_bytes().unwrap()).unwrap();
    for r in random_rows(&mut rng, 500, 5) {
        let sum: f64 = model.trees.iter().map(|t| walk(&t.nodes, 0, &r)).sum();
        let z = model.base_score + h.learning_rate * sum;
        let want = z * model.target_stats.std + model.target_stats.mean;
        assert!((model.predict(&r).unwrap() - want).abs() < 1e-9);
        assert_eq!(back.predict(&r).unwrap().to_bits(), model.predict(&r).unwrap().to_bits());
    }
    assert!(model.trees.iter().all(|t| t.depth() <= 3));
}

#[test]
fn training_is_byte_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_rows(&mut rng, 300, 4);
    let y: Vec<f64> = x.iter().map(|r| r[0] * 3.0 + r[3].abs() + rng.random_range(0.0..0.1)).collect();
    let h = GbdtHyper { subsample: 0.7, colsample_bytree: 0.5, ..hyper(4, 0.1, 40) };
    let a = train_gbdt(&x, &y, header(4), &h, None, 11).unwrap().to_bytes().unwrap();
    let b = train_gbdt(&x, &y, header(4), &h, None, 11).unwrap().to_bytes().unwrap();
    let c = train_gbdt(&x, &y, header(4), &h, None, 12).unwrap().to_bytes().unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(&a[..4], b"SPGB");
}

#[test]
fn early_stopping_truncates_to_best_round() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_rows(&mut rng, 200, 3);
    let y: Vec<f64> = x.iter().map(|_| rng.random_range(0.0..1.0)).collect();
    let vx = random_rows(&mut rng, 100, 3);
    let vy: Vec<f64> = vx.iter().map(|_| rng.random_range(0.0..1.0)).collect();
    let h = GbdtHyper { early_stopping_rounds: 10, ..hyper(6, 0.3, 500) };
    let model = train_gbdt(&x, &y, header(3), &h, Some((&vx, &vy)), 0).unwrap();
    assert!(model.trees.len() < 100, "{} trees on pure noise", model.trees.len());
}

#[test]
fn continued_boosting_keeps_existing_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = random_rows(&mut rng, 200, 2);
    let y: Vec<f64> = x.iter().map(|r| 10.0 + r[0] - r[1]).collect();
    let base = train_gbdt(&x, &y, header(2), &hyper(2, 0.1, 10), None, 0).unwrap();
    let more = continue_boosting(&base, &x, &y, base.target_stats, 30, None, 0).unwrap();
    assert_eq!(&more.trees[..10], &base.trees[..]);
    assert_eq!(more.trees.len(), 40);
    assert!(rmse(&more, &x, &y) < rmse(&base, &x, &y));
}

#[test]
fn shape_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_rows(&mut rng, 50, 3);
    let y = vec![1.0; 50];
    let model = train_gbdt(&x, &y, header(3), &hyper(2, 0.1, 5), None, 0).unwrap();
    assert_eq!(model.predict(&[0.0, 1.0]).unwrap_err().kind(), ErrorKind::Data);
    assert!(train_gbdt(&x, &y, header(4), &hyper(2, 0.1, 5), None, 0).is_err());
    assert!(train_gbdt(&x[..5], &y[..5], header(3), &hyper(2, 0.1, 5), None, 0).is_err());
    let mut bytes = model.to_bytes().unwrap();
    bytes[0] = b'X';
    assert!(GbdtModel::from_bytes(&bytes).is_err());
    assert!(GbdtModel::from_bytes(&model.to_bytes().unwrap()[..20]).is_err());
}

#[test]
fn knn_reproduces_training_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_rows(&mut rng, 60, 3);
    let y: Vec<f64> = (0..60).map(|i| i as f64).collect();
    let knn = KnnRegressor::fit(&x, &y, 5).unwrap();
    for (r, t) in x.iter().zip(&y) {
        assert_eq!(knn.predict(r).unwrap(), *t);
    }
    assert!(knn.predict(&[0.0]).is_err());
}
