use nalgebra::{DMatrix, DVector};
use spirit_core::synthetic::{generate_site, orthogonality_error, Mixing, SitePreset};

#[test]
fn generation_is_deterministic() {
    let cfg = SitePreset::Source.config(3, 4);
    let (a, b) = (generate_site(&cfg).unwrap(), generate_site(&cfg).unwrap());
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.store.to_bytes(), b.store.to_bytes());
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(generate_site(&other).unwrap().dataset.targets(), a.dataset.targets());
}

#[test]
fn mixing_does_not_touch_the_weather() {
    let base = SitePreset::Target.config(1, 3);
    let mut alt = base.clone();
    alt.embedding.mixing = Mixing::Random { seed: 77 };
    let (a, b) = (generate_site(&base).unwrap(), generate_site(&alt).unwrap());
    assert_eq!(a.dataset.targets(), b.dataset.targets());
    assert_eq!(a.attenuation, b.attenuation);
    assert_ne!(a.store.to_bytes(), b.store.to_bytes());
    for out in [&a, &b] {
        assert!(orthogonality_error(&out.mixing, base.embedding.dim) < 1e-9);
    }
}

#[test]
fn ghi_stays_between_zero_and_clear_sky() {
    for preset in [SitePreset::Source, SitePreset::Target] {
        let out = generate_site(&preset.config(0, 10)).unwrap();
        for (s, cs) in out.dataset.samples.iter().zip(&out.clearsky_ghi) {
            assert!(s.target >= 0.0 && s.target <= cs + 1e-9, "{} vs {cs}", s.target);
        }
        assert!(out.attenuation.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}

/// Least-squares R² of predicting `y` from `[1, z]`.
fn probe_r2(z: &[Vec<f64>], y: &[f64]) -> f64 {
    let (n, d) = (z.len(), z[0].len() + 1);
    let x = DMatrix::from_fn(n, d, |r, c| if c == 0 { 1.0 } else { z[r][c - 1] });
    let t = DVector::from_column_slice(y);
    let beta = x.clone().svd(true, true).solve(&t, 1e-12).unwrap();
    let resid = &t - &x * beta;
    let mean = y.iter().sum::<f64>() / n as f64;
    1.0 - resid.norm_squared() / y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
}

#[test]
fn embeddings_linearly_encode_the_sky_state() {
    for preset in [SitePreset::Source, SitePreset::Target] {
        let out = generate_site(&preset.config(2, 20)).unwrap();
        let z: Vec<Vec<f64>> = (0..out.store.len())
            .map(|i| out.store.record(i).1.iter().map(|v| f64::from(*v)).collect())
            .collect();
        for k in 0..out.latent[0].len() {
            let y: Vec<f64> = out.latent.iter().map(|s| s[k]).collect();
            let r2 = probe_r2(&z, &y);
            assert!(r2 > 0.9, "{preset:?} latent {k}: R² {r2}");
        }
    }
}

#[test]
fn presets_differ_in_camera_and_climate() {
    let (a, b) = (SitePreset::Source.config(0, 5), SitePreset::Target.config(0, 5));
    assert_ne!(a.embedding.mixing, b.embedding.mixing);
    assert_eq!(a.embedding.dim, b.embedding.dim);
    assert!(b.meta.location.latitude() > a.meta.location.latitude());
    assert!(b.cloud.long_run_mean < a.cloud.long_run_mean);
    assert_eq!(SitePreset::parse("target").unwrap(), SitePreset::Target);
    assert!(SitePreset::parse("c").is_err());
}

#[test]
fn lead_must_fit_the_cadence() {
    let mut cfg = SitePreset::Source.config(0, 2);
    cfg.cloud.advection_lead_minutes = 25;
    assert!(generate_site(&cfg).is_err());
    cfg.cloud.advection_lead_minutes = 0;
    let out = generate_site(&cfg).unwrap();
    assert!(out.latent.iter().all(|s| s[1] == 0.0));
}
