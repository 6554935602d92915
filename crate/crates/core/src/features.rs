//! Per-timestamp feature vectors `Z ⊕ A ⊕ P` and per-window future covariates.

use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ForecastWindow, Sample, SiteMeta};
use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::solar::{self, ClearSkyConfig, SolarAngles};

pub const FEATURE_SCHEMA_VERSION: u32 = 1;

/// Auxiliary features per sample: zenith and azimuth.
pub const AUX_DIM: usize = 2;

const PHYSICS_BASE_DIM: usize = 5;
const PHASE_DIM: usize = 4;

/// Index of clear-sky GHI inside the physics block.
pub const P_CLEARSKY_GHI: usize = 0;
pub const P_CLEARSKY_DNI: usize = 1;
pub const P_CLEARSKY_DHI: usize = 2;
pub const P_COS_INCIDENCE: usize = 3;
pub const P_POA: usize = 4;

/// Persisted beside every model; inputs with a different header are refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConfig {
    pub d: usize,
    pub k: usize,
    pub p: usize,
    pub feature_schema_version: u32,
    pub phase_encodings: bool,
}

impl FeatureConfig {
    pub fn new(d: usize, phase_encodings: bool) -> Self {
        Self {
            d,
            k: AUX_DIM,
            p: physics_dim(phase_encodings),
            feature_schema_version: FEATURE_SCHEMA_VERSION,
            phase_encodings,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d + self.k + self.p
    }

    /// Width of one per-horizon covariate block.
    pub fn q(&self) -> usize {
        self.k + self.p
    }

    pub fn z_range(&self) -> std::ops::Range<usize> {
        0..self.d
    }

    pub fn aux_range(&self) -> std::ops::Range<usize> {
        self.d..self.d + self.k
    }

    pub fn physics_range(&self) -> std::ops::Range<usize> {
        self.d + self.k..self.input_dim()
    }

    pub fn ensure_matches(&self, other: &FeatureConfig) -> Result<()> {
        if self != other {
            return Err(Error::Config(format!(
                "feature-config mismatch: model expects {self:?}, inputs are {other:?}"
            )));
        }
        Ok(())
    }
}

pub fn physics_dim(phase_encodings: bool) -> usize {
    PHYSICS_BASE_DIM + if phase_encodings { PHASE_DIM } else { 0 }
}

/// Choices that shape the physics block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSettings {
    pub clearsky: ClearSkyConfig,
    pub phase_encodings: bool,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            clearsky: ClearSkyConfig::default(),
            phase_encodings: true,
        }
    }
}

/// `[cs_ghi, cs_dni, cs_dhi, cos_incidence, poa, (sin/cos day-of-year,
/// sin/cos time-of-day)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsFeatures(pub Vec<f64>);

impl PhysicsFeatures {
    pub fn clearsky_ghi(&self) -> f64 {
        self.0[P_CLEARSKY_GHI]
    }
}

/// Fractional day-of-year and time-of-day phases in local civil time.
pub fn phases(ts: DateTime<Utc>, meta: &SiteMeta) -> (f64, f64) {
    let local = (ts + meta.utc_offset()).naive_utc();
    let tod = f64::from(local.num_seconds_from_midnight()) / 86_400.0;
    let doy = (f64::from(local.ordinal0()) + tod) / 365.25;
    (doy, tod)
}

pub fn physics_features(ts: DateTime<Utc>, meta: &SiteMeta, sun: SolarAngles, settings: &FeatureSettings) -> PhysicsFeatures {
    let cs = solar::clearsky_for_sun(sun, ts.ordinal(), settings.clearsky);
    let cos_inc = solar::cos_incidence(sun, meta.panel);
    let poa = solar::plane_of_array(cs, sun, meta.panel);
    let mut p = Vec::with_capacity(physics_dim(settings.phase_encodings));
    p.extend([cs.ghi, cs.dni, cs.dhi, cos_inc, poa]);
    if settings.phase_encodings {
        let tau = std::f64::consts::TAU;
        let (doy, tod) = phases(ts, meta);
        p.extend([(tau * doy).sin(), (tau * doy).cos(), (tau * tod).sin(), (tau * tod).cos()]);
    }
    PhysicsFeatures(p)
}

fn concat(z: &[f32], sample: &Sample, meta: &SiteMeta, settings: &FeatureSettings) -> Vec<f64> {
    let physics = physics_features(sample.timestamp, meta, sample.sun(), settings);
    let mut f = Vec::with_capacity(z.len() + AUX_DIM + physics.0.len());
    f.extend(z.iter().map(|&v| f64::from(v)));
    f.extend(sample.aux());
    f.extend(physics.0);
    f
}

/// `f = Z ⊕ A ⊕ P` for one sample.
pub fn assemble_feature(
    sample: &Sample,
    store: &EmbeddingStore,
    meta: &SiteMeta,
    settings: &FeatureSettings,
) -> Result<Vec<f64>> {
    let key = sample
        .embedding_key
        .ok_or_else(|| Error::MissingEmbedding(sample.timestamp.timestamp()))?;
    let z = store.lookup(key)?;
    Ok(concat(z, sample, meta, settings))
}

/// Feature rows for a whole dataset, aligned with `ds.samples`.
#[derive(Debug, Clone)]
pub struct AssembledFeatures {
    pub config: FeatureConfig,
    pub rows: Vec<Option<Vec<f64>>>,
    pub dropped: usize,
}

impl AssembledFeatures {
    pub fn get(&self, i: usize) -> Option<&[f64]> {
        self.rows[i].as_deref()
    }
}

/// Assembles every sample. Interpolated samples take the mean of their
/// neighbours' embeddings; samples whose embedding cannot be resolved are
/// dropped and counted.
pub fn assemble_dataset(ds: &Dataset, store: &EmbeddingStore, settings: &FeatureSettings) -> AssembledFeatures {
    let config = FeatureConfig::new(store.dim(), settings.phase_encodings);
    let lookup = |s: &Sample| s.embedding_key.and_then(|k| store.lookup(k).ok());
    let mut dropped = 0;
    let rows = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let embedding: Option<Vec<f32>> = match lookup(s) {
                Some(z) => Some(z.to_vec()),
                None if s.interpolated && i > 0 && i + 1 < ds.samples.len() => {
                    match (lookup(&ds.samples[i - 1]), lookup(&ds.samples[i + 1])) {
                        (Some(a), Some(b)) => Some(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()),
                        _ => None,
                    }
                }
                None => None,
            };
            let row = embedding.map(|z| concat(&z, s, &ds.meta, settings));
            if row.is_none() {
                dropped += 1;
            }
            row
        })
        .collect();
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} samples without embeddings", ds.meta.site_id);
    }
    AssembledFeatures { config, rows, dropped }
}

/// Future covariates for one window plus the clear-sky GHI at each horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    pub values: Vec<f64>,
    pub clearsky_ghi: Vec<f64>,
}

/// Covariate blocks `[A, P]` recomputed from solar geometry at each
/// timestamp; depends on nothing but the timestamps and site metadata.
pub fn covariates_at(timestamps: &[DateTime<Utc>], meta: &SiteMeta, settings: &FeatureSettings) -> Result<Covariates> {
    let q = AUX_DIM + physics_dim(settings.phase_encodings);
    let mut values = Vec::with_capacity(q * timestamps.len());
    let mut clearsky_ghi = Vec::with_capacity(timestamps.len());
    for &ts in timestamps {
        let sun = solar::solar_position(ts, meta.location)?;
        let p = physics_features(ts, meta, sun, settings);
        values.extend([sun.zenith, sun.azimuth]);
        clearsky_ghi.push(p.clearsky_ghi());
        values.extend(p.0);
    }
    Ok(Covariates { values, clearsky_ghi })
}

pub fn build_covariates(window: &ForecastWindow, ds: &Dataset, settings: &FeatureSettings) -> Result<Covariates> {
    let stamps: Vec<DateTime<Utc>> = window.horizon.iter().map(|&k| ds.samples[k].timestamp).collect();
    covariates_at(&stamps, &ds.meta, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TargetKind;
    use crate::solar::{GeoLocation, PanelOrientation};
    use chrono::TimeZone;

    fn meta(tilt: f64) -> SiteMeta {
        SiteMeta::new(
            "f",
            GeoLocation::new(39.74, -105.18).unwrap(),
            PanelOrientation::new(tilt, 180.0).unwrap(),
            10,
            TargetKind::Ghi,
            None,
        )
        .unwrap()
    }

    #[test]
    fn night_physics_are_dark_but_phased() {
        let m = meta(20.0);
        let ts = Utc.with_ymd_and_hms(2020, 6, 21, 7, 0, 0).unwrap();
        let sun = solar::solar_position(ts, m.location).unwrap();
        let p = physics_features(ts, &m, sun, &FeatureSettings::default());
        assert_eq!(&p.0[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(p.0[P_POA], 0.0);
        assert!(p.0[5..].iter().all(|v| (-1.0..=1.0).contains(v)));
        let norm = p.0[7].powi(2) + p.0[8].powi(2);
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizontal_panel_poa_equals_ghi() {
        let m = meta(0.0);
        let ts = Utc.with_ymd_and_hms(2020, 6, 21, 18, 0, 0).unwrap();
        let sun = solar::solar_position(ts, m.location).unwrap();
        let p = physics_features(ts, &m, sun, &FeatureSettings::default());
        assert!((p.0[P_POA] - p.0[P_CLEARSKY_GHI]).abs() < 1e-9);
    }

    #[test]
    fn layout_with_small_store() {
        let m = meta(10.0);
        let ts = Utc.with_ymd_and_hms(2020, 6, 21, 18, 0, 0).unwrap();
        let store = EmbeddingStore::from_records(4, vec![(ts.timestamp(), vec![1.0, 2.0, 3.0, 4.0])]).unwrap();
        let s = Sample {
            timestamp: ts,
            embedding_key: Some(ts.timestamp()),
            zenith_deg: 20.0,
            azimuth_deg: 150.0,
            target: 900.0,
            interpolated: false,
            image_path: None,
        };
        let f = assemble_feature(&s, &store, &m, &FeatureSettings::default()).unwrap();
        assert_eq!(f.len(), 15);
        assert_eq!(&f[..4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&f[4..6], &[20.0, 150.0]);
        let missing = Sample {
            embedding_key: Some(0),
            ..s
        };
        assert!(assemble_feature(&missing, &store, &m, &FeatureSettings::default()).is_err());
    }

    #[test]
    fn full_scale_dimension() {
        let cfg = FeatureConfig::new(1280, true);
        // 1280 image features plus our 11 auxiliary and physics entries
        assert_eq!(cfg.input_dim(), 1291);
        assert_eq!(cfg.q() * 4, 44);
        assert_eq!(FeatureConfig::new(68, false).p, 5);
    }

    #[test]
    fn header_mismatch_refused() {
        let a = FeatureConfig::new(16, true);
        let b = FeatureConfig::new(16, false);
        assert!(a.ensure_matches(&a).is_ok());
        assert!(a.ensure_matches(&b).is_err());
    }
}
