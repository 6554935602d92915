//! Experiment orchestration: training and evaluation pipelines shared by the
//! zero-shot, fine-tuning, ablation and baseline experiments, plus run
//! records and their aggregation.

mod experiments;
mod records;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, Dataset, ForecastWindow, NormStats, TargetKind, HORIZONS_MINUTES};
use crate::embeddings::{self, EmbeddingStore};
use crate::error::{Error, Result};
use crate::features::{self, AssembledFeatures, FeatureConfig, FeatureSettings, P_CLEARSKY_GHI};
use crate::forecaster::{self, Example, ForecasterConfig, ForecasterModel, InputStats, Pooling, RawWindow, TrainConfig};
use crate::gbdt::{self, GbdtHyper, GbdtModel, KnnRegressor};
use crate::metrics::MetricsReport;

pub use experiments::*;
pub use records::*;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const META_FILE: &str = "site.json";
pub const STORE_FILE: &str = "embeddings.spem";

/// A site on disk: manifest, metadata sidecar and embedding store.
#[derive(Debug, Clone)]
pub struct SiteData {
    pub dataset: Dataset,
    pub store: EmbeddingStore,
}

impl SiteData {
    pub fn new(dataset: Dataset, store: EmbeddingStore) -> Self {
        Self { dataset, store }
    }

    pub fn id(&self) -> &str {
        &self.dataset.meta.site_id
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let dataset = dataset::load_manifest(&dir.join(MANIFEST_FILE), &dir.join(META_FILE))?;
        let store = embeddings::read_store(&dir.join(STORE_FILE))?;
        Ok(Self { dataset, store })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dataset.meta.save(&dir.join(META_FILE))?;
        dataset::write_manifest(&self.dataset, &dir.join(MANIFEST_FILE))?;
        embeddings::write_store(&dir.join(STORE_FILE), &self.store)
    }

    /// Same site restricted to the samples of `ds` (which must come from it).
    pub fn with_dataset(&self, ds: Dataset) -> Self {
        Self {
            dataset: ds,
            store: self.store.clone(),
        }
    }
}

/// Which inputs a model is allowed to see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMask {
    #[default]
    Full,
    /// Embeddings only: auxiliary and physics features and all future
    /// covariates are zero.
    Memorizing,
    /// Future covariates replaced by zeros of the same length.
    NoFutureCovariates,
}

impl InputMask {
    fn zero_row_physics(self) -> bool {
        self == InputMask::Memorizing
    }

    fn zero_covariates(self) -> bool {
        self != InputMask::Full
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    #[default]
    Gbdt,
    Knn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Desk,
    Full,
}

/// Forecaster architecture: a preset with optional overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecasterSpec {
    pub preset: Preset,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub model_dim: Option<usize>,
    pub ff_dim: Option<usize>,
    pub mlp_blocks: Option<usize>,
    pub dropout: f64,
    pub pooling: Pooling,
}

impl Default for ForecasterSpec {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            layers: None,
            heads: None,
            model_dim: None,
            ff_dim: None,
            mlp_blocks: None,
            dropout: 0.0,
            pooling: Pooling::Mean,
        }
    }
}

impl ForecasterSpec {
    pub fn build(&self, fc: &FeatureConfig) -> Result<ForecasterConfig> {
        let mut cfg = match self.preset {
            Preset::Desk => ForecasterConfig::desk(fc),
            Preset::Full => ForecasterConfig::full(fc),
        };
        if let Some(v) = self.model_dim {
            cfg.model_dim = v;
            cfg.ff_dim = 2 * v;
        }
        cfg.layers = self.layers.unwrap_or(cfg.layers);
        cfg.heads = self.heads.unwrap_or(cfg.heads);
        cfg.ff_dim = self.ff_dim.unwrap_or(cfg.ff_dim);
        cfg.mlp_blocks = self.mlp_blocks.unwrap_or(cfg.mlp_blocks);
        cfg.dropout = self.dropout;
        cfg.pooling = self.pooling;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything that determines how models are trained and evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub features: FeatureSettings,
    pub gbdt: GbdtHyper,
    pub regressor: Regressor,
    pub knn_k: usize,
    pub forecaster: ForecasterSpec,
    pub train: TrainConfig,
    /// Head-only optimization settings used when fine-tuning.
    pub finetune: TrainConfig,
    /// Trees appended when fine-tuning the nowcaster.
    pub finetune_trees: usize,
    /// Trailing fraction of source days held out for in-domain evaluation.
    pub holdout_fraction: f64,
    /// Trailing fraction of training days used for GBDT early stopping.
    pub validation_fraction: f64,
    /// Keep every n-th forecast window when training.
    pub window_stride: usize,
    /// Expected target-per-GHI gain when transferring zero-shot to a site
    /// with a different target kind.
    pub pv_gain_hint: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            features: FeatureSettings::default(),
            gbdt: GbdtHyper::default(),
            regressor: Regressor::Gbdt,
            knn_k: KnnRegressor::DEFAULT_K,
            forecaster: ForecasterSpec::default(),
            train: TrainConfig::default(),
            finetune: TrainConfig::default(),
            finetune_trees: 200,
            holdout_fraction: 0.25,
            validation_fraction: 0.1,
            window_stride: 1,
            pv_gain_hint: None,
        }
    }
}

impl PipelineConfig {
    /// Desk-scale settings for the synthetic benchmark: a small forecaster
    /// trained briefly at a high learning rate, and a capped GBDT.
    pub fn benchmark() -> Self {
        let mut cfg = Self::default();
        cfg.gbdt.n_estimators = 300;
        cfg.forecaster.model_dim = Some(32);
        cfg.forecaster.mlp_blocks = Some(4);
        cfg.train.learning_rate = 0.01;
        cfg.train.epochs = 6;
        cfg.finetune.learning_rate = 0.01;
        cfg.finetune.steps = Some(400);
        cfg.window_stride = 4;
        cfg.features.phase_encodings = false;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.gbdt.validate()?;
        self.train.validate()?;
        self.finetune.validate()?;
        if !(0.0 < self.holdout_fraction && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!("holdout_fraction {} outside (0, 1)", self.holdout_fraction)));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return Err(Error::Config(format!("validation_fraction {} outside [0, 0.5)", self.validation_fraction)));
        }
        if self.window_stride == 0 || self.knn_k == 0 {
            return Err(Error::Config("window_stride and knn_k must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Daytime nowcast rows of a site: `(sample index, features, target)`.
#[derive(Debug, Clone, Default)]
pub struct NowcastRows {
    pub index: Vec<usize>,
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl NowcastRows {
    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

fn masked_row(row: &[f64], fc: &FeatureConfig, mask: InputMask) -> Vec<f64> {
    let mut r = row.to_vec();
    if mask.zero_row_physics() {
        r[fc.d..].fill(0.0);
    }
    r
}

pub fn nowcast_rows(site: &SiteData, settings: &FeatureSettings, mask: InputMask) -> NowcastRows {
    let assembled = features::assemble_dataset(&site.dataset, &site.store, settings);
    let mut out = NowcastRows::default();
    for (i, s) in site.dataset.samples.iter().enumerate() {
        if let (true, Some(row)) = (s.is_daytime(), assembled.get(i)) {
            out.index.push(i);
            out.features.push(masked_row(row, &assembled.config, mask));
            out.targets.push(s.target);
        }
    }
    out
}

/// Splits a dataset into leading training days and trailing evaluation days.
pub fn split_tail(ds: &Dataset, tail_fraction: f64) -> (Dataset, Dataset) {
    ds.split_chronological(1.0 - tail_fraction)
}

#[derive(Debug, Clone)]
pub enum Nowcaster {
    Gbdt(GbdtModel),
    Knn { model: KnnRegressor, stats: NormStats, features: FeatureConfig },
}

impl Nowcaster {
    pub fn features(&self) -> FeatureConfig {
        match self {
            Nowcaster::Gbdt(m) => m.features,
            Nowcaster::Knn { features, .. } => *features,
        }
    }

    pub fn target_stats(&self) -> NormStats {
        match self {
            Nowcaster::Gbdt(m) => m.target_stats,
            Nowcaster::Knn { stats, .. } => *stats,
        }
    }

    /// Prediction denormalized with `stats`.
    pub fn predict_with(&self, f: &[f64], stats: NormStats) -> Result<f64> {
        match self {
            Nowcaster::Gbdt(m) => m.predict_with_stats(f, stats),
            Nowcaster::Knn { model, stats: own, .. } => Ok(stats.invert(own.apply(model.predict(f)?))),
        }
    }
}

pub fn train_nowcaster(train: &SiteData, cfg: &PipelineConfig, mask: InputMask, seed: u64) -> Result<Nowcaster> {
    let fc = FeatureConfig::new(train.store.dim(), cfg.features.phase_encodings);
    match cfg.regressor {
        Regressor::Gbdt => {
            let (fit, valid) = if cfg.validation_fraction > 0.0 && cfg.gbdt.early_stopping_rounds > 0 {
                let (a, b) = split_tail(&train.dataset, cfg.validation_fraction);
                (train.with_dataset(a), Some(train.with_dataset(b)))
            } else {
                (train.clone(), None)
            };
            let rows = nowcast_rows(&fit, &cfg.features, mask);
            let vrows = valid.map(|v| nowcast_rows(&v, &cfg.features, mask)).filter(|v| !v.is_empty());
            let validation = vrows.as_ref().map(|v| (v.features.as_slice(), v.targets.as_slice()));
            Ok(Nowcaster::Gbdt(gbdt::train_gbdt(&rows.features, &rows.targets, fc, &cfg.gbdt, validation, seed)?))
        }
        Regressor::Knn => {
            let rows = nowcast_rows(train, &cfg.features, mask);
            Ok(Nowcaster::Knn {
                model: KnnRegressor::fit(&rows.features, &rows.targets, cfg.knn_k)?,
                stats: NormStats::fit_or_unit(&rows.targets),
                features: fc,
            })
        }
    }
}

/// Continued boosting on a fine-tuning split; KNN simply absorbs the new rows.
pub fn finetune_nowcaster(
    model: &Nowcaster,
    data: &SiteData,
    cfg: &PipelineConfig,
    mask: InputMask,
    stats: NormStats,
    seed: u64,
) -> Result<Nowcaster> {
    let rows = nowcast_rows(data, &cfg.features, mask);
    if rows.is_empty() {
        return Ok(model.clone());
    }
    match model {
        Nowcaster::Gbdt(m) => Ok(Nowcaster::Gbdt(gbdt::continue_boosting(
            m,
            &rows.features,
            &rows.targets,
            stats,
            cfg.finetune_trees,
            None,
            seed,
        )?)),
        Nowcaster::Knn { features, .. } => Ok(Nowcaster::Knn {
            model: KnnRegressor::fit(&rows.features, &rows.targets, cfg.knn_k)?,
            stats: NormStats::fit_or_unit(&rows.targets),
            features: *features,
        }),
    }
}

pub fn evaluate_nowcaster(model: &Nowcaster, site: &SiteData, cfg: &PipelineConfig, mask: InputMask, stats: NormStats) -> Result<MetricsReport> {
    let fc = FeatureConfig::new(site.store.dim(), cfg.features.phase_encodings);
    model.features().ensure_matches(&fc)?;
    let rows = nowcast_rows(site, &cfg.features, mask);
    let pred = rows
        .features
        .iter()
        .map(|f| model.predict_with(f, stats))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::nowcast(site.dataset.meta.target_kind.units(), &rows.targets, &pred)
}

/// Forecast windows whose last context sample is daytime and whose context
/// samples all have features.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub windows: Vec<ForecastWindow>,
    pub raw: Vec<RawWindow>,
    /// Per window and horizon: whether the horizon sample is daytime.
    pub daytime: Vec<Vec<bool>>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

fn raw_window(w: &ForecastWindow, ds: &Dataset, assembled: &AssembledFeatures, settings: &FeatureSettings, mask: InputMask) -> Result<Option<RawWindow>> {
    let mut context = Vec::with_capacity(w.context.len());
    for &k in &w.context {
        match assembled.get(k) {
            Some(row) => context.push(masked_row(row, &assembled.config, mask)),
            None => return Ok(None),
        }
    }
    let cov = features::build_covariates(w, ds, settings)?;
    Ok(Some(RawWindow {
        context,
        covariates: cov.values,
        clearsky_ghi: cov.clearsky_ghi,
        target: w.horizon.iter().map(|&k| ds.samples[k].target).collect(),
    }))
}

pub fn forecast_windows(site: &SiteData, settings: &FeatureSettings, mask: InputMask, stride: usize) -> Result<WindowSet> {
    let ds = &site.dataset;
    let assembled = features::assemble_dataset(ds, &site.store, settings);
    let mut out = WindowSet::default();
    let all = dataset::build_forecast_windows(ds, dataset::CONTEXT_STEPS, &HORIZONS_MINUTES);
    for w in all.into_iter().filter(|w| ds.samples[w.last_context()].is_daytime()).step_by(stride.max(1)) {
        if let Some(raw) = raw_window(&w, ds, &assembled, settings, mask)? {
            out.daytime.push(w.horizon.iter().map(|&k| ds.samples[k].is_daytime()).collect());
            out.raw.push(raw);
            out.windows.push(w);
        }
    }
    Ok(out)
}

/// Network inputs for a window set, with the ablation applied after
/// standardization so it yields exact zeros of the original length.
pub fn examples(model: &ForecasterModel, set: &WindowSet, mask: InputMask, stats: NormStats) -> Result<Vec<Example>> {
    set.raw
        .iter()
        .map(|raw| {
            let mut ex = model.example_with(raw, stats)?;
            if mask.zero_covariates() {
                ex.input.covariates.fill(0.0);
            }
            Ok(ex)
        })
        .collect()
}

fn daytime_targets(set: &WindowSet) -> Vec<f64> {
    let mut ys = Vec::new();
    for (raw, day) in set.raw.iter().zip(&set.daytime) {
        ys.extend(raw.target.iter().zip(day).filter(|(_, d)| **d).map(|(y, _)| *y));
    }
    ys
}

/// Fresh forecaster with input and target statistics fit on `train`.
pub fn init_forecaster(train: &SiteData, set: &WindowSet, cfg: &PipelineConfig, seed: u64) -> Result<ForecasterModel> {
    let fc = FeatureConfig::new(train.store.dim(), cfg.features.phase_encodings);
    let fcfg = cfg.forecaster.build(&fc)?;
    let mut model = ForecasterModel::init(fcfg, fc, seed)?;
    model.input_stats = InputStats::fit(&set.raw, &fcfg)?;
    model.target_stats = NormStats::fit_or_unit(&daytime_targets(set));
    Ok(model)
}

pub fn train_forecaster(train: &SiteData, cfg: &PipelineConfig, mask: InputMask, seed: u64) -> Result<(ForecasterModel, forecaster::TrainReport)> {
    let set = forecast_windows(train, &cfg.features, mask, cfg.window_stride)?;
    if set.is_empty() {
        return Err(Error::invalid(format!("{}: no forecast windows to train on", train.id())));
    }
    let mut model = init_forecaster(train, &set, cfg, seed)?;
    let ex = examples(&model, &set, mask, model.target_stats)?;
    let tc = TrainConfig { seed, ..cfg.train };
    let report = forecaster::train(&mut model, &ex, &tc)?;
    Ok((model, report))
}

/// Head-only fine-tuning on `data`; returns the input model unchanged when
/// there are no windows.
pub fn finetune_forecaster(
    model: &ForecasterModel,
    data: &SiteData,
    cfg: &PipelineConfig,
    mask: InputMask,
    stats: NormStats,
    seed: u64,
) -> Result<ForecasterModel> {
    let set = forecast_windows(data, &cfg.features, mask, cfg.window_stride)?;
    let mut out = model.clone();
    out.target_stats = stats;
    let ex = examples(&out, &set, mask, stats)?;
    let tc = TrainConfig { seed, ..cfg.finetune };
    forecaster::finetune_head(&mut out, &ex, &tc)?;
    Ok(out)
}

/// Per-horizon predictions in physical units for every window.
pub fn predict_windows(model: &ForecasterModel, set: &WindowSet, mask: InputMask, stats: NormStats) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    let ex = examples(model, set, mask, stats)?;
    ex.par_iter()
        .map(|e| Ok(model.forward(&e.input)?.iter().map(|&z| stats.invert(z)).collect()))
        .collect()
}

/// Daytime horizon samples only.
pub fn forecast_report(units: &str, set: &WindowSet, preds: &[Vec<f64>]) -> Result<MetricsReport> {
    let h = HORIZONS_MINUTES.len();
    let mut y = vec![Vec::new(); h];
    let mut yhat = vec![Vec::new(); h];
    for ((raw, day), p) in set.raw.iter().zip(&set.daytime).zip(preds) {
        for j in 0..h {
            if day[j] {
                y[j].push(raw.target[j]);
                yhat[j].push(p[j]);
            }
        }
    }
    MetricsReport::forecast(units, &HORIZONS_MINUTES, &y, &yhat)
}

pub fn evaluate_forecaster(model: &ForecasterModel, site: &SiteData, cfg: &PipelineConfig, mask: InputMask, stats: NormStats) -> Result<MetricsReport> {
    let fc = FeatureConfig::new(site.store.dim(), cfg.features.phase_encodings);
    model.features.ensure_matches(&fc)?;
    let set = forecast_windows(site, &cfg.features, mask, 1)?;
    let preds = predict_windows(model, &set, mask, stats)?;
    forecast_report(site.dataset.meta.target_kind.units(), &set, &preds)
}

/// Target statistics for zero-shot evaluation on `target`: the source's own
/// for the same target kind, otherwise the source's scaled by the ratio of
/// mean daytime clear-sky GHI and by `pv_gain_hint`.
pub fn zero_shot_stats(source_stats: NormStats, source: &SiteData, target: &SiteData, cfg: &PipelineConfig) -> Result<NormStats> {
    let (sk, tk) = (source.dataset.meta.target_kind, target.dataset.meta.target_kind);
    if sk == tk {
        return Ok(source_stats);
    }
    let gain = cfg
        .pv_gain_hint
        .ok_or_else(|| Error::Config(format!("zero-shot transfer from {sk} to {tk} needs pv_gain_hint")))?;
    let gain = if tk == TargetKind::Pv { gain } else { 1.0 / gain };
    let mean_cs = |site: &SiteData| {
        let offset = site.store.dim() + features::AUX_DIM + P_CLEARSKY_GHI;
        let rows = nowcast_rows(site, &cfg.features, InputMask::Full);
        mean(&rows.features.iter().map(|f| f[offset]).collect::<Vec<_>>())
    };
    let r = gain * mean_cs(target) / mean_cs(source);
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::Numerical(format!("clear-sky scale {r} for {}", target.id())));
    }
    Ok(NormStats {
        mean: source_stats.mean * r,
        std: source_stats.std * r,
    })
}

/// Statistics for a fine-tuned model: refit on the fine-tune split when the
/// task changed, otherwise the source's.
pub fn finetune_stats(source_stats: NormStats, source: &SiteData, finetune: &SiteData) -> NormStats {
    if source.dataset.meta.target_kind == finetune.dataset.meta.target_kind {
        return source_stats;
    }
    let rows: Vec<f64> = finetune
        .dataset
        .samples
        .iter()
        .filter(|s| s.is_daytime())
        .map(|s| s.target)
        .collect();
    NormStats::fit_or_unit(&rows)
}
