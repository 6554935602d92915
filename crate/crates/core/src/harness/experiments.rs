use std::collections::BTreeSet;
use std::time::Instant;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::*;
use crate::baselines::{self, ArimaModel, VarModel};
use crate::dataset::{Sample, WeekSelection};
use crate::features::{P_CLEARSKY_DHI, P_CLEARSKY_DNI};
use crate::metrics::MetricsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tasks {
    pub nowcast: bool,
    pub forecast: bool,
}

impl Tasks {
    pub const BOTH: Tasks = Tasks {
        nowcast: true,
        forecast: true,
    };
    pub const NOWCAST: Tasks = Tasks {
        nowcast: true,
        forecast: false,
    };
    pub const FORECAST: Tasks = Tasks {
        nowcast: false,
        forecast: true,
    };

    pub fn has(&self, task: Task) -> bool {
        match task {
            Task::Nowcast => self.nowcast,
            Task::Forecast => self.forecast,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nowcast" => Ok(Self::NOWCAST),
            "forecast" => Ok(Self::FORECAST),
            "both" => Ok(Self::BOTH),
            other => Err(Error::Config(format!("unknown task '{other}' (expected nowcast, forecast or both)"))),
        }
    }
}

/// Models trained on the leading part of a source site.
#[derive(Debug, Clone)]
pub struct SourceModels {
    pub seed: u64,
    pub mask: InputMask,
    pub nowcaster: Option<Nowcaster>,
    pub forecaster: Option<ForecasterModel>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub comparisons: Vec<PairedComparison>,
}

impl ExperimentOutput {
    pub fn find(&self, task: Task, variant: &str, weeks: Option<usize>, seed: u64, evaluated_on: &str) -> Option<&RunRecord> {
        self.records.iter().find(|r| {
            r.task == task && r.variant == variant && r.weeks == weeks && r.seeds.train == seed && r.evaluated_on == evaluated_on
        })
    }

    fn extend(&mut self, other: ExperimentOutput) {
        self.records.extend(other.records);
        self.comparisons.extend(other.comparisons);
    }
}

pub const EVAL_SOURCE_HOLDOUT: &str = "source_holdout";
pub const EVAL_TARGET: &str = "target";
pub const EVAL_TARGET_REMAINDER: &str = "target_remainder";

/// (train, holdout) split of the source by trailing days.
pub fn source_split(source: &SiteData, cfg: &PipelineConfig) -> (SiteData, SiteData) {
    let (a, b) = split_tail(&source.dataset, cfg.holdout_fraction);
    (source.with_dataset(a), source.with_dataset(b))
}

pub fn train_source(source: &SiteData, cfg: &PipelineConfig, tasks: Tasks, mask: InputMask, seed: u64) -> Result<SourceModels> {
    cfg.validate()?;
    let (train, _) = source_split(source, cfg);
    let nowcaster = if tasks.nowcast {
        Some(train_nowcaster(&train, cfg, mask, seed)?)
    } else {
        None
    };
    let forecaster = if tasks.forecast {
        Some(train_forecaster(&train, cfg, mask, seed)?.0)
    } else {
        None
    };
    Ok(SourceModels {
        seed,
        mask,
        nowcaster,
        forecaster,
    })
}

fn nowcaster_bytes(m: &Nowcaster) -> Result<Option<Vec<u8>>> {
    match m {
        Nowcaster::Gbdt(g) => g.to_bytes().map(Some),
        Nowcaster::Knn { .. } => Ok(None),
    }
}

fn checkpoint(name: &'static str, bytes: Option<Vec<u8>>) -> Option<Checkpoint<'static>> {
    bytes.map(|bytes| Checkpoint { file_name: name, bytes })
}

pub const NOWCASTER_CHECKPOINT: &str = "nowcaster.spgb";
pub const FORECASTER_CHECKPOINT: &str = "forecaster.spfc";

/// Fields shared by every record of one experiment call.
struct RecordBase<'a> {
    kind: ExperimentKind,
    cfg: &'a PipelineConfig,
    hash: String,
    source: &'a str,
    data_seed: Option<u64>,
    sink: &'a RunSink,
}

impl<'a> RecordBase<'a> {
    fn new(kind: ExperimentKind, cfg: &'a PipelineConfig, source: &'a str, data_seed: Option<u64>, sink: &'a RunSink) -> Self {
        Self {
            kind,
            cfg,
            hash: cfg.hash(),
            source,
            data_seed,
            sink,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn emit(
        &self,
        out: &mut ExperimentOutput,
        task: Task,
        variant: &str,
        target: &str,
        evaluated_on: &str,
        weeks: Option<usize>,
        seed: u64,
        report: MetricsReport,
        frozen: Option<bool>,
        ck: Option<Checkpoint<'_>>,
        started: Instant,
    ) -> Result<()> {
        let eval_tag = if evaluated_on == EVAL_SOURCE_HOLDOUT { "holdout" } else { "target" };
        let run_id = RunRecord::make_id(
            self.kind,
            task,
            &format!("{variant}-{eval_tag}"),
            self.source,
            target,
            weeks,
            seed,
            &self.hash,
        );
        let mut record = RunRecord {
            run_id,
            kind: self.kind,
            task,
            variant: variant.to_string(),
            source_site: self.source.to_string(),
            target_site: target.to_string(),
            evaluated_on: evaluated_on.to_string(),
            weeks,
            seeds: Seeds {
                data: self.data_seed,
                split: seed,
                train: seed,
            },
            config_hash: self.hash.clone(),
            checkpoint: None,
            frozen_parameters_intact: frozen,
            report,
        };
        self.sink.persist(&mut record, self.cfg, ck, started.elapsed().as_secs_f64())?;
        out.records.push(record);
        Ok(())
    }
}

fn check_dims(source: &SiteData, target: &SiteData) -> Result<()> {
    if source.store.dim() != target.store.dim() {
        return Err(Error::DimMismatch {
            expected: source.store.dim(),
            got: target.store.dim(),
        });
    }
    Ok(())
}

/// Trains on the source and evaluates on the source holdout and on the
/// target with no target-side updates. With `control`, a memorizing
/// control (physics features and covariates zeroed) is run alongside.
#[allow(clippy::too_many_arguments)]
pub fn run_zero_shot(
    source: &SiteData,
    target: &SiteData,
    cfg: &PipelineConfig,
    tasks: Tasks,
    seed: u64,
    control: bool,
    data_seed: Option<u64>,
    sink: &RunSink,
) -> Result<(ExperimentOutput, Vec<SourceModels>)> {
    check_dims(source, target)?;
    let base = RecordBase::new(ExperimentKind::ZeroShot, cfg, source.id(), data_seed, sink);
    let (_, holdout) = source_split(source, cfg);
    let same_site = source.id() == target.id();
    let mut out = ExperimentOutput::default();
    let mut trained = Vec::new();
    let variants: &[(&str, InputMask)] = if control {
        &[("spirit", InputMask::Full), ("memorizing_control", InputMask::Memorizing)]
    } else {
        &[("spirit", InputMask::Full)]
    };
    for &(variant, mask) in variants {
        let started = Instant::now();
        let models = train_source(source, cfg, tasks, mask, seed)?;
        let mut evals: Vec<(&SiteData, &str)> = vec![(&holdout, EVAL_SOURCE_HOLDOUT)];
        if !same_site {
            evals.push((target, EVAL_TARGET));
        }
        for (site, on) in evals {
            if let Some(m) = &models.nowcaster {
                let before = nowcaster_bytes(m)?;
                let stats = zero_shot_stats(m.target_stats(), source, site, cfg)?;
                let report = evaluate_nowcaster(m, site, cfg, mask, stats)?;
                let after = nowcaster_bytes(m)?;
                base.emit(&mut out, Task::Nowcast, variant, site.id(), on, None, seed, report, Some(before == after), checkpoint(NOWCASTER_CHECKPOINT, after), started)?;
            }
            if let Some(m) = &models.forecaster {
                let before = m.to_bytes()?;
                let stats = zero_shot_stats(m.target_stats, source, site, cfg)?;
                let report = evaluate_forecaster(m, site, cfg, mask, stats)?;
                let after = m.to_bytes()?;
                base.emit(&mut out, Task::Forecast, variant, site.id(), on, None, seed, report, Some(before == after), checkpoint(FORECASTER_CHECKPOINT, Some(after)), started)?;
            }
        }
        trained.push(models);
    }
    Ok((out, trained))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub weeks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub tasks: Tasks,
    #[serde(default)]
    pub selection: WeekSelection,
}

fn dates_of(ds: &Dataset) -> BTreeSet<NaiveDate> {
    ds.dates().into_iter().collect()
}

fn subset_windows(set: &WindowSet, preds: &[Vec<f64>], keep: &BTreeSet<NaiveDate>) -> (WindowSet, Vec<Vec<f64>>) {
    let mut sub = WindowSet::default();
    let mut p = Vec::new();
    for i in 0..set.len() {
        if keep.contains(&set.windows[i].day) {
            sub.windows.push(set.windows[i].clone());
            sub.raw.push(set.raw[i].clone());
            sub.daytime.push(set.daytime[i].clone());
            p.push(preds[i].clone());
        }
    }
    (sub, p)
}

/// Week-limited fine-tuning. For every seed and weeks value the target is
/// split by ISO week; the fine-tuned model and the zero-shot model are both
/// evaluated on the remainder, and the pair is tested per weeks value.
pub fn run_finetune_sweep(
    source: &SiteData,
    target: &SiteData,
    spec: &SweepSpec,
    cfg: &PipelineConfig,
    pretrained: &[SourceModels],
    data_seed: Option<u64>,
    sink: &RunSink,
) -> Result<ExperimentOutput> {
    check_dims(source, target)?;
    if spec.seeds.is_empty() || spec.weeks.is_empty() {
        return Err(Error::Config("sweep needs at least one seed and one weeks value".into()));
    }
    let max_weeks = spec.weeks.iter().copied().max().unwrap_or(0);
    let spans = dates_of(&target.dataset).iter().map(|d| (d.iso_week().year(), d.iso_week().week())).collect::<BTreeSet<_>>().len();
    if spans < max_weeks + 1 {
        return Err(Error::invalid(format!(
            "target {} spans {spans} ISO weeks; a {max_weeks}-week sweep needs at least {}",
            target.id(),
            max_weeks + 1
        )));
    }
    let base = RecordBase::new(ExperimentKind::Finetune, cfg, source.id(), data_seed, sink);
    let mut out = ExperimentOutput::default();
    let units = target.dataset.meta.target_kind.units();
    for &seed in &spec.seeds {
        let owned;
        let models = match pretrained.iter().find(|m| m.seed == seed && m.mask == InputMask::Full) {
            Some(m) => m,
            None => {
                owned = train_source(source, cfg, spec.tasks, InputMask::Full, seed)?;
                &owned
            }
        };
        let now_model = spec.tasks.nowcast.then_some(models.nowcaster.as_ref()).flatten();
        let fc_model = spec.tasks.forecast.then_some(models.forecaster.as_ref()).flatten();
        if (spec.tasks.nowcast && now_model.is_none()) || (spec.tasks.forecast && fc_model.is_none()) {
            return Err(Error::Config(format!("pretrained models for seed {seed} lack a requested task")));
        }

        // zero-shot predictions over the whole target, subset per split
        let now_zs = match now_model {
            Some(m) => {
                let stats = zero_shot_stats(m.target_stats(), source, target, cfg)?;
                let rows = nowcast_rows(target, &cfg.features, InputMask::Full);
                let pred = rows.features.iter().map(|f| m.predict_with(f, stats)).collect::<Result<Vec<_>>>()?;
                Some((rows, pred))
            }
            None => None,
        };
        let fc_zs = match fc_model {
            Some(m) => {
                let stats = zero_shot_stats(m.target_stats, source, target, cfg)?;
                let set = forecast_windows(target, &cfg.features, InputMask::Full, 1)?;
                let pred = predict_windows(m, &set, InputMask::Full, stats)?;
                Some((set, pred))
            }
            None => None,
        };

        for &weeks in &spec.weeks {
            let started = Instant::now();
            let (fine, test) = dataset::split_weeks_with(&target.dataset, weeks, seed, spec.selection)?;
            let (fine, test) = (target.with_dataset(fine), target.with_dataset(test));
            let keep = dates_of(&test.dataset);
            let on = if weeks == 0 { EVAL_TARGET } else { EVAL_TARGET_REMAINDER };

            if let (Some(m), Some((rows, pred))) = (now_model, &now_zs) {
                let (mut y, mut p) = (Vec::new(), Vec::new());
                for (k, &i) in rows.index.iter().enumerate() {
                    if keep.contains(&target.dataset.local_date(i)) {
                        y.push(rows.targets[k]);
                        p.push(pred[k]);
                    }
                }
                let report = MetricsReport::nowcast(units, &y, &p)?;
                base.emit(&mut out, Task::Nowcast, "zero_shot", target.id(), on, Some(weeks), seed, report, Some(true), None, started)?;
                if weeks > 0 {
                    let stats = finetune_stats(m.target_stats(), source, &fine);
                    let tuned = finetune_nowcaster(m, &fine, cfg, InputMask::Full, stats, seed)?;
                    let frozen = match (m, &tuned) {
                        (Nowcaster::Gbdt(a), Nowcaster::Gbdt(b)) => Some(b.trees.len() >= a.trees.len() && b.trees[..a.trees.len()] == a.trees[..]),
                        _ => None,
                    };
                    let report = evaluate_nowcaster(&tuned, &test, cfg, InputMask::Full, stats)?;
                    base.emit(&mut out, Task::Nowcast, "finetuned", target.id(), on, Some(weeks), seed, report, frozen, checkpoint(NOWCASTER_CHECKPOINT, nowcaster_bytes(&tuned)?), started)?;
                }
            }

            if let (Some(m), Some((set, pred))) = (fc_model, &fc_zs) {
                let (sub, p) = subset_windows(set, pred, &keep);
                let report = forecast_report(units, &sub, &p)?;
                base.emit(&mut out, Task::Forecast, "zero_shot", target.id(), on, Some(weeks), seed, report, Some(true), None, started)?;
                if weeks > 0 {
                    let stats = finetune_stats(m.target_stats, source, &fine);
                    let encoder = m.encoder_bytes();
                    let tuned = finetune_forecaster(m, &fine, cfg, InputMask::Full, stats, seed)?;
                    let frozen = tuned.encoder_bytes() == encoder;
                    let test_set = forecast_windows(&test, &cfg.features, InputMask::Full, 1)?;
                    let preds = predict_windows(&tuned, &test_set, InputMask::Full, stats)?;
                    let report = forecast_report(units, &test_set, &preds)?;
                    base.emit(&mut out, Task::Forecast, "finetuned", target.id(), on, Some(weeks), seed, report, Some(frozen), checkpoint(FORECASTER_CHECKPOINT, Some(tuned.to_bytes()?)), started)?;
                }
            }
        }
    }
    for &weeks in spec.weeks.iter().filter(|&&w| w > 0) {
        for (on, task) in [(spec.tasks.nowcast, Task::Nowcast), (spec.tasks.forecast, Task::Forecast)] {
            if on {
                out.comparisons.push(compare_variants(
                    &out.records,
                    ComparisonScope {
                        kind: ExperimentKind::Finetune,
                        task,
                        evaluated_on: EVAL_TARGET_REMAINDER,
                        weeks: Some(weeks),
                    },
                    "zero_shot",
                    "finetuned",
                ));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    NoFutureCovariates,
    RegressorVariant,
    StubVsFileEmbeddings,
}

impl AblationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "no_future_covariates" => Ok(Self::NoFutureCovariates),
            "regressor_variant" => Ok(Self::RegressorVariant),
            "stub_vs_file_embeddings" => Ok(Self::StubVsFileEmbeddings),
            other => Err(Error::Config(format!(
                "unknown ablation kind '{other}' (expected no_future_covariates, regressor_variant or stub_vs_file_embeddings)"
            ))),
        }
    }

    /// (baseline, candidate) variant names.
    pub fn variants(&self) -> (&'static str, &'static str) {
        match self {
            Self::NoFutureCovariates => ("without_covariates", "with_covariates"),
            Self::RegressorVariant => ("knn", "gbdt"),
            Self::StubVsFileEmbeddings => ("stub", "file"),
        }
    }
}

/// Matched pairs that differ only in the ablated component, evaluated on
/// the source holdout with identical seeds. `alt_store` holds the stub
/// embeddings for `stub_vs_file_embeddings`. Returns the trained models of
/// the candidate variant.
pub fn run_ablation(
    kind: AblationKind,
    source: &SiteData,
    alt_store: Option<&EmbeddingStore>,
    cfg: &PipelineConfig,
    seeds: &[u64],
    data_seed: Option<u64>,
    sink: &RunSink,
) -> Result<(ExperimentOutput, Vec<SourceModels>)> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let base = RecordBase::new(ExperimentKind::Ablation, cfg, source.id(), data_seed, sink);
    let (baseline, candidate) = kind.variants();
    let mut out = ExperimentOutput::default();
    let mut kept = Vec::new();
    let stub_site;
    let (task, arms): (Task, Vec<(&str, &SiteData, PipelineConfig, InputMask)>) = match kind {
        AblationKind::NoFutureCovariates => (
            Task::Forecast,
            vec![
                (baseline, source, cfg.clone(), InputMask::NoFutureCovariates),
                (candidate, source, cfg.clone(), InputMask::Full),
            ],
        ),
        AblationKind::RegressorVariant => {
            let knn = PipelineConfig {
                regressor: Regressor::Knn,
                ..cfg.clone()
            };
            let gbdt = PipelineConfig {
                regressor: Regressor::Gbdt,
                ..cfg.clone()
            };
            (Task::Nowcast, vec![(baseline, source, knn, InputMask::Full), (candidate, source, gbdt, InputMask::Full)])
        }
        AblationKind::StubVsFileEmbeddings => {
            let store = alt_store.ok_or_else(|| Error::Config("stub_vs_file_embeddings needs a stub embedding store".into()))?;
            stub_site = SiteData::new(source.dataset.clone(), store.clone());
            (Task::Nowcast, vec![(baseline, &stub_site, cfg.clone(), InputMask::Full), (candidate, source, cfg.clone(), InputMask::Full)])
        }
    };
    let tasks = match task {
        Task::Nowcast => Tasks::NOWCAST,
        Task::Forecast => Tasks::FORECAST,
    };
    for &seed in seeds {
        for (variant, site, arm_cfg, mask) in &arms {
            let started = Instant::now();
            let models = train_source(site, arm_cfg, tasks, *mask, seed)?;
            let (_, holdout) = source_split(site, arm_cfg);
            let (report, ck) = match task {
                Task::Nowcast => {
                    let m = models.nowcaster.as_ref().expect("nowcaster trained");
                    let r = evaluate_nowcaster(m, &holdout, arm_cfg, *mask, m.target_stats())?;
                    (r, checkpoint(NOWCASTER_CHECKPOINT, nowcaster_bytes(m)?))
                }
                Task::Forecast => {
                    let m = models.forecaster.as_ref().expect("forecaster trained");
                    let r = evaluate_forecaster(m, &holdout, arm_cfg, *mask, m.target_stats)?;
                    (r, checkpoint(FORECASTER_CHECKPOINT, Some(m.to_bytes()?)))
                }
            };
            base.emit(&mut out, task, variant, site.id(), EVAL_SOURCE_HOLDOUT, None, seed, report, None, ck, started)?;
            if *variant == candidate {
                kept.push(models);
            }
        }
    }
    out.comparisons.push(compare_variants(
        &out.records,
        ComparisonScope {
            kind: ExperimentKind::Ablation,
            task,
            evaluated_on: EVAL_SOURCE_HOLDOUT,
            weeks: None,
        },
        baseline,
        candidate,
    ));
    Ok((out, kept))
}

/// Contiguous same-date daytime runs as index ranges.
fn daytime_segments(ds: &Dataset) -> Vec<std::ops::Range<usize>> {
    let mut segs = Vec::new();
    let mut start: Option<usize> = None;
    for i in 0..=ds.len() {
        let continues = i < ds.len()
            && ds.samples[i].is_daytime()
            && start.is_some_and(|s| {
                ds.local_date(s) == ds.local_date(i) && ds.samples[i].timestamp - ds.samples[i - 1].timestamp == ds.meta.cadence()
            });
        match (start, continues) {
            (Some(_), true) => {}
            (Some(s), false) => {
                segs.push(s..i);
                start = (i < ds.len() && ds.samples[i].is_daytime()).then_some(i);
            }
            (None, _) => start = (i < ds.len() && ds.samples[i].is_daytime()).then_some(i),
        }
    }
    segs
}

pub const VAR_SCHEMA: [&str; 4] = ["clearsky_ghi", "clearsky_dni", "clearsky_dhi", "target"];

fn clearsky_row(sample: &Sample, ds: &Dataset, settings: &FeatureSettings) -> [f64; 3] {
    let p = features::physics_features(sample.timestamp, &ds.meta, sample.sun(), settings).0;
    [p[P_CLEARSKY_GHI], p[P_CLEARSKY_DNI], p[P_CLEARSKY_DHI]]
}

fn var_rows(range: std::ops::Range<usize>, ds: &Dataset, settings: &FeatureSettings) -> Vec<Vec<f64>> {
    range
        .map(|i| {
            let s = &ds.samples[i];
            let mut row = clearsky_row(s, ds, settings).to_vec();
            row.push(s.target);
            row
        })
        .collect()
}

/// Statistical baselines fit on the source training split.
#[derive(Debug, Clone)]
pub struct Baselines {
    pub arima: ArimaModel,
    pub var: VarModel,
}

pub const VAR_LAGS: usize = 6;

pub fn fit_baselines(train: &Dataset, settings: &FeatureSettings, seed: u64) -> Result<Baselines> {
    let segs = daytime_segments(train);
    let arima_segs: Vec<Vec<f64>> = segs.iter().map(|r| train.samples[r.clone()].iter().map(|s| s.target).collect()).collect();
    let arima = baselines::fit_arima_segments(&arima_segs, seed)?;
    let var_segs: Vec<Vec<Vec<f64>>> = segs
        .iter()
        .filter(|r| r.len() > VAR_LAGS)
        .map(|r| var_rows(r.clone(), train, settings))
        .collect();
    let var = baselines::fit_var_segments(
        &var_segs,
        VAR_LAGS,
        VAR_SCHEMA.iter().map(|s| s.to_string()).collect(),
        vec![true, true, true, false],
    )?;
    Ok(Baselines { arima, var })
}

/// Per-window predictions of both baselines at the standard horizons.
pub fn baseline_predictions(b: &Baselines, site: &SiteData, set: &WindowSet, settings: &FeatureSettings) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let ds = &site.dataset;
    let cadence = i64::from(ds.meta.cadence_minutes);
    let offsets: Vec<usize> = HORIZONS_MINUTES.iter().map(|h| (h / cadence) as usize).collect();
    let steps = *offsets.iter().max().unwrap();
    let segs = daytime_segments(ds);
    let (mut arima, mut var) = (Vec::with_capacity(set.len()), Vec::with_capacity(set.len()));
    for w in &set.windows {
        let last = w.last_context();
        let first = segs
            .iter()
            .find(|r| r.contains(&last))
            .map(|r| r.start.min(w.context[0]))
            .unwrap_or(w.context[0]);
        let history: Vec<f64> = ds.samples[first..=last].iter().map(|s| s.target).collect();
        let path = baselines::forecast_arima(&b.arima, &history, steps)?;
        arima.push(offsets.iter().map(|&k| path[k - 1].max(0.0)).collect());

        let context: Vec<Vec<f64>> = w
            .context
            .iter()
            .map(|&i| {
                let s = &ds.samples[i];
                let mut row = clearsky_row(s, ds, settings).to_vec();
                row.push(s.target);
                row
            })
            .collect();
        let t_last = ds.samples[last].timestamp;
        let stamps: Vec<_> = (1..=steps as i64).map(|k| t_last + Duration::minutes(k * cadence)).collect();
        let cov = features::covariates_at(&stamps, &ds.meta, settings)?;
        let q = cov.values.len() / stamps.len();
        let known: Vec<Vec<f64>> = (0..stamps.len())
            .map(|k| {
                let p = &cov.values[k * q + features::AUX_DIM..];
                vec![p[P_CLEARSKY_GHI], p[P_CLEARSKY_DNI], p[P_CLEARSKY_DHI], 0.0]
            })
            .collect();
        let path = baselines::forecast_var(&b.var, &context, steps, Some(&known))?;
        var.push(offsets.iter().map(|&k| path[k - 1][3].max(0.0)).collect());
    }
    Ok((arima, var))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Arima,
    Var,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::Arima, BaselineKind::Var];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Arima => "arima",
            BaselineKind::Var => "var",
        }
    }

    pub fn checkpoint_name(self) -> &'static str {
        match self {
            BaselineKind::Arima => "arima.json",
            BaselineKind::Var => "var.json",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "arima" => Ok(BaselineKind::Arima),
            "var" => Ok(BaselineKind::Var),
            other => Err(Error::Config(format!("unknown baseline '{other}' (expected arima or var)"))),
        }
    }
}

/// Which SPIRIT forecaster, if any, to score next to the baselines.
pub enum SpiritArm<'a> {
    Skip,
    Train,
    Model(&'a ForecasterModel),
}

/// Fits the requested baselines on the source train split and scores them on
/// the holdout windows, optionally next to a SPIRIT forecaster. Baseline and
/// SPIRIT records pair on seed and horizon.
#[allow(clippy::too_many_arguments)]
pub fn run_baselines(
    source: &SiteData,
    cfg: &PipelineConfig,
    seed: u64,
    which: &[BaselineKind],
    spirit: SpiritArm<'_>,
    data_seed: Option<u64>,
    sink: &RunSink,
) -> Result<(ExperimentOutput, Baselines)> {
    if which.is_empty() {
        return Err(Error::Config("no baseline requested".into()));
    }
    let base = RecordBase::new(ExperimentKind::Baseline, cfg, source.id(), data_seed, sink);
    let (train, holdout) = source_split(source, cfg);
    let started = Instant::now();
    let fitted = fit_baselines(&train.dataset, &cfg.features, seed)?;
    let set = forecast_windows(&holdout, &cfg.features, InputMask::Full, 1)?;
    let (arima, var) = baseline_predictions(&fitted, &holdout, &set, &cfg.features)?;
    let units = source.dataset.meta.target_kind.units();
    let mut out = ExperimentOutput::default();
    for kind in which {
        let (preds, json) = match kind {
            BaselineKind::Arima => (&arima, fitted.arima.to_json()?),
            BaselineKind::Var => (&var, fitted.var.to_json()?),
        };
        let report = forecast_report(units, &set, preds)?;
        let ck = checkpoint(kind.checkpoint_name(), Some(json.into_bytes()));
        base.emit(&mut out, Task::Forecast, kind.name(), source.id(), EVAL_SOURCE_HOLDOUT, None, seed, report, None, ck, started)?;
    }
    let owned;
    let model = match spirit {
        SpiritArm::Skip => return Ok((out, fitted)),
        SpiritArm::Model(m) => m,
        SpiritArm::Train => {
            owned = train_source(source, cfg, Tasks::FORECAST, InputMask::Full, seed)?
                .forecaster
                .expect("forecaster trained");
            &owned
        }
    };
    let preds = predict_windows(model, &set, InputMask::Full, model.target_stats)?;
    let report = forecast_report(units, &set, &preds)?;
    base.emit(&mut out, Task::Forecast, "spirit", source.id(), EVAL_SOURCE_HOLDOUT, None, seed, report, None, checkpoint(FORECASTER_CHECKPOINT, Some(model.to_bytes()?)), started)?;
    for kind in which {
        out.comparisons.push(compare_variants(
            &out.records,
            ComparisonScope {
                kind: ExperimentKind::Baseline,
                task: Task::Forecast,
                evaluated_on: EVAL_SOURCE_HOLDOUT,
                weeks: None,
            },
            kind.name(),
            "spirit",
        ));
    }
    Ok((out, fitted))
}

/// Runs every seed of a zero-shot experiment.
#[allow(clippy::too_many_arguments)]
pub fn run_zero_shot_seeds(
    source: &SiteData,
    target: &SiteData,
    cfg: &PipelineConfig,
    tasks: Tasks,
    seeds: &[u64],
    control: bool,
    data_seed: Option<u64>,
    sink: &RunSink,
) -> Result<(ExperimentOutput, Vec<SourceModels>)> {
    let mut out = ExperimentOutput::default();
    let mut models = Vec::new();
    for &seed in seeds {
        let (o, m) = run_zero_shot(source, target, cfg, tasks, seed, control, data_seed, sink)?;
        out.extend(o);
        models.extend(m);
    }
    if control {
        let mut evals = vec![EVAL_SOURCE_HOLDOUT];
        if source.id() != target.id() {
            evals.push(EVAL_TARGET);
        }
        for (task, on) in [Task::Nowcast, Task::Forecast].into_iter().filter(|t| tasks.has(*t)).flat_map(|t| evals.iter().map(move |e| (t, *e))) {
            let scope = ComparisonScope {
                kind: ExperimentKind::ZeroShot,
                task,
                evaluated_on: on,
                weeks: None,
            };
            out.comparisons.push(compare_variants(&out.records, scope, "memorizing_control", "spirit"));
        }
    }
    Ok((out, models))
}

/// (baseline, candidate) pairs each experiment kind is compared on.
pub fn standard_pairs(kind: ExperimentKind) -> Vec<(&'static str, &'static str)> {
    match kind {
        ExperimentKind::ZeroShot => vec![("memorizing_control", "spirit")],
        ExperimentKind::Finetune => vec![("zero_shot", "finetuned")],
        ExperimentKind::Ablation => [AblationKind::NoFutureCovariates, AblationKind::RegressorVariant, AblationKind::StubVsFileEmbeddings]
            .iter()
            .map(AblationKind::variants)
            .collect(),
        ExperimentKind::Baseline => BaselineKind::ALL.iter().map(|b| (b.name(), "spirit")).collect(),
    }
}

/// Every standard comparison whose two variants both appear in `records`
/// within one scope.
pub fn standard_comparisons(records: &[RunRecord]) -> Vec<PairedComparison> {
    let scopes: BTreeSet<(ExperimentKind, Task, &str, Option<usize>)> =
        records.iter().map(|r| (r.kind, r.task, r.evaluated_on.as_str(), r.weeks)).collect();
    let mut out = Vec::new();
    for (kind, task, evaluated_on, weeks) in scopes {
        let present = |v: &str| {
            records
                .iter()
                .any(|r| r.kind == kind && r.task == task && r.evaluated_on == evaluated_on && r.weeks == weeks && r.variant == v)
        };
        for (baseline, candidate) in standard_pairs(kind) {
            if present(baseline) && present(candidate) {
                let scope = ComparisonScope {
                    kind,
                    task,
                    evaluated_on,
                    weeks,
                };
                out.push(compare_variants(records, scope, baseline, candidate));
            }
        }
    }
    out
}
