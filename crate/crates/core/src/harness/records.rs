use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport, TTestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ZeroShot,
    Finetune,
    Ablation,
    Baseline,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::ZeroShot => "zero_shot",
            ExperimentKind::Finetune => "finetune",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [ExperimentKind::ZeroShot, ExperimentKind::Finetune, ExperimentKind::Ablation, ExperimentKind::Baseline]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}' (expected zero_shot, finetune, ablation or baseline)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Nowcast,
    Forecast,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Nowcast => "nowcast",
            Task::Forecast => "forecast",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nowcast" => Ok(Task::Nowcast),
            "forecast" => Ok(Task::Forecast),
            other => Err(Error::Config(format!("unknown task '{other}' (expected nowcast or forecast)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Seed the synthetic data was generated with, when known.
    pub data: Option<u64>,
    pub split: u64,
    pub train: u64,
}

/// One trained-and-evaluated model. Wall-clock time lives in a separate
/// `timing.json` so that reruns reproduce this record byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub run_id: String,
    pub kind: ExperimentKind,
    pub task: Task,
    /// Model variant within the experiment, e.g. `spirit` or `memorizing_control`.
    pub variant: String,
    pub source_site: String,
    pub target_site: String,
    /// Which data the report was computed on.
    pub evaluated_on: String,
    pub weeks: Option<usize>,
    pub seeds: Seeds,
    pub config_hash: String,
    /// Relative to the run directory.
    pub checkpoint: Option<String>,
    /// Byte comparison of the frozen parameters before and after the run.
    pub frozen_parameters_intact: Option<bool>,
    pub report: MetricsReport,
}

impl RunRecord {
    pub fn make_id(kind: ExperimentKind, task: Task, variant: &str, source: &str, target: &str, weeks: Option<usize>, seed: u64, hash: &str) -> String {
        let weeks = weeks.map(|w| format!("-w{w}")).unwrap_or_default();
        format!("{}-{}-{variant}-{source}-{target}{weeks}-s{seed}-{}", kind.name(), task.name(), &hash[..8.min(hash.len())])
    }

    /// nMAP per unit: one value per horizon for forecasts, else the overall
    /// value.
    pub fn nmap_units(&self) -> Vec<f64> {
        if self.report.per_horizon.is_empty() {
            vec![self.report.overall.nmap]
        } else {
            self.report.per_horizon.iter().map(|h| h.metrics.nmap).collect()
        }
    }
}

/// Where an experiment writes its runs; nothing is written when absent.
#[derive(Debug, Clone, Default)]
pub struct RunSink {
    pub dir: Option<PathBuf>,
    /// Write `timing.json` with wall-clock seconds. Off by default so that
    /// reruns produce identical files.
    pub record_timing: bool,
}

/// A model checkpoint to store next to a record.
pub struct Checkpoint<'a> {
    pub file_name: &'a str,
    pub bytes: Vec<u8>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

impl RunSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            record_timing: false,
        }
    }

    pub fn none() -> Self {
        Self {
            dir: None,
            record_timing: false,
        }
    }

    pub fn with_timing(mut self, on: bool) -> Self {
        self.record_timing = on;
        self
    }

    /// Writes `runs/<run_id>/{config.json, record.json, checkpoints/, metrics/}`
    /// and optionally `timing.json`.
    pub fn persist<C: Serialize>(&self, record: &mut RunRecord, config: &C, checkpoint: Option<Checkpoint<'_>>, seconds: f64) -> Result<()> {
        let Some(root) = &self.dir else {
            return Ok(());
        };
        let dir = root.join(&record.run_id);
        if let Some(ck) = checkpoint {
            let rel = format!("checkpoints/{}", ck.file_name);
            write_file(&dir.join(&rel), &ck.bytes)?;
            record.checkpoint = Some(rel);
        }
        write_json(&dir.join("config.json"), config)?;
        write_json(&dir.join("metrics").join(format!("{}.json", record.task.name())), &record.report)?;
        write_json(&dir.join("record.json"), record)?;
        if self.record_timing {
            write_json(&dir.join("timing.json"), &serde_json::json!({ "wall_clock_seconds": seconds }))?;
        }
        Ok(())
    }
}

/// Every `record.json` one level below `dir`, sorted by run id.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path().join("record.json");
        if path.is_file() {
            records.push(read_json::<RunRecord>(&path)?);
        }
    }
    records.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(records)
}

/// Mean and 95% interval over runs for one (group, horizon) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub kind: ExperimentKind,
    pub task: Task,
    pub variant: String,
    pub evaluated_on: String,
    pub weeks: Option<usize>,
    /// `None` for the overall metric.
    pub horizon_minutes: Option<i64>,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub const CI_LEVEL: f64 = 0.95;

type GroupKey = (ExperimentKind, Task, String, String, Option<usize>);

fn group(records: &[RunRecord]) -> BTreeMap<GroupKey, Vec<&RunRecord>> {
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.kind, r.task, r.variant.clone(), r.evaluated_on.clone(), r.weeks)).or_default().push(r);
    }
    groups
}

pub const CURVE_METRICS: [&str; 4] = ["nmap", "mae", "rmse", "r2"];

fn metric_value(m: &metrics::Metrics, name: &str) -> f64 {
    match name {
        "nmap" => m.nmap,
        "mae" => m.mae,
        "rmse" => m.rmse,
        _ => m.r2,
    }
}

fn interval(values: &[f64]) -> Result<(f64, f64, f64)> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return Ok((mean, mean, mean));
    }
    let (lo, hi) = metrics::confidence_interval(values, CI_LEVEL)?;
    Ok((mean, lo, hi))
}

/// Mean curves with confidence bands, grouped by experiment, task, variant,
/// evaluation set and weeks. A single run gives a zero-width band.
pub fn curve_points(records: &[RunRecord]) -> Result<Vec<CurvePoint>> {
    if records.is_empty() {
        return Err(Error::invalid("no run records to aggregate"));
    }
    let mut out = Vec::new();
    for ((kind, task, variant, evaluated_on, weeks), runs) in group(records) {
        let horizons: Vec<Option<i64>> = std::iter::once(None)
            .chain(runs[0].report.per_horizon.iter().map(|h| Some(h.horizon_minutes)))
            .collect();
        for metric in CURVE_METRICS {
            for &h in &horizons {
                let values = runs
                    .iter()
                    .map(|r| match h {
                        None => Ok(metric_value(&r.report.overall, metric)),
                        Some(h) => r
                            .report
                            .per_horizon
                            .iter()
                            .find(|x| x.horizon_minutes == h)
                            .map(|x| metric_value(&x.metrics, metric))
                            .ok_or_else(|| Error::invalid(format!("run {} lacks horizon {h}", r.run_id))),
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (mean, ci_low, ci_high) = interval(&values)?;
                out.push(CurvePoint {
                    kind,
                    task,
                    variant: variant.clone(),
                    evaluated_on: evaluated_on.clone(),
                    weeks,
                    horizon_minutes: h,
                    metric: metric.to_string(),
                    n: values.len(),
                    mean,
                    ci_low,
                    ci_high,
                });
            }
        }
    }
    Ok(out)
}

/// Paired comparison between two variants of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub kind: ExperimentKind,
    pub task: Task,
    pub evaluated_on: String,
    pub weeks: Option<usize>,
    pub baseline: String,
    pub candidate: String,
    /// Number of (seed, horizon) pairs.
    pub pairs: usize,
    /// `baseline - candidate` nMAP; positive favours the candidate.
    pub test: Option<TTestResult>,
    /// Why no test could be computed.
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComparisonScope<'a> {
    pub kind: ExperimentKind,
    pub task: Task,
    pub evaluated_on: &'a str,
    pub weeks: Option<usize>,
}

/// Pairs runs of `baseline` and `candidate` within `scope` that share every
/// seed and then each horizon, and runs a paired t-test on their nMAP.
pub fn compare_variants(records: &[RunRecord], scope: ComparisonScope<'_>, baseline: &str, candidate: &str) -> PairedComparison {
    let ComparisonScope {
        kind,
        task,
        evaluated_on,
        weeks,
    } = scope;
    let pick = |v: &str| -> BTreeMap<(Option<u64>, u64, u64), &RunRecord> {
        records
            .iter()
            .filter(|r| r.kind == kind && r.task == task && r.evaluated_on == evaluated_on && r.weeks == weeks && r.variant == v)
            .map(|r| ((r.seeds.data, r.seeds.split, r.seeds.train), r))
            .collect()
    };
    let (a, b) = (pick(baseline), pick(candidate));
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (key, ra) in &a {
        if let Some(rb) = b.get(key) {
            let (ua, ub) = (ra.nmap_units(), rb.nmap_units());
            if ua.len() == ub.len() {
                xs.extend(ua);
                ys.extend(ub);
            }
        }
    }
    let (test, note) = match metrics::paired_ttest(&xs, &ys) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    PairedComparison {
        kind,
        task,
        evaluated_on: evaluated_on.to_string(),
        weeks,
        baseline: baseline.to_string(),
        candidate: candidate.to_string(),
        pairs: xs.len(),
        test,
        note,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    pub curves: Vec<CurvePoint>,
    pub comparisons: Vec<PairedComparison>,
}

pub fn summarize(records: &[RunRecord], comparisons: Vec<PairedComparison>) -> Result<Summary> {
    Ok(Summary {
        runs: records.len(),
        curves: curve_points(records)?,
        comparisons,
    })
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Figure-style curve table. Values are printed with Rust's shortest
/// round-trip formatting, so they parse back to the summary numbers exactly.
pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("kind,task,variant,evaluated_on,weeks,horizon_minutes,metric,n,mean,ci_low,ci_high\n");
    for p in points {
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            p.kind.name(),
            p.task.name(),
            p.variant,
            p.evaluated_on,
            fmt_opt(p.weeks),
            fmt_opt(p.horizon_minutes),
            p.metric,
            p.n,
            p.mean,
            p.ci_low,
            p.ci_high
        );
    }
    s
}

/// Table-style layout: one row per run, nMAP overall and per horizon.
pub fn runs_table_csv(records: &[RunRecord]) -> String {
    let mut horizons: Vec<i64> = records
        .iter()
        .flat_map(|r| r.report.per_horizon.iter().map(|h| h.horizon_minutes))
        .collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut s = String::from("run_id,kind,task,variant,source,target,evaluated_on,weeks,seed,nmap");
    for h in &horizons {
        s += &format!(",nmap_{h}min");
    }
    s.push('\n');
    for r in records {
        s += &format!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.run_id,
            r.kind.name(),
            r.task.name(),
            r.variant,
            r.source_site,
            r.target_site,
            r.evaluated_on,
            fmt_opt(r.weeks),
            r.seeds.train,
            r.report.overall.nmap
        );
        for h in &horizons {
            s.push(',');
            if let Some(x) = r.report.per_horizon.iter().find(|x| x.horizon_minutes == *h) {
                s += &x.metrics.nmap.to_string();
            }
        }
        s.push('\n');
    }
    s
}

/// Writes `summary.json`, `curves.csv` and `runs.csv` into `dir`.
pub fn write_summary(dir: &Path, records: &[RunRecord], summary: &Summary) -> Result<()> {
    write_json(&dir.join("summary.json"), summary)?;
    write_file(&dir.join("curves.csv"), curves_csv(&summary.curves).as_bytes())?;
    write_file(&dir.join("runs.csv"), runs_table_csv(records).as_bytes())
}
