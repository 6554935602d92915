//! Site datasets: manifest ingestion, single-gap interpolation, z-scoring,
//! forecast windows and week-based splits.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, SecondsFormat, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solar::{self, GeoLocation, PanelOrientation, SolarAngles};

/// Exact manifest header.
pub const MANIFEST_HEADER: [&str; 5] = ["timestamp_utc", "target", "zenith_deg", "azimuth_deg", "image_path"];

/// Forecast horizons in minutes after the last context timestamp.
pub const HORIZONS_MINUTES: [i64; 4] = [60, 120, 180, 240];

/// Number of context steps in a forecast window.
pub const CONTEXT_STEPS: usize = 6;

const ALLOWED_CADENCES: [u32; 6] = [1, 5, 10, 15, 30, 60];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Ghi,
    Pv,
}

impl TargetKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ghi" => Ok(TargetKind::Ghi),
            "pv" => Ok(TargetKind::Pv),
            other => Err(Error::invalid(format!("unknown target_kind '{other}'"))),
        }
    }

    pub fn units(&self) -> &'static str {
        match self {
            TargetKind::Ghi => "W/m^2",
            TargetKind::Pv => "kW",
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Ghi => "ghi",
            TargetKind::Pv => "pv",
        })
    }
}

/// On-disk shape of the site sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteMetaFile {
    site_id: String,
    latitude: f64,
    longitude: f64,
    panel_tilt_deg: f64,
    panel_azimuth_deg: f64,
    cadence_minutes: u32,
    target_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    utc_offset_hours: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SiteMetaFile", into = "SiteMetaFile")]
pub struct SiteMeta {
    pub site_id: String,
    pub location: GeoLocation,
    pub panel: PanelOrientation,
    pub cadence_minutes: u32,
    pub target_kind: TargetKind,
    pub utc_offset_hours: Option<i32>,
}

impl TryFrom<SiteMetaFile> for SiteMeta {
    type Error = Error;

    fn try_from(f: SiteMetaFile) -> Result<Self> {
        SiteMeta::new(
            f.site_id,
            GeoLocation::new(f.latitude, f.longitude)?,
            PanelOrientation::new(f.panel_tilt_deg, f.panel_azimuth_deg)?,
            f.cadence_minutes,
            TargetKind::parse(&f.target_kind)?,
            f.utc_offset_hours,
        )
    }
}

impl From<SiteMeta> for SiteMetaFile {
    fn from(m: SiteMeta) -> Self {
        SiteMetaFile {
            site_id: m.site_id,
            latitude: m.location.latitude(),
            longitude: m.location.longitude(),
            panel_tilt_deg: m.panel.tilt(),
            panel_azimuth_deg: m.panel.azimuth(),
            cadence_minutes: m.cadence_minutes,
            target_kind: m.target_kind.to_string(),
            utc_offset_hours: m.utc_offset_hours,
        }
    }
}

impl SiteMeta {
    pub fn new(
        site_id: impl Into<String>,
        location: GeoLocation,
        panel: PanelOrientation,
        cadence_minutes: u32,
        target_kind: TargetKind,
        utc_offset_hours: Option<i32>,
    ) -> Result<Self> {
        let site_id = site_id.into();
        if site_id.is_empty() {
            return Err(Error::invalid("site_id must be nonempty"));
        }
        if !ALLOWED_CADENCES.contains(&cadence_minutes) {
            return Err(Error::invalid(format!(
                "cadence_minutes {cadence_minutes} not in {ALLOWED_CADENCES:?}"
            )));
        }
        if let Some(h) = utc_offset_hours {
            if !(-14..=14).contains(&h) {
                return Err(Error::invalid(format!("utc_offset_hours {h} outside [-14, 14]")));
            }
        }
        Ok(Self {
            site_id,
            location,
            panel,
            cadence_minutes,
            target_kind,
            utc_offset_hours,
        })
    }

    /// Fixed civil offset: explicit override, else longitude / 15 rounded.
    pub fn utc_offset(&self) -> Duration {
        let hours = self
            .utc_offset_hours
            .unwrap_or_else(|| (self.location.longitude() / 15.0).round() as i32);
        Duration::hours(i64::from(hours))
    }

    pub fn local_date(&self, ts: DateTime<Utc>) -> NaiveDate {
        (ts + self.utc_offset()).date_naive()
    }

    pub fn cadence(&self) -> Duration {
        Duration::minutes(i64::from(self.cadence_minutes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: DateTime<Utc>,
    pub embedding_key: Option<i64>,
    pub zenith_deg: f64,
    pub azimuth_deg: f64,
    pub target: f64,
    pub interpolated: bool,
    pub image_path: Option<String>,
}

impl Sample {
    pub fn aux(&self) -> [f64; 2] {
        [self.zenith_deg, self.azimuth_deg]
    }

    pub fn sun(&self) -> SolarAngles {
        SolarAngles {
            zenith: self.zenith_deg,
            azimuth: self.azimuth_deg,
        }
    }

    pub fn is_daytime(&self) -> bool {
        self.zenith_deg < 90.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: SiteMeta,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Validates ordering, target sign and angle ranges.
    pub fn new(meta: SiteMeta, samples: Vec<Sample>) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            if !(s.target.is_finite() && s.target >= 0.0) {
                return Err(Error::invalid(format!("sample {i}: target {} must be >= 0", s.target)));
            }
            if !(0.0..=180.0).contains(&s.zenith_deg) || !(0.0..360.0).contains(&s.azimuth_deg) {
                return Err(Error::invalid(format!("sample {i}: aux angles out of range")));
            }
            if i > 0 && samples[i - 1].timestamp >= s.timestamp {
                return Err(Error::invalid(format!(
                    "sample {i}: timestamps must be strictly increasing ({} then {})",
                    samples[i - 1].timestamp, s.timestamp
                )));
            }
        }
        Ok(Self { meta, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.target).collect()
    }

    /// Index of the sample stamped exactly `ts`.
    pub fn find(&self, ts: DateTime<Utc>) -> Option<usize> {
        self.samples.binary_search_by(|s| s.timestamp.cmp(&ts)).ok()
    }

    pub fn local_date(&self, i: usize) -> NaiveDate {
        self.meta.local_date(self.samples[i].timestamp)
    }

    /// Subset by local calendar dates, keeping order.
    pub fn filter_dates(&self, keep: impl Fn(NaiveDate) -> bool) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            samples: self
                .samples
                .iter()
                .filter(|s| keep(self.meta.local_date(s.timestamp)))
                .cloned()
                .collect(),
        }
    }

    /// Distinct local dates, ascending.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let set: BTreeSet<NaiveDate> = self.samples.iter().map(|s| self.meta.local_date(s.timestamp)).collect();
        set.into_iter().collect()
    }

    /// Splits chronologically by local date: the first `train_fraction` of
    /// days go to the first dataset.
    pub fn split_chronological(&self, train_fraction: f64) -> (Dataset, Dataset) {
        let dates = self.dates();
        let n_train = ((dates.len() as f64) * train_fraction).round() as usize;
        let n_train = n_train.min(dates.len());
        match dates.get(n_train) {
            Some(&cut) => (self.filter_dates(|d| d < cut), self.filter_dates(|d| d >= cut)),
            None => (self.clone(), self.filter_dates(|_| false)),
        }
    }
}

fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s.trim())
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp '{s}': {e}"))
}

fn parse_optional_f64(s: &str, what: &str) -> std::result::Result<Option<f64>, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| format!("bad {what} '{s}'"))
}

/// Loads a manifest CSV and its JSON site sidecar. Missing angles are
/// computed from the sun position; provided angles are kept as-is.
pub fn load_manifest(path: &Path, meta_path: &Path) -> Result<Dataset> {
    let meta = SiteMeta::load(meta_path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| csv_error(path, 1, e))?;

    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            message: format!("header must be '{}'", MANIFEST_HEADER.join(",")),
        });
    }

    let mut samples: Vec<Sample> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let line = row_idx + 2;
        let err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            line,
            message,
        };
        let record = record.map_err(|e| csv_error(path, line, e))?;
        let timestamp = parse_timestamp(&record[0]).map_err(err)?;
        let target = parse_optional_f64(&record[1], "target")
            .map_err(err)?
            .ok_or_else(|| err("missing target".into()))?;
        if !(target.is_finite() && target >= 0.0) {
            return Err(err(format!("target {target} must be finite and >= 0")));
        }
        let zenith = parse_optional_f64(&record[2], "zenith_deg").map_err(err)?;
        let azimuth = parse_optional_f64(&record[3], "azimuth_deg").map_err(err)?;

        let (zenith_deg, azimuth_deg) = match (zenith, azimuth) {
            (Some(z), Some(a)) => (z, a),
            _ => {
                let sun = solar::solar_position(timestamp, meta.location).map_err(|e| err(e.to_string()))?;
                (zenith.unwrap_or(sun.zenith), azimuth.unwrap_or(sun.azimuth))
            }
        };
        let angles = SolarAngles::new(zenith_deg, azimuth_deg).map_err(|e| err(e.to_string()))?;

        if let Some(prev) = samples.last() {
            if prev.timestamp == timestamp {
                return Err(err(format!("duplicate timestamp {timestamp}")));
            }
            if prev.timestamp > timestamp {
                return Err(err(format!("timestamp {timestamp} is earlier than the previous row")));
            }
        }

        let image = record[4].trim();
        samples.push(Sample {
            timestamp,
            embedding_key: Some(timestamp.timestamp()),
            zenith_deg: angles.zenith,
            azimuth_deg: angles.azimuth,
            target,
            interpolated: false,
            image_path: (!image.is_empty()).then(|| image.to_string()),
        });
    }

    if samples.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            line: 1,
            message: "no samples".into(),
        });
    }
    Dataset::new(meta, samples)
}

fn csv_error(path: &Path, line: usize, e: csv::Error) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        line: e.position().map(|p| p.line() as usize).unwrap_or(line),
        message: e.to_string(),
    }
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Writes a manifest CSV. Interpolated samples are not written.
pub fn write_manifest(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let io = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(MANIFEST_HEADER).map_err(io)?;
    for s in ds.samples.iter().filter(|s| !s.interpolated) {
        w.write_record([
            format_timestamp(s.timestamp),
            s.target.to_string(),
            s.zenith_deg.to_string(),
            s.azimuth_deg.to_string(),
            s.image_path.clone().unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fills isolated single-step gaps with the mean of the two neighbours.
/// Longer gaps and gaps across local dates are left alone.
pub fn interpolate_missing(ds: &Dataset) -> Dataset {
    let cadence = ds.meta.cadence();
    let mut out = Vec::with_capacity(ds.samples.len() + ds.samples.len() / 16);
    for (i, s) in ds.samples.iter().enumerate() {
        if i > 0 {
            let prev = &ds.samples[i - 1];
            if s.timestamp - prev.timestamp == cadence * 2
                && ds.meta.local_date(prev.timestamp) == ds.meta.local_date(s.timestamp)
            {
                out.push(Sample {
                    timestamp: prev.timestamp + cadence,
                    embedding_key: None,
                    zenith_deg: 0.5 * (prev.zenith_deg + s.zenith_deg),
                    azimuth_deg: 0.5 * (prev.azimuth_deg + s.azimuth_deg),
                    target: 0.5 * (prev.target + s.target),
                    interpolated: true,
                    image_path: None,
                });
            }
        }
        out.push(s.clone());
    }
    Dataset {
        meta: ds.meta.clone(),
        samples: out,
    }
}

/// Z-score statistics (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Numerical("z-score fit needs at least 2 values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("z-score fit on non-finite values".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::Numerical("z-score fit on a constant series".into()));
        }
        Ok(Self { mean, std })
    }

    /// Like [`NormStats::fit`], but a constant series gets unit scale.
    pub fn fit_or_unit(values: &[f64]) -> Self {
        Self::fit(values).unwrap_or_else(|_| Self {
            mean: if values.is_empty() {
                0.0
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            },
            std: 1.0,
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn zscore_fit(values: &[f64]) -> Result<NormStats> {
    NormStats::fit(values)
}

pub fn zscore_apply(x: f64, stats: NormStats) -> f64 {
    stats.apply(x)
}

pub fn zscore_invert(z: f64, stats: NormStats) -> f64 {
    stats.invert(z)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForecastWindow {
    pub context: Vec<usize>,
    pub horizon: Vec<usize>,
    pub day: NaiveDate,
}

impl ForecastWindow {
    pub fn last_context(&self) -> usize {
        *self.context.last().expect("windows have a context")
    }
}

/// Enumerates every window of `context_len` cadence-contiguous samples whose
/// horizon samples exist exactly at the given offsets, all on one local date.
pub fn build_forecast_windows(ds: &Dataset, context_len: usize, horizons_minutes: &[i64]) -> Vec<ForecastWindow> {
    let n = ds.samples.len();
    if context_len == 0 || n < context_len {
        return Vec::new();
    }
    let cadence = ds.meta.cadence();
    let dates: Vec<NaiveDate> = (0..n).map(|i| ds.local_date(i)).collect();

    let mut windows = Vec::new();
    'start: for start in 0..=(n - context_len) {
        let day = dates[start];
        for j in start + 1..start + context_len {
            if dates[j] != day || ds.samples[j].timestamp - ds.samples[j - 1].timestamp != cadence {
                continue 'start;
            }
        }
        let last = start + context_len - 1;
        let t_last = ds.samples[last].timestamp;
        let mut horizon = Vec::with_capacity(horizons_minutes.len());
        for &h in horizons_minutes {
            match ds.find(t_last + Duration::minutes(h)) {
                Some(k) if dates[k] == day => horizon.push(k),
                _ => continue 'start,
            }
        }
        windows.push(ForecastWindow {
            context: (start..=last).collect(),
            horizon,
            day,
        });
    }
    windows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeekSelection {
    /// Weeks drawn uniformly without replacement.
    #[default]
    Uniform,
    /// A run of consecutive weeks starting at a random position.
    Contiguous,
}

/// ISO (year, week) of a sample's local date.
pub fn iso_week(meta: &SiteMeta, ts: DateTime<Utc>) -> (i32, u32) {
    let w = meta.local_date(ts).iso_week();
    (w.year(), w.week())
}

/// Splits into (finetune, test) by ISO calendar week.
pub fn split_weeks(ds: &Dataset, weeks: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    split_weeks_with(ds, weeks, seed, WeekSelection::Uniform)
}

pub fn split_weeks_with(
    ds: &Dataset,
    weeks: usize,
    seed: u64,
    selection: WeekSelection,
) -> Result<(Dataset, Dataset)> {
    let empty = || Dataset {
        meta: ds.meta.clone(),
        samples: Vec::new(),
    };
    if weeks == 0 {
        return Ok((empty(), ds.clone()));
    }
    let all: BTreeSet<(i32, u32)> = ds.samples.iter().map(|s| iso_week(&ds.meta, s.timestamp)).collect();
    let all: Vec<(i32, u32)> = all.into_iter().collect();
    if all.len() < weeks + 1 {
        return Err(Error::invalid(format!(
            "dataset spans {} ISO weeks; need at least {} to hold out {weeks}",
            all.len(),
            weeks + 1
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: BTreeSet<(i32, u32)> = match selection {
        WeekSelection::Uniform => {
            let mut order = all.clone();
            order.shuffle(&mut rng);
            order.into_iter().take(weeks).collect()
        }
        WeekSelection::Contiguous => {
            let start = rng.random_range(0..=all.len() - weeks);
            all[start..start + weeks].iter().copied().collect()
        }
    };

    let (mut fine, mut test) = (empty(), empty());
    for s in &ds.samples {
        if chosen.contains(&iso_week(&ds.meta, s.timestamp)) {
            fine.samples.push(s.clone());
        } else {
            test.samples.push(s.clone());
        }
    }
    Ok((fine, test))
}
