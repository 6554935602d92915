//! Synthetic multi-site data: clear-sky irradiance attenuated by a clipped
//! Ornstein-Uhlenbeck cloud process, with embeddings that linearly mix a
//! latent sky state through a site-specific orthogonal matrix.
//!
//! Clouds, embedding noise, mixing matrices and PV noise draw from separate
//! seeded streams, so two sites with the same seed share a target series even
//! when their embeddings differ.

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Sample, SiteMeta, TargetKind};
use crate::embeddings::{EmbeddingStore, Raster};
use crate::error::{Error, Result};
use crate::features::phases;
use crate::solar::{self, ClearSkyConfig, GeoLocation, PanelOrientation};

/// `[a, a(t + lead) − a, cos θz, sin tod, cos tod]`: attenuation now, the
/// change the camera already sees upwind, and sun geometry.
pub const STATE_DIM: usize = 5;
const CLOUD_COORDS: [usize; 2] = [0, 1];
const GEOMETRY_COORDS: [usize; 3] = [2, 3, 4];

const STREAM_CLOUD: u64 = 1;
const STREAM_EMBED: u64 = 2;
const STREAM_PV: u64 = 3;
const STREAM_IMAGE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudProcess {
    /// Mean-reversion rate per hour.
    pub reversion_per_hour: f64,
    /// Diffusion per square-root hour.
    pub volatility: f64,
    pub long_run_mean: f64,
    /// Attenuation cap κ: GHI = clear-sky · (1 − κ a).
    pub kappa: f64,
    /// Amplitude of a daily cycle in the long-run mean, peaking at
    /// `diurnal_peak_hour` local time.
    #[serde(default = "default_amplitude")]
    pub diurnal_amplitude: f64,
    #[serde(default = "default_peak_hour")]
    pub diurnal_peak_hour: f64,
    /// How far ahead the upwind cloud field reaches the sun.
    #[serde(default = "default_lead")]
    pub advection_lead_minutes: u32,
}

fn default_lead() -> u32 {
    180
}

fn default_amplitude() -> f64 {
    0.35
}

fn default_peak_hour() -> f64 {
    15.0
}

impl CloudProcess {
    /// Long-run mean at local time-of-day fraction `tod`.
    pub fn mean_at(&self, tod: f64) -> f64 {
        let phase = std::f64::consts::TAU * (tod - self.diurnal_peak_hour / 24.0);
        (self.long_run_mean + self.diurnal_amplitude * phase.cos()).clamp(0.0, 1.0)
    }
}

impl Default for CloudProcess {
    fn default() -> Self {
        Self {
            reversion_per_hour: 0.3,
            volatility: 0.2,
            long_run_mean: 0.4,
            kappa: 0.8,
            diurnal_amplitude: default_amplitude(),
            diurnal_peak_hour: default_peak_hour(),
            advection_lead_minutes: default_lead(),
        }
    }
}

/// How the latent sky state is mixed into embedding coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mixing {
    Identity,
    /// Haar-random orthogonal matrix.
    Random { seed: u64 },
    /// Random signed permutation.
    Permutation { seed: u64 },
    /// `Q_base · R` with `Q_base = Permutation { seed: base_seed }`,
    /// emulating a camera change on the same embedding model: `R` rotates the
    /// sun-geometry coordinates and tilts the cloud coordinates by
    /// `cloud_angle_deg`.
    CameraShift {
        base_seed: u64,
        shift_seed: u64,
        cloud_angle_deg: f64,
    },
    Explicit { matrix: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub mixing: Mixing,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSiteConfig {
    pub meta: SiteMeta,
    pub cloud: CloudProcess,
    pub embedding: EmbeddingConfig,
    /// kW per W/m², used when the target is PV.
    pub pv_gain: f64,
    /// Relative PV noise.
    pub pv_noise: f64,
    pub start_date: NaiveDate,
    pub days: usize,
    pub seed: u64,
    #[serde(default)]
    pub clearsky: ClearSkyConfig,
    /// Side length of rendered sky rasters; none are rendered when absent.
    #[serde(default)]
    pub render_size: Option<usize>,
    /// Camera rotation applied to rendered sun positions.
    #[serde(default)]
    pub camera_rotation_deg: f64,
}

impl SynthSiteConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.cloud;
        if !(c.kappa >= 0.0 && c.kappa <= 1.0) {
            return Err(Error::Config(format!("kappa {} outside [0, 1]", c.kappa)));
        }
        if c.reversion_per_hour < 0.0
            || c.volatility < 0.0
            || c.diurnal_amplitude < 0.0
            || !(0.0..=1.0).contains(&c.long_run_mean)
        {
            return Err(Error::Config("cloud process parameters out of range".into()));
        }
        if c.advection_lead_minutes % self.meta.cadence_minutes != 0 {
            return Err(Error::Config("advection lead must be a multiple of the cadence".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("days must be >= 1".into()));
        }
        if self.embedding.dim < STATE_DIM {
            return Err(Error::Config(format!("embedding dim must be >= {STATE_DIM}")));
        }
        if self.embedding.noise < 0.0 || self.pv_gain < 0.0 || self.pv_noise < 0.0 {
            return Err(Error::Config("noise scales and pv_gain must be >= 0".into()));
        }
        if let Some(s) = self.render_size {
            if !(4..=256).contains(&s) {
                return Err(Error::Config(format!("render_size {s} outside [4, 256]")));
            }
        }
        Ok(())
    }
}

/// Roles in the synthetic benchmark. The target shares the source's base
/// permutation with a camera shift on top, sits further north, starts in
/// winter and is less cloudy on average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SitePreset {
    Source,
    Target,
}

impl SitePreset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(SitePreset::Source),
            "target" => Ok(SitePreset::Target),
            other => Err(Error::Config(format!("unknown site preset '{other}' (expected source or target)"))),
        }
    }

    pub fn config(self, seed: u64, days: usize) -> SynthSiteConfig {
        let (id, lat, start, mixing, weather_seed, mean) = match self {
            SitePreset::Source => ("A", 35.0, (2021, 3, 1), Mixing::Permutation { seed }, seed, 0.4),
            SitePreset::Target => (
                "B",
                45.0,
                (2022, 1, 3),
                Mixing::CameraShift {
                    base_seed: seed,
                    shift_seed: 100 + seed,
                    cloud_angle_deg: 5.0,
                },
                1000 + seed,
                0.2,
            ),
        };
        SynthSiteConfig {
            meta: SiteMeta::new(id, GeoLocation::new(lat, -100.0).expect("valid preset location"), PanelOrientation::horizontal(), 10, TargetKind::Ghi, None)
                .expect("valid preset site"),
            cloud: CloudProcess {
                long_run_mean: mean,
                ..CloudProcess::default()
            },
            embedding: EmbeddingConfig {
                dim: 16,
                mixing,
                noise: 0.05,
            },
            pv_gain: 0.005,
            pv_noise: 0.02,
            start_date: NaiveDate::from_ymd_opt(start.0, start.1, start.2).expect("valid preset date"),
            days,
            seed: weather_seed,
            clearsky: ClearSkyConfig::default(),
            render_size: None,
            camera_rotation_deg: 0.0,
        }
    }
}

/// Haar-random `d x d` orthogonal matrix, row-major.
pub fn random_orthogonal(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    (0..d * d).map(|i| q[(i / d, i % d)]).collect()
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

fn identity(d: usize) -> Vec<f64> {
    (0..d * d).map(|k| if k / d == k % d { 1.0 } else { 0.0 }).collect()
}

/// Random signed permutation: every embedding axis carries exactly one
/// latent coordinate.
pub fn signed_permutation(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let mut q = vec![0.0; d * d];
    for (row, &col) in perm.iter().enumerate() {
        q[row * d + col] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    q
}

/// Latent-space rotation for a camera change: the sun-geometry coordinates
/// are rotated among themselves and each cloud coordinate is tilted by
/// `cloud_angle_deg` towards a padding coordinate.
fn camera_shift(d: usize, shift_seed: u64, cloud_angle_deg: f64) -> Vec<f64> {
    let mut r = identity(d);
    let sub = random_orthogonal(GEOMETRY_COORDS.len(), shift_seed);
    let g = GEOMETRY_COORDS.len();
    for (a, &i) in GEOMETRY_COORDS.iter().enumerate() {
        for (b, &j) in GEOMETRY_COORDS.iter().enumerate() {
            r[i * d + j] = sub[a * g + b];
        }
    }
    let (s, c) = cloud_angle_deg.to_radians().sin_cos();
    for (n, &i) in CLOUD_COORDS.iter().enumerate() {
        let j = d - 1 - n;
        if j < STATE_DIM {
            continue;
        }
        let mut giv = identity(d);
        giv[i * d + i] = c;
        giv[j * d + j] = c;
        giv[i * d + j] = -s;
        giv[j * d + i] = s;
        r = matmul(&giv, &r, d);
    }
    r
}

pub fn mixing_matrix(mixing: &Mixing, d: usize) -> Result<Vec<f64>> {
    let q = match mixing {
        Mixing::Identity => identity(d),
        Mixing::Random { seed } => random_orthogonal(d, *seed),
        Mixing::Permutation { seed } => signed_permutation(d, *seed),
        Mixing::CameraShift {
            base_seed,
            shift_seed,
            cloud_angle_deg,
        } => matmul(&signed_permutation(d, *base_seed), &camera_shift(d, *shift_seed, *cloud_angle_deg), d),
        Mixing::Explicit { matrix } => {
            if matrix.len() != d * d {
                return Err(Error::Config(format!("explicit mixing matrix needs {} entries", d * d)));
            }
            matrix.clone()
        }
    };
    let err = orthogonality_error(&q, d);
    if err > 1e-8 {
        return Err(Error::Config(format!("mixing matrix is not orthogonal (error {err:e})")));
    }
    Ok(q)
}

/// `max |QᵀQ − I|`.
pub fn orthogonality_error(q: &[f64], d: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let dot: f64 = (0..d).map(|k| q[k * d + i] * q[k * d + j]).sum();
            worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub store: EmbeddingStore,
    pub attenuation: Vec<f64>,
    pub clearsky_ghi: Vec<f64>,
    pub latent: Vec<[f64; STATE_DIM]>,
    pub mixing: Vec<f64>,
    pub images: Option<Vec<Raster>>,
}

pub fn generate_site(cfg: &SynthSiteConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let meta = &cfg.meta;
    let d = cfg.embedding.dim;
    let q = mixing_matrix(&cfg.embedding.mixing, d)?;
    let step = f64::from(meta.cadence_minutes) / 60.0;
    let per_day = (1440 / meta.cadence_minutes) as usize;
    let local_midnight = Utc.from_utc_datetime(&cfg.start_date.and_hms_opt(0, 0, 0).unwrap()) - meta.utc_offset();

    let mut cloud_rng = stream(cfg.seed, STREAM_CLOUD);
    let mut embed_rng = stream(cfg.seed, STREAM_EMBED);
    let mut pv_rng = stream(cfg.seed, STREAM_PV);
    let mut image_rng = stream(cfg.seed, STREAM_IMAGE);
    let texture = cfg.render_size.map(|s| cloud_texture(s, &mut image_rng));

    let c = &cfg.cloud;
    let n = cfg.days * per_day;
    let mut samples = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let mut attenuation = Vec::with_capacity(n);
    let mut clearsky_ghi = Vec::with_capacity(n);
    let mut latent = Vec::with_capacity(n);
    let mut images = cfg.render_size.map(|_| Vec::with_capacity(n));
    let lead = (c.advection_lead_minutes / meta.cadence_minutes) as usize;
    let at = |i: usize| local_midnight + Duration::minutes(i as i64 * i64::from(meta.cadence_minutes));
    let mut path = Vec::with_capacity(n + lead);
    let mut a = c.long_run_mean;
    for i in 0..n + lead {
        if i > 0 {
            let (_, tod) = phases(at(i), meta);
            let shock: f64 = cloud_rng.sample(StandardNormal);
            a = (a + c.reversion_per_hour * (c.mean_at(tod) - a) * step + c.volatility * step.sqrt() * shock).clamp(0.0, 1.0);
        }
        path.push(a);
    }
    for i in 0..n {
        let ts = at(i);
        let (_, tod) = phases(ts, meta);
        let a = path[i];
        let sun = solar::solar_position(ts, meta.location)?;
        let cs = solar::clearsky_for_sun(sun, chrono::Datelike::ordinal(&ts), cfg.clearsky).ghi;
        let ghi = cs * (1.0 - c.kappa * a);
        let target = match meta.target_kind {
            TargetKind::Ghi => ghi,
            TargetKind::Pv => {
                let eps: f64 = pv_rng.sample(StandardNormal);
                (cfg.pv_gain * ghi * (1.0 + cfg.pv_noise * eps)).max(0.0)
            }
        };
        let tau = std::f64::consts::TAU;
        let s = [a, path[i + lead] - a, sun.cos_zenith(), (tau * tod).sin(), (tau * tod).cos()];

        let mut z = vec![0.0f32; d];
        for (r, zr) in z.iter_mut().enumerate() {
            let mixed: f64 = (0..STATE_DIM).map(|k| q[r * d + k] * s[k]).sum();
            let noise: f64 = if cfg.embedding.noise > 0.0 {
                cfg.embedding.noise * embed_rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            *zr = (mixed + noise) as f32;
        }
        if let (Some(imgs), Some(tex)) = (images.as_mut(), texture.as_ref()) {
            imgs.push(render_sky(tex, a, sun, cfg.camera_rotation_deg, i));
        }
        let key = ts.timestamp();
        records.push((key, z));
        samples.push(Sample {
            timestamp: ts,
            embedding_key: Some(key),
            zenith_deg: sun.zenith,
            azimuth_deg: sun.azimuth,
            target,
            interpolated: false,
            image_path: cfg.render_size.map(|_| format!("images/{key}.png")),
        });
        attenuation.push(a);
        clearsky_ghi.push(cs);
        latent.push(s);
    }
    Ok(SynthOutput {
        dataset: Dataset::new(meta.clone(), samples)?,
        store: EmbeddingStore::from_records(d, records)?,
        attenuation,
        clearsky_ghi,
        latent,
        mixing: q,
        images,
    })
}

struct CloudTexture {
    size: usize,
    /// Twice the raster width so clouds can drift across the frame.
    field: Vec<f64>,
}

fn cloud_texture(size: usize, rng: &mut ChaCha8Rng) -> CloudTexture {
    let coarse = 6;
    let (w, h) = (2 * coarse, coarse);
    let grid: Vec<f64> = (0..(w + 1) * (h + 1)).map(|_| rng.random::<f64>()).collect();
    let at = |x: usize, y: usize| grid[y * (w + 1) + x];
    let mut field = Vec::with_capacity(2 * size * size);
    for r in 0..size {
        for c in 0..2 * size {
            let fy = r as f64 / size as f64 * h as f64;
            let fx = c as f64 / (2 * size) as f64 * w as f64;
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bottom = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            field.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    CloudTexture { size, field }
}

/// Fisheye sky: blue background scaled by sun elevation, a sun disk whose
/// position depends on the camera rotation, and drifting clouds covering a
/// fraction `a` of the texture.
fn render_sky(tex: &CloudTexture, a: f64, sun: solar::SolarAngles, rotation_deg: f64, step: usize) -> Raster {
    let s = tex.size;
    let light = sun.cos_zenith().max(0.0);
    let radius = (sun.zenith / 90.0).min(1.2);
    let angle = (sun.azimuth + rotation_deg).to_radians();
    let (sx, sy) = (radius * angle.sin(), -radius * angle.cos());
    let shift = step % s;
    let mut data = Vec::with_capacity(s * s * 3);
    for r in 0..s {
        for c in 0..s {
            let x = 2.0 * (c as f64 + 0.5) / s as f64 - 1.0;
            let y = 2.0 * (r as f64 + 0.5) / s as f64 - 1.0;
            if x * x + y * y > 1.0 {
                data.extend([0, 0, 0]);
                continue;
            }
            let mut rgb = [0.15 + 0.25 * light, 0.25 + 0.35 * light, 0.45 + 0.5 * light];
            let glare = (-((x - sx).powi(2) + (y - sy).powi(2)) / 0.03).exp() * light;
            let cloudy = tex.field[r * 2 * s + (c + shift)] < a;
            for ch in &mut rgb {
                *ch += glare * (1.0 - a);
                if cloudy {
                    *ch = 0.25 + 0.6 * light;
                }
            }
            data.extend(rgb.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    Raster {
        height: s,
        width: s,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solar::{GeoLocation, PanelOrientation};

    fn config(kappa: f64, mixing: Mixing, noise: f64) -> SynthSiteConfig {
        SynthSiteConfig {
            meta: SiteMeta::new(
                "syn",
                GeoLocation::new(35.0, -100.0).unwrap(),
                PanelOrientation::horizontal(),
                10,
                TargetKind::Ghi,
                None,
            )
            .unwrap(),
            cloud: CloudProcess {
                kappa,
                ..CloudProcess::default()
            },
            embedding: EmbeddingConfig { dim: 8, mixing, noise },
            pv_gain: 0.005,
            pv_noise: 0.02,
            start_date: NaiveDate::from_ymd_opt(2021, 4, 1).unwrap(),
            days: 2,
            seed: 5,
            clearsky: ClearSkyConfig::default(),
            render_size: None,
            camera_rotation_deg: 0.0,
        }
    }

    #[test]
    fn no_clouds_means_clear_sky() {
        let out = generate_site(&config(0.0, Mixing::Identity, 0.0)).unwrap();
        for (s, cs) in out.dataset.samples.iter().zip(&out.clearsky_ghi) {
            assert_eq!(s.target, *cs);
        }
    }

    #[test]
    fn identity_mixing_exposes_latent_state() {
        let out = generate_site(&config(0.5, Mixing::Identity, 0.0)).unwrap();
        for (i, s) in out.latent.iter().enumerate() {
            let (_, z) = out.store.record(i);
            for k in 0..STATE_DIM {
                assert_eq!(z[k], s[k] as f32);
            }
            assert!(z[STATE_DIM..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn camera_shift_is_orthogonal() {
        let q = mixing_matrix(
            &Mixing::CameraShift {
                base_seed: 1,
                shift_seed: 2,
                cloud_angle_deg: 10.0,
            },
            12,
        )
        .unwrap();
        assert!(orthogonality_error(&q, 12) < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        assert!(generate_site(&config(1.5, Mixing::Identity, 0.0)).is_err());
        let mut c = config(0.5, Mixing::Explicit { matrix: vec![1.0; 64] }, 0.0);
        assert!(generate_site(&c).is_err());
        c.embedding.mixing = Mixing::Identity;
        c.days = 0;
        assert!(generate_site(&c).is_err());
    }

    #[test]
    fn rendered_rasters_have_requested_size() {
        let mut c = config(0.5, Mixing::Identity, 0.0);
        c.render_size = Some(12);
        let out = generate_site(&c).unwrap();
        let imgs = out.images.unwrap();
        assert_eq!(imgs.len(), out.dataset.len());
        assert_eq!((imgs[0].height, imgs[0].width, imgs[0].data.len()), (12, 12, 12 * 12 * 3));
    }
}
