//! Timestamp-indexed embedding store and a deterministic stand-in encoder.
//!
//! Store layout (little-endian): magic `SPEM`, `u32` version (1), `u32` dim,
//! `u64` record count, then per record an `i64` unix-seconds timestamp
//! followed by `dim` `f32` values. Records are sorted ascending.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"SPEM";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    timestamps: Vec<i64>,
    values: Vec<f32>,
}

impl EmbeddingStore {
    /// Builds a store from `(timestamp, vector)` records, sorting by time.
    pub fn from_records(dim: usize, mut records: Vec<(i64, Vec<f32>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dim must be >= 1"));
        }
        records.sort_by_key(|r| r.0);
        let mut timestamps = Vec::with_capacity(records.len());
        let mut values = Vec::with_capacity(records.len() * dim);
        for (ts, v) in records {
            if v.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if timestamps.last() == Some(&ts) {
                return Err(Error::invalid(format!("duplicate embedding timestamp {ts}")));
            }
            timestamps.push(ts);
            values.extend_from_slice(&v);
        }
        Ok(Self {
            dim,
            timestamps,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn record(&self, i: usize) -> (i64, &[f32]) {
        (self.timestamps[i], &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn lookup(&self, timestamp: i64) -> Result<&[f32]> {
        match self.timestamps.binary_search(&timestamp) {
            Ok(i) => Ok(self.record(i).1),
            Err(_) => Err(Error::MissingEmbedding(timestamp)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (8 + 4 * self.dim));
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for i in 0..self.len() {
            let (ts, v) = self.record(i);
            out.extend_from_slice(&ts.to_le_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("embedding store truncated in header".into()));
        }
        if &bytes[0..4] != STORE_MAGIC {
            return Err(Error::Format(format!("bad embedding store magic {:?}", &bytes[0..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != STORE_VERSION {
            return Err(Error::Format(format!("unsupported embedding store version {version}")));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("embedding store has dim 0".into()));
        }
        let record_len = 8 + 4 * dim;
        let expected = (n as u128) * (record_len as u128) + HEADER_LEN as u128;
        if (bytes.len() as u128) < expected {
            return Err(Error::Format(format!(
                "embedding store truncated: {} bytes, header promises {expected}",
                bytes.len()
            )));
        }
        if (bytes.len() as u128) > expected {
            return Err(Error::Format("trailing bytes after embedding records".into()));
        }
        let n = n as usize;
        let mut timestamps = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n * dim);
        for rec in bytes[HEADER_LEN..].chunks_exact(record_len) {
            let ts = i64::from_le_bytes(rec[0..8].try_into().unwrap());
            if let Some(&prev) = timestamps.last() {
                if prev >= ts {
                    return Err(Error::Format(format!("records not strictly sorted at timestamp {ts}")));
                }
            }
            timestamps.push(ts);
            values.extend(
                rec[8..]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
            );
        }
        Ok(Self {
            dim,
            timestamps,
            values,
        })
    }
}

pub fn write_store(path: &Path, store: &EmbeddingStore) -> Result<()> {
    if store.is_empty() {
        return Err(Error::invalid("refusing to write an empty embedding store"));
    }
    fs::write(path, store.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_store(path: &Path) -> Result<EmbeddingStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingStore::from_bytes(&bytes)
}

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "raster data has {} bytes, expected {}",
                data.len(),
                height * width * 3
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, data }
    }

    /// Luma in `[0, 1]` with integer Rec. 601 weights, so gray pixels map to
    /// exactly `v / 255`.
    pub fn gray(&self, row: usize, col: usize) -> f64 {
        let i = (row * self.width + col) * 3;
        let (r, g, b) = (u32::from(self.data[i]), u32::from(self.data[i + 1]), u32::from(self.data[i + 2]));
        f64::from(299 * r + 587 * g + 114 * b) / 1000.0 / 255.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubEncoderConfig {
    pub grid: usize,
    pub normalize: bool,
}

impl Default for StubEncoderConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            normalize: false,
        }
    }
}

impl StubEncoderConfig {
    pub fn output_dim(&self) -> usize {
        self.grid * self.grid + 4
    }
}

/// Mean-pooled `g x g` grayscale grid followed by global mean, std, min and
/// max of the grayscale image.
pub fn stub_encode(image: &Raster, cfg: &StubEncoderConfig) -> Result<Vec<f32>> {
    let g = cfg.grid;
    if !(2..=32).contains(&g) {
        return Err(Error::Config(format!("stub encoder grid {g} outside [2, 32]")));
    }
    if image.height < g || image.width < g {
        return Err(Error::invalid(format!(
            "image {}x{} smaller than the {g}x{g} grid",
            image.height, image.width
        )));
    }
    let mut sums = vec![0.0f64; g * g];
    let mut counts = vec![0usize; g * g];
    let mut total = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in 0..image.height {
        let cell_r = r * g / image.height;
        for c in 0..image.width {
            let cell = cell_r * g + c * g / image.width;
            let v = image.gray(r, c);
            sums[cell] += v;
            counts[cell] += 1;
            total += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let n = (image.height * image.width) as f64;
    let mean = total / n;
    let mut ss = 0.0f64;
    for r in 0..image.height {
        for c in 0..image.width {
            ss += (image.gray(r, c) - mean).powi(2);
        }
    }
    let std = (ss / n).sqrt();

    let mut out: Vec<f64> = sums.iter().zip(&counts).map(|(s, &k)| s / k as f64).collect();
    out.extend([mean, std, lo, hi]);
    if cfg.normalize {
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(out.into_iter().map(|v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record_round_trip() {
        let store = EmbeddingStore::from_records(3, vec![(42, vec![1.0, -2.5, f32::MIN_POSITIVE])]).unwrap();
        let back = EmbeddingStore::from_bytes(&store.to_bytes()).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let store = EmbeddingStore::from_records(2, vec![(1, vec![0.0, 1.0])]).unwrap();
        let mut bytes = store.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(EmbeddingStore::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_and_versioned_files() {
        let store = EmbeddingStore::from_records(2, vec![(1, vec![0.0, 1.0]), (2, vec![3.0, 4.0])]).unwrap();
        let bytes = store.to_bytes();
        assert!(EmbeddingStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(EmbeddingStore::from_bytes(&bytes[..10]).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(EmbeddingStore::from_bytes(&v2).is_err());
    }

    #[test]
    fn dim_consistency_enforced() {
        let r = EmbeddingStore::from_records(2, vec![(1, vec![0.0, 1.0]), (2, vec![3.0])]);
        assert!(matches!(r, Err(Error::DimMismatch { expected: 2, got: 1 })));
    }

    #[test]
    fn lookup_present_and_absent() {
        let store = EmbeddingStore::from_records(1, vec![(10, vec![1.0]), (20, vec![2.0])]).unwrap();
        assert_eq!(store.lookup(20).unwrap(), &[2.0]);
        assert!(matches!(store.lookup(15), Err(Error::MissingEmbedding(15))));
    }

    #[test]
    fn uniform_gray_image() {
        let img = Raster::filled(16, 20, [77, 77, 77]);
        let cfg = StubEncoderConfig { grid: 4, normalize: false };
        let z = stub_encode(&img, &cfg).unwrap();
        assert_eq!(z.len(), 20);
        for v in &z[..16] {
            assert_eq!(*v, (77.0f64 / 255.0) as f32);
        }
        assert!(z[17].abs() < 1e-12);
        assert_eq!(stub_encode(&img, &cfg).unwrap(), z);
    }

    #[test]
    fn undersized_image_rejected() {
        let img = Raster::filled(3, 3, [0, 0, 0]);
        assert!(stub_encode(&img, &StubEncoderConfig { grid: 4, normalize: false }).is_err());
    }

    #[test]
    fn normalized_output_has_unit_norm() {
        let img = Raster::new(4, 4, (0..48).map(|i| (i * 5) as u8).collect()).unwrap();
        let z = stub_encode(&img, &StubEncoderConfig { grid: 2, normalize: true }).unwrap();
        let norm: f64 = z.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}
