//! CIFAR-10 binary ingest, train/test split and seeded noise injection.
//!
//! A binary batch is a sequence of 3073-byte records: one label byte followed
//! by 1024 red, 1024 green and 1024 blue bytes, each plane row-major 32x32.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Preprocessing, CIFAR_CHANNELS, CIFAR_SIDE};

pub const PIXEL_BYTES: usize = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE;
pub const RECORD_BYTES: usize = PIXEL_BYTES + 1;
pub const NUM_CLASSES: u8 = 10;

pub const FULL_TRAIN: usize = 50_000;
pub const FULL_TEST: usize = 10_000;

/// Batch files in canonical order: five training batches, then the test batch.
pub const BATCH_FILES: [&str; 6] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
    "test_batch.bin",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub label: u8,
    pub pixels: Box<[u8; PIXEL_BYTES]>,
}

impl RawRecord {
    pub fn new(label: u8, pixels: &[u8]) -> Result<Self> {
        if label >= NUM_CLASSES {
            return Err(Error::Label { record: 0, label });
        }
        let pixels: Box<[u8; PIXEL_BYTES]> = pixels
            .to_vec()
            .into_boxed_slice()
            .try_into()
            .map_err(|_| Error::Shape(format!("pixel payload must be {PIXEL_BYTES} bytes")))?;
        Ok(Self { label, pixels })
    }
}

pub fn parse_batch(bytes: &[u8]) -> Result<Vec<RawRecord>> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Length(bytes.len()));
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(record, chunk)| {
            let label = chunk[0];
            if label >= NUM_CLASSES {
                return Err(Error::Label { record, label });
            }
            let mut pixels = Box::new([0u8; PIXEL_BYTES]);
            pixels.copy_from_slice(&chunk[1..]);
            Ok(RawRecord { label, pixels })
        })
        .collect()
}

pub fn serialize_batch(records: &[RawRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        out.push(r.label);
        out.extend_from_slice(&r.pixels[..]);
    }
    out
}

pub fn read_batch_file(path: &Path) -> Result<Vec<RawRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_batch(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads the batches of `dir` in canonical order, stopping once `limit`
/// records have been collected. Files past the limit are never opened.
pub fn load_records(dir: &Path, limit: Option<usize>) -> Result<Vec<RawRecord>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        ));
    }
    let mut records = Vec::new();
    for name in BATCH_FILES {
        if limit.is_some_and(|l| records.len() >= l) {
            break;
        }
        let path: PathBuf = dir.join(name);
        records.extend(read_batch_file(&path)?);
    }
    if let Some(l) = limit {
        records.truncate(l);
    }
    Ok(records)
}

pub fn to_image(record: &RawRecord, mode: Preprocessing) -> Image {
    let mut data = Array3::from_shape_fn((CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE), |(c, r, x)| {
        f64::from(record.pixels[(c * CIFAR_SIDE + r) * CIFAR_SIDE + x]) / 255.0
    });
    if mode == Preprocessing::Zeromean {
        for mut plane in data.outer_iter_mut() {
            let mean = plane.sum() / plane.len() as f64;
            plane.mapv_inplace(|v| v - mean);
        }
    }
    Image::new(data, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitMode {
    /// Exactly 60,000 records: first 50,000 train, last 10,000 test.
    Full,
    /// Any record count, split by the given train fraction.
    Reduced { train_fraction: f64 },
}

pub fn split_dataset<T>(mut items: Vec<T>, mode: SplitMode) -> Result<(Vec<T>, Vec<T>)> {
    let n_train = match mode {
        SplitMode::Full => {
            if items.len() != FULL_TRAIN + FULL_TEST {
                return Err(Error::Count {
                    expected: FULL_TRAIN + FULL_TEST,
                    actual: items.len(),
                });
            }
            FULL_TRAIN
        }
        SplitMode::Reduced { train_fraction } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(Error::InvalidParam(format!(
                    "train_fraction must lie in (0, 1), got {train_fraction}"
                )));
            }
            let n_train = (items.len() as f64 * train_fraction).round() as usize;
            if n_train == 0 || n_train == items.len() {
                return Err(Error::Count {
                    expected: 2,
                    actual: items.len(),
                });
            }
            n_train
        }
    };
    let test = items.split_off(n_train);
    Ok((items, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub master_seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, master_seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParam(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { sigma, master_seed })
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Stafford variant 13).
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th stream under `master_seed`.
///
/// This is element `index` of the SplitMix64 sequence started at
/// `master_seed`: `mix64(master + (index + 1) * 0x9E3779B97F4A7C15)`.
/// For a fixed master it is injective in `index`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    mix64(master_seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

/// Deterministic generator for the `index`-th stream (ChaCha8).
pub fn stream_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master_seed, index))
}

/// Adds i.i.d. Gaussian noise; no clipping.
pub fn add_noise(image: &Image, spec: &NoiseSpec, index: u64) -> Image {
    if spec.sigma == 0.0 {
        return image.clone();
    }
    let normal = Normal::new(0.0, spec.sigma).expect("sigma validated non-negative");
    let mut rng = stream_rng(spec.master_seed, index);
    let mut out = image.clone();
    for v in out.data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    out
}
