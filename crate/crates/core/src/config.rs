//! Run configuration: one TOML document with `data`, `noise`, `preprocess`,
//! `lca`, `train`, `sweep` and `analyze` sections. Every section and key is
//! optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cifar::{NoiseSpec, SplitMode};
use crate::error::{Error, Result};
use crate::fss::Weighting;
use crate::image::Preprocessing;
use crate::lca::{LcaParams, ThresholdKind};
use crate::learning::TrainConfig;

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "CRITICAL_SPARSE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dir: PathBuf,
    /// Use `reduced_count` records split by `train_fraction` instead of the
    /// canonical 50,000 / 10,000 split.
    pub reduced: bool,
    pub reduced_count: usize,
    pub train_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/cifar-10-batches-bin"),
            reduced: true,
            reduced_count: 2_500,
            train_fraction: 0.8,
        }
    }
}

impl DataSection {
    pub fn split_mode(&self) -> SplitMode {
        if self.reduced {
            SplitMode::Reduced {
                train_fraction: self.train_fraction,
            }
        } else {
            SplitMode::Full
        }
    }

    pub fn record_limit(&self) -> Option<usize> {
        self.reduced.then_some(self.reduced_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            seed: 2019,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub mode: Preprocessing,
}

/// LCA dynamics; the threshold comes from the cell being run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LcaSection {
    pub tau: f64,
    pub dt: f64,
    pub n_iters: usize,
    pub threshold: ThresholdKind,
}

impl Default for LcaSection {
    fn default() -> Self {
        let d = LcaParams::default();
        Self {
            tau: d.tau,
            dt: d.dt,
            n_iters: d.n_iters,
            threshold: d.threshold,
        }
    }
}

impl LcaSection {
    pub fn params(&self, lambda: f64) -> LcaParams {
        LcaParams {
            lambda,
            tau: self.tau,
            dt: self.dt,
            n_iters: self.n_iters,
            threshold: self.threshold,
        }
    }
}

/// Training hyperparameters; size and threshold come from the cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_seed: u64,
    pub patch: usize,
    pub stride: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            init_seed: d.init_seed,
            patch: d.patch,
            stride: d.stride,
        }
    }
}

impl TrainSection {
    /// Config for one `(F, lambda)` cell. The init seed depends on `F` only,
    /// so every threshold at a given size starts from the same dictionary.
    pub fn cell_config(&self, features: usize, lambda: f64, channels: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lambda,
            init_seed: crate::cifar::derive_seed(self.init_seed, features as u64),
            features,
            patch: self.patch,
            stride: self.stride,
            channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sizes: Vec<usize>,
    /// Explicit thresholds; when empty, `lambda_count` log-spaced values
    /// from `lambda_min` to `lambda_max` are used.
    pub lambdas: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    /// Results file name, relative to the output directory.
    pub results: String,
    pub save_dictionaries: bool,
    /// Not part of the config hash.
    pub workers: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            sizes: vec![16, 32, 64, 128],
            lambdas: Vec::new(),
            lambda_min: 0.25,
            lambda_max: 4.0,
            lambda_count: 8,
            results: "results.csv".into(),
            save_dictionaries: true,
            workers: 1,
        }
    }
}

impl SweepSection {
    pub fn lambda_grid(&self) -> Vec<f64> {
        if !self.lambdas.is_empty() {
            return self.lambdas.clone();
        }
        log_space(self.lambda_min, self.lambda_max, self.lambda_count)
    }
}

pub fn log_space(min: f64, max: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![min],
        _ => {
            let (lo, hi) = (min.ln(), max.ln());
            (0..count)
                .map(|i| {
                    if i == count - 1 {
                        max
                    } else {
                        (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Refinement {
    #[default]
    Parabolic,
    Argmin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    pub window: usize,
    pub refine: Refinement,
    pub weighting: Weighting,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            window: 5,
            refine: Refinement::Parabolic,
            weighting: Weighting::Unweighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub noise: NoiseSection,
    pub preprocess: PreprocessSection,
    pub lca: LcaSection,
    pub train: TrainSection,
    pub sweep: SweepSection,
    pub analyze: AnalyzeSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.noise.sigma, self.noise.seed)
    }

    /// Applies a global `--seed`: noise stream and dictionary initialization
    /// are both derived from it.
    pub fn override_seed(&mut self, seed: u64) {
        self.noise.seed = crate::cifar::derive_seed(seed, 0);
        self.train.init_seed = crate::cifar::derive_seed(seed, 1);
    }

    /// Hex SHA-256 prefix of the canonical JSON form (sorted keys), with
    /// execution-only keys removed.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.sweep.workers = 0;
        let value = serde_json::to_value(&canonical).expect("config serializes");
        let text = serde_json::to_string(&value).expect("json value serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex_prefix(&digest, 16)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise_spec()?;
        self.lca.params(0.0).validate()?;
        self.train.cell_config(1, 0.0, 3).validate()?;
        if self.analyze.window < 3 || self.analyze.window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "analyze.window must be odd and >= 3, got {}",
                self.analyze.window
            )));
        }
        Ok(())
    }
}

pub(crate) fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    bytes
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>()
        .chars()
        .take(chars)
        .collect()
}
