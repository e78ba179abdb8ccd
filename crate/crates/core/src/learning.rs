//! Dictionary learning: encode each clean image, then move every kernel
//! along the Hebbian product of its activations and the residual
//! (plain SGD on the reconstruction term), then project back onto the
//! unit sphere.

use std::time::Instant;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cifar::stream_rng;
use crate::conv::{hebbian_delta, normalize_rows, Dictionary, UNIT_NORM_TOL};
use crate::error::{Error, Result};
use crate::image::{Image, CIFAR_CHANNELS};
use crate::lca::{encode, reconstruct, LcaParams, SparseCode};
use crate::metrics::fraction_active;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub init_seed: u64,
    pub features: usize,
    pub patch: usize,
    pub stride: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
}

fn default_channels() -> usize {
    CIFAR_CHANNELS
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 2,
            batch_size: 1,
            lambda: 0.5,
            init_seed: 1,
            features: 64,
            patch: 8,
            stride: 4,
            channels: CIFAR_CHANNELS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParam("epochs and batch_size must be >= 1".into()));
        }
        if self.features == 0 || self.patch == 0 || self.stride == 0 || self.channels == 0 {
            return Err(Error::InvalidParam("dictionary geometry must be positive".into()));
        }
        Ok(())
    }
}

/// Gaussian kernels from the `init_seed` stream, each scaled to unit norm.
pub fn init_dictionary(config: &TrainConfig) -> Result<Dictionary> {
    if config.features == 0 || config.patch == 0 || config.stride == 0 || config.channels == 0 {
        return Err(Error::InvalidParam("dictionary geometry must be positive".into()));
    }
    let mut rng = stream_rng(config.init_seed, 0);
    let len = config.channels * config.patch * config.patch;
    let kernels = Array2::from_shape_simple_fn((config.features, len), || {
        StandardNormal.sample(&mut rng)
    });
    Dictionary::normalized(kernels, config.channels, config.patch, config.stride)
}

fn residual(image: &Image, code: &SparseCode, dict: &Dictionary) -> Result<Image> {
    let recon = reconstruct(code, dict)?;
    Ok(Image::new(&image.data - &recon.data, image.preprocessing))
}

/// The pre-normalization kernel step `lr * sum_g a[g,f] * patch_g(x - D*a)`.
pub fn kernel_step(dict: &Dictionary, image: &Image, code: &SparseCode, lr: f64) -> Result<Array2<f64>> {
    if code.image_shape != (image.height(), image.width()) {
        return Err(Error::Shape(format!(
            "code was computed for a {:?} image, got {}x{}",
            code.image_shape,
            image.height(),
            image.width()
        )));
    }
    let r = residual(image, code, dict)?;
    Ok(hebbian_delta(&r, &code.activations, dict)? * lr)
}

fn apply_step(dict: &Dictionary, step: &Array2<f64>) -> Result<Dictionary> {
    if step.iter().all(|&v| v == 0.0) {
        return Ok(dict.clone());
    }
    let mut kernels = dict.kernels().to_owned();
    kernels += step;
    normalize_rows(&mut kernels)?;
    debug_assert!(kernels
        .outer_iter()
        .all(|k| (k.dot(&k).sqrt() - 1.0).abs() <= UNIT_NORM_TOL));
    Dictionary::new(kernels, dict.channels(), dict.patch(), dict.stride())
}

pub fn hebbian_update(dict: &Dictionary, image: &Image, code: &SparseCode, lr: f64) -> Result<Dictionary> {
    let step = kernel_step(dict, image, code, lr)?;
    apply_step(dict, &step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_energy: f64,
    pub mean_fraction_active: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub dictionary: Dictionary,
    pub log: Vec<EpochStats>,
}

/// Trains on `train_set` in fixed order. Within a batch, images are
/// encoded in parallel against the same dictionary; their steps are summed
/// in image order and applied once.
pub fn train(train_set: &[Image], config: &TrainConfig, lca: &LcaParams) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let params = lca.with_lambda(config.lambda);
    params.validate()?;
    let mut dict = init_dictionary(config)?;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let mut energy_sum = 0.0;
        let mut active_sum = 0.0;
        for batch in train_set.chunks(config.batch_size) {
            let results: Vec<(Array2<f64>, f64, f64)> = batch
                .par_iter()
                .map(|image| {
                    let (code, trace) = encode(image, &dict, &params)?;
                    let step = kernel_step(&dict, image, &code, config.learning_rate)?;
                    let energy = trace.last().copied().unwrap_or(0.0);
                    Ok((step, energy, fraction_active(&code)))
                })
                .collect::<Result<_>>()?;
            let mut total = Array2::zeros((dict.features(), dict.kernel_len()));
            for (step, energy, active) in &results {
                total += step;
                energy_sum += energy;
                active_sum += active;
            }
            dict = apply_step(&dict, &total)?;
        }
        let n = train_set.len() as f64;
        let stats = EpochStats {
            epoch,
            mean_energy: energy_sum / n,
            mean_fraction_active: active_sum / n,
            wall_time: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "F={} lambda={} epoch {epoch}: mean energy {:.6}, fraction active {:.5}",
            config.features,
            config.lambda,
            stats.mean_energy,
            stats.mean_fraction_active
        );
        log.push(stats);
    }
    Ok(TrainOutcome {
        dictionary: dict,
        log,
    })
}

/// Training-log CSV: `epoch,mean_energy,mean_fraction_active,wall_time`.
pub fn training_log_csv(log: &[EpochStats]) -> String {
    let mut out = String::from("epoch,mean_energy,mean_fraction_active,wall_time\n");
    for s in log {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.3}\n",
            s.epoch, s.mean_energy, s.mean_fraction_active, s.wall_time
        ));
    }
    out
}
