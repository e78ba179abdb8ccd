use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{CoverageMask, Image};
use crate::lca::SparseCode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellObservables {
    pub p_err: f64,
    pub stderr_p: f64,
    pub f_active: f64,
    pub stderr_f: f64,
    pub n_images: usize,
}

/// `sum (s - s_hat)^2 / sum s^2` over the covered pixels.
pub fn percent_err(clean: &Image, recon: &Image, mask: &CoverageMask) -> Result<f64> {
    if clean.shape() != recon.shape() {
        return Err(Error::Shape(format!(
            "clean {:?} vs reconstruction {:?}",
            clean.shape(),
            recon.shape()
        )));
    }
    mask.check_image(clean)?;
    let mut num = NeumaierSum::default();
    let mut den = NeumaierSum::default();
    for (s, r) in mask.zip_covered(clean, recon) {
        num.add((s - r) * (s - r));
        den.add(s * s);
    }
    let den = den.total();
    if den == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(num.total() / den)
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.compensation += (self.sum - t) + v;
        } else {
            self.compensation += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Mean and standard error (`sample std / sqrt(n)`) with compensated sums.
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let n = values.len() as f64;
    let mut s = NeumaierSum::default();
    values.iter().for_each(|&v| s.add(v));
    let mean = s.total() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let mut ss = NeumaierSum::default();
    values.iter().for_each(|&v| ss.add((v - mean) * (v - mean)));
    let std = (ss.total() / (n - 1.0)).sqrt();
    Ok((mean, std / n.sqrt()))
}

pub fn mean_percent_err<'a, I>(pairs: I, mask: &CoverageMask) -> Result<(f64, f64)>
where
    I: IntoIterator<Item = (&'a Image, &'a Image)>,
{
    let errs = pairs
        .into_iter()
        .map(|(clean, recon)| percent_err(clean, recon, mask))
        .collect::<Result<Vec<_>>>()?;
    mean_stderr(&errs)
}

/// Exactly nonzero activations over all units of the layer.
pub fn fraction_active(code: &SparseCode) -> f64 {
    let total = code.activations.len();
    if total == 0 {
        return 0.0;
    }
    code.activations.iter().filter(|&&a| a != 0.0).count() as f64 / total as f64
}

/// Aggregates per-image `(percent_err, fraction_active)` pairs, in order.
pub fn cell_observables(per_image: &[(f64, f64)]) -> Result<CellObservables> {
    let errs: Vec<f64> = per_image.iter().map(|p| p.0).collect();
    let active: Vec<f64> = per_image.iter().map(|p| p.1).collect();
    let (p_err, stderr_p) = mean_stderr(&errs)?;
    let (f_active, stderr_f) = mean_stderr(&active)?;
    Ok(CellObservables {
        p_err,
        stderr_p,
        f_active,
        stderr_f,
        n_images: per_image.len(),
    })
}
