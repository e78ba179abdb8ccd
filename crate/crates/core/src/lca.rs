//! Locally competitive algorithm, residual-driven form.
//!
//! Lateral inhibition is never materialized as a Gram matrix. Each step
//! correlates the current residual `x - D a` with the dictionary:
//!
//! ```text
//! b  = D^T (x - D a)
//! u += (dt / tau) * (b + a - u)
//! a  = T_lambda(u)
//! ```
//!
//! Fixed points satisfy the LASSO optimality conditions for
//! `0.5 * ||x - D a||^2 + lambda * ||a||_1`.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::conv::Dictionary;
use crate::error::{Error, Result};
use crate::image::Image;

/// Energy above `DIVERGENCE_FACTOR` times the initial energy aborts a run.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// A linear generative model `x = D a` together with its adjoint.
pub trait SynthesisOperator: Sync {
    fn signal_len(&self) -> usize;
    fn code_len(&self) -> usize;
    /// `out = D a`
    fn synthesize(&self, code: &[f64], out: &mut [f64]);
    /// `out = D^T r`
    fn analyze(&self, signal: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    #[default]
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcaParams {
    pub lambda: f64,
    pub tau: f64,
    pub dt: f64,
    pub n_iters: usize,
    #[serde(default)]
    pub threshold: ThresholdKind,
}

impl Default for LcaParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            tau: 100.0,
            dt: 1.0,
            n_iters: 400,
            threshold: ThresholdKind::Soft,
        }
    }
}

impl LcaParams {
    pub fn with_lambda(self, lambda: f64) -> Self {
        Self { lambda, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParam(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParam(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.dt > 0.0 && self.dt <= self.tau) {
            return Err(Error::InvalidParam(format!(
                "dt must lie in (0, tau], got dt={} tau={}",
                self.dt, self.tau
            )));
        }
        if self.n_iters == 0 {
            return Err(Error::InvalidParam("n_iters must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn soft_threshold(u: f64, lambda: f64) -> f64 {
    if u.abs() <= lambda {
        0.0
    } else {
        u - lambda.copysign(u)
    }
}

/// Flat result of an LCA run on any [`SynthesisOperator`].
#[derive(Debug, Clone, PartialEq)]
pub struct LcaState {
    pub activations: Vec<f64>,
    pub potentials: Vec<f64>,
    /// `E(a_t)` after each iteration.
    pub energy: Vec<f64>,
    /// Largest `|du|` in the final iteration.
    pub last_step: f64,
}

struct Workspace<'a, O: SynthesisOperator> {
    op: &'a O,
    x: &'a [f64],
    lambda: f64,
    rate: f64,
    u: Vec<f64>,
    a: Vec<f64>,
    drive: Vec<f64>,
    residual: Vec<f64>,
    initial_energy: f64,
    energy: Vec<f64>,
}

impl<'a, O: SynthesisOperator> Workspace<'a, O> {
    fn new(op: &'a O, x: &'a [f64], params: &LcaParams) -> Result<Self> {
        params.validate()?;
        if x.len() != op.signal_len() {
            return Err(Error::Shape(format!(
                "signal has {} values, operator expects {}",
                x.len(),
                op.signal_len()
            )));
        }
        let m = op.code_len();
        Ok(Self {
            op,
            x,
            lambda: params.lambda,
            rate: params.dt / params.tau,
            u: vec![0.0; m],
            a: vec![0.0; m],
            drive: vec![0.0; m],
            residual: x.to_vec(),
            initial_energy: 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            energy: Vec::new(),
        })
    }

    /// One Euler step; returns the largest potential change.
    fn step(&mut self) -> Result<f64> {
        self.op.analyze(&self.residual, &mut self.drive);
        let mut max_du = 0.0f64;
        for ((u, a), b) in self.u.iter_mut().zip(self.a.iter_mut()).zip(&self.drive) {
            let du = self.rate * (b + *a - *u);
            *u += du;
            *a = soft_threshold(*u, self.lambda);
            max_du = max_du.max(du.abs());
        }
        self.op.synthesize(&self.a, &mut self.residual);
        for (r, x) in self.residual.iter_mut().zip(self.x) {
            *r = x - *r;
        }
        let energy = 0.5 * self.residual.iter().map(|r| r * r).sum::<f64>()
            + self.lambda * self.a.iter().map(|a| a.abs()).sum::<f64>();
        let iteration = self.energy.len() + 1;
        self.energy.push(energy);
        if !energy.is_finite() || energy > DIVERGENCE_FACTOR * self.initial_energy {
            return Err(Error::Divergence {
                iteration,
                energy,
                initial: self.initial_energy,
            });
        }
        Ok(max_du)
    }

    fn finish(self, last_step: f64) -> LcaState {
        LcaState {
            activations: self.a,
            potentials: self.u,
            energy: self.energy,
            last_step,
        }
    }
}

/// Runs exactly `params.n_iters` steps from `u = 0`.
pub fn run_lca<O: SynthesisOperator>(op: &O, x: &[f64], params: &LcaParams) -> Result<LcaState> {
    let mut ws = Workspace::new(op, x, params)?;
    let mut last = 0.0;
    for _ in 0..params.n_iters {
        last = ws.step()?;
    }
    Ok(ws.finish(last))
}

/// Runs until the largest potential change drops to `tol`, at most
/// `max_iters` steps. `params.n_iters` is ignored.
pub fn run_lca_to_tolerance<O: SynthesisOperator>(
    op: &O,
    x: &[f64],
    params: &LcaParams,
    tol: f64,
    max_iters: usize,
) -> Result<LcaState> {
    let mut ws = Workspace::new(op, x, params)?;
    let mut last = f64::INFINITY;
    while ws.energy.len() < max_iters {
        last = ws.step()?;
        if last <= tol {
            break;
        }
    }
    Ok(ws.finish(last))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodeMeta {
    pub image_id: Option<u64>,
    pub lambda: f64,
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    /// `(gy, gx, F)` activations; exact zeros where `|u| <= lambda`.
    pub activations: Array3<f64>,
    pub potentials: Array3<f64>,
    /// `(height, width)` of the encoded image.
    pub image_shape: (usize, usize),
    pub meta: CodeMeta,
}

impl SparseCode {
    pub fn units(&self) -> usize {
        self.activations.len()
    }

    /// Code produced by thresholding fixed potentials.
    pub fn from_potentials(
        potentials: Array3<f64>,
        lambda: f64,
        image_shape: (usize, usize),
    ) -> Self {
        let activations = potentials.mapv(|u| soft_threshold(u, lambda));
        let features = potentials.dim().2;
        Self {
            activations,
            potentials,
            image_shape,
            meta: CodeMeta {
                image_id: None,
                lambda,
                features,
            },
        }
    }
}

pub type EnergyTrace = Vec<f64>;

pub fn encode(image: &Image, dict: &Dictionary, params: &LcaParams) -> Result<(SparseCode, EnergyTrace)> {
    if image.channels() != dict.channels() {
        return Err(Error::Shape(format!(
            "image has {} channels, dictionary expects {}",
            image.channels(),
            dict.channels()
        )));
    }
    let (h, w) = (image.height(), image.width());
    let op = dict.operator(h, w)?;
    let (gy, gx) = op.grid();
    let state = run_lca(&op, image.as_slice(), params)?;
    let shape = (gy, gx, dict.features());
    let code = SparseCode {
        activations: Array3::from_shape_vec(shape, state.activations).expect("grid length"),
        potentials: Array3::from_shape_vec(shape, state.potentials).expect("grid length"),
        image_shape: (h, w),
        meta: CodeMeta {
            image_id: None,
            lambda: params.lambda,
            features: dict.features(),
        },
    };
    Ok((code, state.energy))
}

pub fn reconstruct(code: &SparseCode, dict: &Dictionary) -> Result<Image> {
    let (h, w) = code.image_shape;
    crate::conv::reconstruct_grid(&code.activations, dict, h, w)
}

pub fn denoise(noisy: &Image, dict: &Dictionary, params: &LcaParams) -> Result<(Image, SparseCode)> {
    let (code, _) = encode(noisy, dict, params)?;
    let mut recon = reconstruct(&code, dict)?;
    recon.preprocessing = noisy.preprocessing;
    Ok((recon, code))
}
