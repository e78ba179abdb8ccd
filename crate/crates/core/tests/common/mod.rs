#![allow(dead_code)]

use std::path::Path;

use critical_sparse::cifar::{serialize_batch, RawRecord, BATCH_FILES, PIXEL_BYTES};
use critical_sparse::conv::Dictionary;
use critical_sparse::lca::SynthesisOperator;
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense synthesis matrix, columns are atoms.
pub struct DenseDict {
    pub atoms: Array2<f64>,
}

impl DenseDict {
    pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize, n_atoms: usize) -> Self {
        let mut atoms: Array2<f64> = Array2::from_shape_fn((dim, n_atoms), |_| rng.random_range(-1.0..1.0));
        for mut col in atoms.columns_mut() {
            let n = col.dot(&col).sqrt();
            col /= n;
        }
        Self { atoms }
    }
}

impl SynthesisOperator for DenseDict {
    fn signal_len(&self) -> usize {
        self.atoms.nrows()
    }

    fn code_len(&self) -> usize {
        self.atoms.ncols()
    }

    fn synthesize(&self, code: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..code.len()).map(|j| self.atoms[[i, j]] * code[j]).sum();
        }
    }

    fn analyze(&self, signal: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..signal.len()).map(|i| self.atoms[[i, j]] * signal[i]).sum();
        }
    }
}

pub fn lasso_objective(d: &Array2<f64>, x: &[f64], a: &[f64], lambda: f64) -> f64 {
    let r = Array1::from(x.to_vec()) - d.dot(&Array1::from(a.to_vec()));
    0.5 * r.dot(&r) + lambda * a.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent on `0.5 |x - D a|^2 + lambda |a|_1`.
pub fn lasso_cd(d: &Array2<f64>, x: &[f64], lambda: f64) -> Vec<f64> {
    let n = d.ncols();
    let col_sq: Vec<f64> = d.columns().into_iter().map(|c| c.dot(&c)).collect();
    let mut a = vec![0.0; n];
    let mut r = Array1::from(x.to_vec());
    for _ in 0..100_000 {
        let mut max_change = 0.0f64;
        for j in 0..n {
            let col = d.column(j);
            let rho = col.dot(&r) + col_sq[j] * a[j];
            let new = if rho > lambda {
                (rho - lambda) / col_sq[j]
            } else if rho < -lambda {
                (rho + lambda) / col_sq[j]
            } else {
                0.0
            };
            let delta = new - a[j];
            if delta != 0.0 {
                r.scaled_add(-delta, &col);
                a[j] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < 1e-15 {
            break;
        }
    }
    a
}

/// Largest violation of the LASSO optimality conditions.
pub fn kkt_residual(d: &Array2<f64>, x: &[f64], a: &[f64], lambda: f64) -> f64 {
    let r = Array1::from(x.to_vec()) - d.dot(&Array1::from(a.to_vec()));
    let corr = d.t().dot(&r);
    corr.iter()
        .zip(a)
        .map(|(&c, &aj)| {
            if aj != 0.0 {
                (c - lambda * aj.signum()).abs()
            } else {
                (c.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub fn random_dictionary(rng: &mut ChaCha8Rng, features: usize, channels: usize, patch: usize, stride: usize) -> Dictionary {
    let k = Array2::from_shape_fn((features, channels * patch * patch), |_| rng.random_range(-1.0..1.0));
    Dictionary::normalized(k, channels, patch, stride).unwrap()
}

/// `sum_{g,f} a[g,f] * kernel_f` placed at `g * stride`, by explicit loops.
/// `kernels` is `(F, C*P*P)` in `(channel, row, col)` order and need not be
/// unit norm.
pub fn naive_reconstruct(
    kernels: &Array2<f64>,
    code: &Array3<f64>,
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
    stride: usize,
) -> Array3<f64> {
    let mut out = Array3::zeros((channels, height, width));
    let (gy, gx, features) = code.dim();
    for y in 0..gy {
        for x in 0..gx {
            for f in 0..features {
                let a = code[[y, x, f]];
                if a == 0.0 {
                    continue;
                }
                for c in 0..channels {
                    for i in 0..patch {
                        for j in 0..patch {
                            out[[c, y * stride + i, x * stride + j]] +=
                                a * kernels[[f, (c * patch + i) * patch + j]];
                        }
                    }
                }
            }
        }
    }
    out
}

/// One smooth synthetic image in CIFAR byte layout.
pub fn synthetic_pixels(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut out = vec![0u8; PIXEL_BYTES];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.6..0.6),
                rng.random_range(0.0..6.3),
                rng.random_range(20.0..60.0),
            )
        })
        .collect();
    for c in 0..3 {
        let tint = rng.random_range(-30.0..30.0);
        for y in 0..32 {
            for x in 0..32 {
                let v: f64 = 128.0
                    + tint
                    + waves
                        .iter()
                        .map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph + c as f64 * 0.3).sin())
                        .sum::<f64>()
                    + rng.random_range(-4.0..4.0);
                out[(c * 32 + y) * 32 + x] = v.clamp(0.0, 255.0).round() as u8;
            }
        }
    }
    out
}

/// Writes all six batch files with `per_file` synthetic records each.
pub fn write_synthetic_cifar(dir: &Path, per_file: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut index = 0usize;
    for name in BATCH_FILES {
        let records: Vec<RawRecord> = (0..per_file)
            .map(|_| {
                let label = (index % 10) as u8;
                index += 1;
                RawRecord::new(label, &synthetic_pixels(&mut rng)).unwrap()
            })
            .collect();
        std::fs::write(dir.join(name), serialize_batch(&records)).unwrap();
    }
}
