//! Convolutional dictionary and its synthesis/analysis pair.
//!
//! Kernels are stored as rows of an `(F, C*P*P)` matrix, each row laid out
//! `(channel, row, col)` with `col` fastest. Unit `(gy, gx, f)` of a code
//! places kernel `f` with its top-left corner at `(gy*stride, gx*stride)`.
//! Convolution is valid-mode: no padding.

use ndarray::{Array2, Array3, ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::image::{CoverageMask, Image, Preprocessing};
use crate::lca::SynthesisOperator;

/// Tolerance on the unit-norm invariant of every kernel.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    kernels: Array2<f64>,
    channels: usize,
    patch: usize,
    stride: usize,
}

impl Dictionary {
    /// Wraps kernels that are already unit norm.
    pub fn new(kernels: Array2<f64>, channels: usize, patch: usize, stride: usize) -> Result<Self> {
        let dict = Self::unchecked(kernels, channels, patch, stride)?;
        for (f, row) in dict.kernels.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidParam(format!(
                    "kernel {f} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(dict)
    }

    /// Projects every kernel onto the unit sphere.
    pub fn normalized(
        mut kernels: Array2<f64>,
        channels: usize,
        patch: usize,
        stride: usize,
    ) -> Result<Self> {
        normalize_rows(&mut kernels)?;
        Self::unchecked(kernels, channels, patch, stride)
    }

    fn unchecked(kernels: Array2<f64>, channels: usize, patch: usize, stride: usize) -> Result<Self> {
        if channels == 0 || patch == 0 || stride == 0 {
            return Err(Error::InvalidParam(
                "channels, patch and stride must be positive".into(),
            ));
        }
        let (features, len) = kernels.dim();
        if features == 0 {
            return Err(Error::InvalidParam("dictionary needs at least one kernel".into()));
        }
        if len != channels * patch * patch {
            return Err(Error::Shape(format!(
                "kernel rows have {len} values, expected {channels}x{patch}x{patch}"
            )));
        }
        Ok(Self {
            kernels,
            channels,
            patch,
            stride,
        })
    }

    pub fn features(&self) -> usize {
        self.kernels.nrows()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels.ncols()
    }

    pub fn kernels(&self) -> ArrayView2<'_, f64> {
        self.kernels.view()
    }

    pub fn into_kernels(self) -> Array2<f64> {
        self.kernels
    }

    /// Kernel `f` as a `(C, P, P)` array.
    pub fn kernel(&self, f: usize) -> Array3<f64> {
        self.kernels
            .row(f)
            .to_owned()
            .into_shape_with_order((self.channels, self.patch, self.patch))
            .expect("kernel length checked at construction")
    }

    /// Code grid `(gy, gx)` for an image of the given height and width.
    pub fn grid(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height < self.patch || width < self.patch {
            return Err(Error::Shape(format!(
                "{height}x{width} image is smaller than {0}x{0} kernels",
                self.patch
            )));
        }
        Ok((
            (height - self.patch) / self.stride + 1,
            (width - self.patch) / self.stride + 1,
        ))
    }

    pub fn coverage_mask(&self, height: usize, width: usize) -> Result<CoverageMask> {
        let (gy, gx) = self.grid(height, width)?;
        let covered = Array2::from_shape_fn((height, width), |(r, c)| {
            r < (gy - 1) * self.stride + self.patch && c < (gx - 1) * self.stride + self.patch
        });
        Ok(CoverageMask::from_array(covered))
    }

    /// Operator view of this dictionary over images of a fixed shape.
    pub fn operator(&self, height: usize, width: usize) -> Result<ConvOperator<'_>> {
        let (gy, gx) = self.grid(height, width)?;
        Ok(ConvOperator {
            dict: self,
            height,
            width,
            gy,
            gx,
        })
    }
}

pub(crate) fn normalize_rows(kernels: &mut Array2<f64>) -> Result<()> {
    for (f, mut row) in kernels.outer_iter_mut().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "kernel {f} has norm {norm} and cannot be normalized"
            )));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(())
}

/// A dictionary bound to an image shape.
#[derive(Debug, Clone, Copy)]
pub struct ConvOperator<'a> {
    dict: &'a Dictionary,
    height: usize,
    width: usize,
    gy: usize,
    gx: usize,
}

impl<'a> ConvOperator<'a> {
    pub fn grid(&self) -> (usize, usize) {
        (self.gy, self.gx)
    }

    pub fn positions(&self) -> usize {
        self.gy * self.gx
    }

    /// im2col: row `g` holds the receptive field of grid position `g`.
    pub fn patches(&self, signal: &[f64]) -> Array2<f64> {
        let (c_n, p, s) = (self.dict.channels, self.dict.patch, self.dict.stride);
        let (h, w) = (self.height, self.width);
        let mut out = Array2::zeros((self.positions(), self.dict.kernel_len()));
        for (g, mut row) in out.outer_iter_mut().enumerate() {
            let (y0, x0) = ((g / self.gx) * s, (g % self.gx) * s);
            let row = row.as_slice_mut().expect("owned row is contiguous");
            for c in 0..c_n {
                for dy in 0..p {
                    let src = (c * h + y0 + dy) * w + x0;
                    let dst = (c * p + dy) * p;
                    row[dst..dst + p].copy_from_slice(&signal[src..src + p]);
                }
            }
        }
        out
    }

    /// col2im: sums patch rows back into an image-shaped buffer.
    fn fold(&self, patches: ArrayView2<'_, f64>, out: &mut [f64]) {
        let (c_n, p, s) = (self.dict.channels, self.dict.patch, self.dict.stride);
        let (h, w) = (self.height, self.width);
        out.fill(0.0);
        for (g, row) in patches.outer_iter().enumerate() {
            let (y0, x0) = ((g / self.gx) * s, (g % self.gx) * s);
            for c in 0..c_n {
                for dy in 0..p {
                    let dst = (c * h + y0 + dy) * w + x0;
                    let src = (c * p + dy) * p;
                    for dx in 0..p {
                        out[dst + dx] += row[src + dx];
                    }
                }
            }
        }
    }

    /// Negative gradient of `0.5 * ||x - D*a||^2` with respect to the kernels,
    /// given the residual `x - D*a`: `delta[f] = sum_g a[g, f] * patch_g(residual)`.
    pub fn kernel_delta(&self, residual: &[f64], code: &[f64]) -> Array2<f64> {
        let patches = self.patches(residual);
        let code = ArrayView2::from_shape((self.positions(), self.dict.features()), code)
            .expect("code length matches operator");
        code.t().dot(&patches)
    }
}

impl SynthesisOperator for ConvOperator<'_> {
    fn signal_len(&self) -> usize {
        self.dict.channels * self.height * self.width
    }

    fn code_len(&self) -> usize {
        self.positions() * self.dict.features()
    }

    fn synthesize(&self, code: &[f64], out: &mut [f64]) {
        let code = ArrayView2::from_shape((self.positions(), self.dict.features()), code)
            .expect("code length matches operator");
        let placed = code.dot(&self.dict.kernels);
        self.fold(placed.view(), out);
    }

    fn analyze(&self, signal: &[f64], out: &mut [f64]) {
        let drive = self.patches(signal).dot(&self.dict.kernels.t());
        let mut out = ArrayViewMut2::from_shape((self.positions(), self.dict.features()), out)
            .expect("code length matches operator");
        out.assign(&drive);
    }
}

fn check_image_channels(image: &Image, dict: &Dictionary) -> Result<()> {
    if image.channels() != dict.channels() {
        return Err(Error::Shape(format!(
            "image has {} channels, dictionary expects {}",
            image.channels(),
            dict.channels()
        )));
    }
    Ok(())
}

/// Transposed convolution of a `(gy, gx, F)` activation grid.
pub fn reconstruct_grid(
    activations: &Array3<f64>,
    dict: &Dictionary,
    height: usize,
    width: usize,
) -> Result<Image> {
    let op = dict.operator(height, width)?;
    let (gy, gx) = op.grid();
    if activations.dim() != (gy, gx, dict.features()) {
        return Err(Error::Shape(format!(
            "code grid {:?} does not match dictionary grid ({gy}, {gx}, {})",
            activations.dim(),
            dict.features()
        )));
    }
    let code = activations.as_standard_layout();
    let mut out = vec![0.0; op.signal_len()];
    op.synthesize(code.as_slice().expect("standard layout"), &mut out);
    Image::from_flat((dict.channels(), height, width), out, Preprocessing::Zeromean)
}

/// Valid-mode correlation of an image with every kernel; the adjoint of
/// [`reconstruct_grid`]. Returns a `(gy, gx, F)` grid of drive values.
pub fn correlate(residual: &Image, dict: &Dictionary) -> Result<Array3<f64>> {
    check_image_channels(residual, dict)?;
    let op = dict.operator(residual.height(), residual.width())?;
    let (gy, gx) = op.grid();
    let mut out = vec![0.0; op.code_len()];
    op.analyze(residual.as_slice(), &mut out);
    Ok(Array3::from_shape_vec((gy, gx, dict.features()), out).expect("length matches grid"))
}

/// Sum over the grid of `a[g, f] * patch_g(residual)`, one row per kernel.
pub fn hebbian_delta(residual: &Image, activations: &Array3<f64>, dict: &Dictionary) -> Result<Array2<f64>> {
    check_image_channels(residual, dict)?;
    let op = dict.operator(residual.height(), residual.width())?;
    let (gy, gx) = op.grid();
    if activations.dim() != (gy, gx, dict.features()) {
        return Err(Error::Shape(format!(
            "code grid {:?} does not match dictionary grid ({gy}, {gx}, {})",
            activations.dim(),
            dict.features()
        )));
    }
    let code = activations.as_standard_layout();
    Ok(op.kernel_delta(residual.as_slice(), code.as_slice().expect("standard layout")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dict(rng: &mut ChaCha8Rng, f: usize, c: usize, p: usize, s: usize) -> Dictionary {
        let k = Array2::from_shape_fn((f, c * p * p), |_| rng.random_range(-1.0..1.0));
        Dictionary::normalized(k, c, p, s).unwrap()
    }

    #[test]
    fn grid_dims_follow_valid_tiling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_dict(&mut rng, 4, 3, 8, 4);
        assert_eq!(d.grid(32, 32).unwrap(), (7, 7));
        assert!(d.grid(7, 32).is_err());
        let d = random_dict(&mut rng, 2, 1, 5, 3);
        assert_eq!(d.grid(12, 12).unwrap(), (3, 3));
        let mask = d.coverage_mask(12, 12).unwrap();
        assert_eq!(mask.covered_pixels(), 11 * 11);
        assert!(!mask.is_covered(11, 0));
    }

    #[test]
    fn new_rejects_non_unit_kernels() {
        let k = Array2::from_elem((2, 4), 1.0);
        assert!(Dictionary::new(k.clone(), 1, 2, 1).is_err());
        let d = Dictionary::normalized(k, 1, 2, 1).unwrap();
        assert!(Dictionary::new(d.kernels().to_owned(), 1, 2, 1).is_ok());
        assert!(Dictionary::normalized(Array2::zeros((1, 4)), 1, 2, 1).is_err());
        assert!(Dictionary::normalized(Array2::ones((1, 5)), 1, 2, 1).is_err());
    }

    #[test]
    fn zero_code_reconstructs_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_dict(&mut rng, 5, 3, 8, 4);
        let img = reconstruct_grid(&Array3::zeros((7, 7, 5)), &d, 32, 32).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_unit_places_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_dict(&mut rng, 3, 3, 8, 4);
        let mut a = Array3::zeros((7, 7, 3));
        a[(0, 0, 2)] = 1.0;
        let img = reconstruct_grid(&a, &d, 32, 32).unwrap();
        let k = d.kernel(2);
        for ((c, r, x), &v) in img.data.indexed_iter() {
            let expected = if r < 8 && x < 8 { k[(c, r, x)] } else { 0.0 };
            assert_eq!(v, expected);
        }
    }

    #[test]
    fn kernel_at_origin_correlates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_dict(&mut rng, 4, 3, 8, 4);
        let mut a = Array3::zeros((7, 7, 4));
        a[(0, 0, 1)] = 1.0;
        let img = reconstruct_grid(&a, &d, 32, 32).unwrap();
        let b = correlate(&img, &d).unwrap();
        assert!((b[(0, 0, 1)] - 1.0).abs() < 1e-12);
        assert!(correlate(&Image::zeros(3, 32, 32), &d)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_dict(&mut rng, 4, 3, 8, 4);
        assert!(matches!(
            reconstruct_grid(&Array3::zeros((6, 7, 4)), &d, 32, 32),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            correlate(&Image::zeros(1, 32, 32), &d),
            Err(Error::Shape(_))
        ));
    }
}
