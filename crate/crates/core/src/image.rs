use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side length of a CIFAR-10 image.
pub const CIFAR_SIDE: usize = 32;
/// Colour channels of a CIFAR-10 image.
pub const CIFAR_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preprocessing {
    /// Bytes scaled to `[0, 1]`.
    Raw01,
    /// `Raw01` followed by per-channel mean subtraction.
    #[default]
    Zeromean,
}

/// A channel-planar raster, indexed `(channel, row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub data: Array3<f64>,
    pub preprocessing: Preprocessing,
}

impl Image {
    pub fn new(data: Array3<f64>, preprocessing: Preprocessing) -> Self {
        Self {
            data,
            preprocessing,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(
            Array3::zeros((channels, height, width)),
            Preprocessing::Raw01,
        )
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Contiguous standard-layout values, channel-major.
    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("image data is always standard layout")
    }

    pub fn from_flat(
        shape: (usize, usize, usize),
        values: Vec<f64>,
        preprocessing: Preprocessing,
    ) -> Result<Self> {
        let data = Array3::from_shape_vec(shape, values)
            .map_err(|e| Error::Shape(format!("image from flat values: {e}")))?;
        Ok(Self::new(data, preprocessing))
    }
}

/// Pixels touched by at least one receptive field. Applies to every channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMask {
    covered: Array2<bool>,
}

impl CoverageMask {
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            covered: Array2::from_elem((height, width), true),
        }
    }

    pub fn from_array(covered: Array2<bool>) -> Self {
        Self { covered }
    }

    pub fn height(&self) -> usize {
        self.covered.dim().0
    }

    pub fn width(&self) -> usize {
        self.covered.dim().1
    }

    pub fn is_covered(&self, row: usize, col: usize) -> bool {
        self.covered[(row, col)]
    }

    pub fn covered_pixels(&self) -> usize {
        self.covered.iter().filter(|&&c| c).count()
    }

    pub fn check_image(&self, image: &Image) -> Result<()> {
        if image.height() != self.height() || image.width() != self.width() {
            return Err(Error::Shape(format!(
                "mask is {}x{}, image is {}x{}",
                self.height(),
                self.width(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Visits `(a, b)` value pairs at every covered pixel of every channel.
    pub(crate) fn zip_covered<'a>(
        &'a self,
        a: &'a Image,
        b: &'a Image,
    ) -> impl Iterator<Item = (f64, f64)> + 'a {
        a.data
            .indexed_iter()
            .filter(move |((_, r, c), _)| self.covered[(*r, *c)])
            .map(move |(idx, &va)| (va, b.data[idx]))
    }
}
