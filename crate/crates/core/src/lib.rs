//! Convolutional sparse coding (LCA) for image denoising, with a sweep
//! harness and finite-size-scaling analysis of the reconstruction-error
//! minimum across dictionary sizes.

pub mod cifar;
pub mod cli;
pub mod config;
pub mod conv;
pub mod dictfile;
pub mod error;
pub mod fss;
pub mod image;
pub mod lca;
pub mod learning;
pub mod metrics;
pub mod plot;
pub mod report;
pub mod sweep;

pub use error::{Error, Result};
