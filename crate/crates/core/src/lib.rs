//! Structure-guided diffusion transformer for low-light image enhancement.
//!
//! The model works in the wavelet domain: a two-level Haar decomposition
//! of the low-light input feeds structure-enhancement modules, whose
//! level-2 output conditions a diffusion transformer that generates the
//! level-2 low-frequency band. Learned heads estimate the high bands and
//! two inverse transforms rebuild the image.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diffusion;
pub mod dit;
mod error;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod sem;
pub mod structure;
pub mod train;
pub mod verify;
pub mod wavelet;

pub use error::{Result, SdtlError};
pub use sdtl_tensor as tensor;
