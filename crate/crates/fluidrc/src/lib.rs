//! Reservoir computing on a simulated microfluidic chip.
//!
//! The crate covers the full desk-scale pipeline: binary 3x5 injection
//! patterns, a compartment-flow chip simulator with camera optics, signal
//! quantization and normalization, Gaussian data augmentation, a trained
//! softmax readout, and the analysis tools (mutual information maps,
//! similarity and difference matrices, parameter sweeps) used to study it.

pub mod augment;
pub mod config;
pub mod error;
pub mod io;
pub mod matrix;
pub mod patterns;
pub mod pipeline;
pub mod readout;
pub mod reservoir;
pub mod signal;

pub mod analysis;

pub use error::{Error, Result};
