//! Subject-invariant SSVEP signal generation with 1D convolutional GANs.
//!
//! The crate covers the whole pipeline: a parametric SSVEP oracle that stands
//! in for recorded EEG, a small from-scratch 1D CNN engine (convolution,
//! transposed convolution, batch norm, PReLU, dropout, Adam), DC-GAN, AC-GAN
//! and subject-invariant GAN training, and the zero-calibration evaluation
//! protocols (single subject, leave-one-subject-out, cross-task).

pub mod config;
pub mod error;
pub mod eval;
pub mod io;
mod par;
pub mod nn;
pub mod oracle;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
