//! Road detection by on-line video alignment.
//!
//! A live ("observed") ride is synchronized frame by frame against a stored
//! ("reference") ride whose road masks are known. Corresponding frames are
//! registered by a three-angle rotation, the reference mask is warped onto
//! the observed frame, and objects absent from the reference (vehicles) are
//! carved out by background subtraction.
//!
//! Module map:
//! - [`image`]: pixel buffers, NetPBM I/O, raster operations
//! - [`invariant`]: illuminant-invariant gray images
//! - [`descriptor`]: frame descriptors and the similarity likelihood
//! - [`temporal`]: fixed-lag max-product synchronization
//! - [`spatial`]: rotation registration and warping
//! - [`transfer`]: mask transfer and foreground removal
//! - [`eval`]: pixel-wise metrics
//! - [`synth`]: synthetic paired rides with ground truth
//! - [`config`], [`pipeline`]: the end-to-end commands

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod exec;
pub mod image;
pub mod invariant;
pub mod pipeline;
pub mod spatial;
pub mod synth;
pub mod temporal;
pub mod transfer;

pub use error::{Error, LoadError, Result};
pub use exec::Exec;
