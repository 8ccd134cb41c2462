//! Pen-stroke sequence learning on handwritten digits.
//!
//! The crate covers the whole path from raster digits to trained sequence
//! models:
//!
//! - [`strokes`]: IDX parsing, incremental thresholding, Zhang-Suen thinning
//!   and greedy stroke extraction into `(dx, dy, eos, eod)` sequences.
//! - [`tensor`]: a small dense `f64` engine with LSTM cells, reverse-mode
//!   gradients and a finite-difference checker.
//! - [`model`]: the recurrent (or feed-forward) mixture density network with
//!   its prediction and classification losses.
//! - [`curriculum`]: regular training plus three growing-data schedules,
//!   including training on growing sequence prefixes.
//! - [`trainer`]: batching, Adam, metrics, checkpoints and transfer runs.
//! - [`generate`]: guided prediction traces, free-running generation,
//!   classification traces and SVG/PGM output.

pub mod curriculum;
pub mod error;
pub mod generate;
pub mod model;
pub mod seed;
pub mod strokes;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
