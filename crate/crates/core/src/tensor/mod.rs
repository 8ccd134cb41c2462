//! Dense `f64` numerics with hand-written reverse-mode rules.

mod gradcheck;
mod lstm;
mod matrix;
pub mod ops;
mod params;

pub use gradcheck::{check_gradients, Coordinate, GradCheckReport};
pub use lstm::{lstm_cell_backward, lstm_cell_forward, LstmCache, LstmGrads, LstmParams};
pub use matrix::Matrix;
pub use params::{GradStore, ParamStore};
