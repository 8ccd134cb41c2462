use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `(dx, dy, eos, eod)`.
pub const INPUT_SIZE: usize = 4;
pub const CLASS_COUNT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Recurrent,
    Feedforward,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Recurrent => "lstm",
            LayerKind::Feedforward => "ff",
        })
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" | "recurrent" => Ok(LayerKind::Recurrent),
            "ff" | "feedforward" => Ok(LayerKind::Feedforward),
            _ => Err(Error::Config(format!("unknown layer kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_mixtures: usize,
    pub hidden_sizes: Vec<usize>,
    pub layer_kind: LayerKind,
    /// Offsets are divided by this before entering the network.
    pub scale: f64,
}

impl ModelConfig {
    pub fn new(num_mixtures: usize, hidden_sizes: Vec<usize>, layer_kind: LayerKind) -> Self {
        Self {
            num_mixtures,
            hidden_sizes,
            layer_kind,
            scale: 10.0,
        }
    }

    pub fn output_size(&self) -> usize {
        6 * self.num_mixtures + 2 + CLASS_COUNT
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_mixtures == 0 {
            return Err(Error::Config("num_mixtures must be at least 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config(
                "hidden sizes must be non-empty and positive".into(),
            ));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config("scale must be positive".into()));
        }
        Ok(())
    }
}

/// What the loss optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    /// Next-step prediction only; the class head is ignored.
    Prediction,
    /// Classification loss, plus the prediction loss when `with_prediction`
    /// (the binary weight on the prediction term).
    Classification { with_prediction: bool },
}

impl TaskMode {
    pub fn beta(&self) -> f64 {
        match self {
            TaskMode::Prediction => 1.0,
            TaskMode::Classification { with_prediction } => f64::from(u8::from(*with_prediction)),
        }
    }

    pub fn classifies(&self) -> bool {
        matches!(self, TaskMode::Classification { .. })
    }
}
