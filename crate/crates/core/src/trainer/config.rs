use std::fmt;
use std::str::FromStr;

use crate::curriculum::{CurriculumKind, DEFAULT_THRESHOLD};
use crate::error::{Error, Result};
use crate::model::{LayerKind, LossSettings, ModelConfig, TaskMode};

/// How a batch is sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// A fixed number of sequences.
    Sequences(usize),
    /// Sequences are added until their steps reach this many.
    Points(usize),
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchMode::Sequences(n) => write!(f, "sequences:{n}"),
            BatchMode::Points(n) => write!(f, "points:{n}"),
        }
    }
}

impl FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, n) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("batch mode {s:?} is not kind:size")))?;
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad batch size in {s:?}")))?;
        if n == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        match kind.trim() {
            "sequences" => Ok(BatchMode::Sequences(n)),
            "points" => Ok(BatchMode::Points(n)),
            other => Err(Error::Config(format!("unknown batch mode {other:?}"))),
        }
    }
}

/// Everything that determines a training run, apart from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-epoch learning rate multiplier.
    pub decay: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub batch_mode: BatchMode,
    pub num_mixtures: usize,
    pub hidden: Vec<usize>,
    pub layer: LayerKind,
    pub scale: f64,
    pub curriculum: CurriculumKind,
    pub task: TaskMode,
    pub seed: u64,
    /// Training stops once this many points have been processed.
    pub budget_points: u64,
    /// Test metrics are recorded every this many batches.
    pub eval_every: u64,
    pub threshold: f64,
    /// Global gradient norm limit; 0 disables clipping.
    pub clip: f64,
    pub init_scale: f64,
    /// Save a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: u64,
    /// Fill the `seconds` column; off keeps metrics byte-reproducible.
    pub wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0025,
            decay: 0.99995,
            lambda: 0.25,
            gamma: 10.0,
            batch_mode: BatchMode::Sequences(50),
            num_mixtures: 17,
            hidden: vec![200, 200],
            layer: LayerKind::Recurrent,
            scale: 10.0,
            curriculum: CurriculumKind::Regular,
            task: TaskMode::Prediction,
            seed: 0,
            budget_points: 1_000_000,
            eval_every: 20,
            threshold: DEFAULT_THRESHOLD,
            clip: 5.0,
            init_scale: crate::model::DEFAULT_INIT_SCALE,
            checkpoint_every: 0,
            wall_clock: false,
        }
    }
}

pub(crate) const KEYS: &[&str] = &[
    "learning_rate",
    "decay",
    "lambda",
    "gamma",
    "batch_mode",
    "num_mixtures",
    "hidden",
    "layer",
    "scale",
    "curriculum",
    "task",
    "beta",
    "seed",
    "budget_points",
    "eval_every",
    "threshold",
    "clip",
    "init_scale",
    "checkpoint_every",
    "wall_clock",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            num_mixtures: self.num_mixtures,
            hidden_sizes: self.hidden.clone(),
            layer_kind: self.layer,
            scale: self.scale,
        }
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            task: self.task,
            lambda: self.lambda,
            gamma: self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        let positive = [
            ("learning_rate", self.learning_rate),
            ("gamma", self.gamma),
            ("threshold", self.threshold),
            ("init_scale", self.init_scale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if !(self.lambda >= 0.0 && self.clip >= 0.0) {
            return Err(Error::Config("lambda and clip must be non-negative".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        Ok(())
    }

    /// Set one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "batch_mode" => self.batch_mode = value.parse()?,
            "num_mixtures" => self.num_mixtures = parse(key, value)?,
            "hidden" => {
                self.hidden = value
                    .split(',')
                    .map(|h| parse(key, h.trim()))
                    .collect::<Result<_>>()?
            }
            "layer" => self.layer = value.parse()?,
            "scale" => self.scale = parse(key, value)?,
            "curriculum" => self.curriculum = value.parse()?,
            "task" => {
                let beta = matches!(
                    self.task,
                    TaskMode::Classification {
                        with_prediction: true
                    }
                );
                self.task = match value {
                    "prediction" => TaskMode::Prediction,
                    "classification" => TaskMode::Classification {
                        with_prediction: beta,
                    },
                    _ => return Err(Error::Config(format!("unknown task {value:?}"))),
                }
            }
            "beta" => {
                let with_prediction = match value {
                    "0" => false,
                    "1" => true,
                    _ => return Err(Error::Config(format!("beta must be 0 or 1, got {value:?}"))),
                };
                if let TaskMode::Classification { .. } = self.task {
                    self.task = TaskMode::Classification { with_prediction };
                } else if !with_prediction {
                    return Err(Error::Config("beta = 0 needs task = classification".into()));
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "budget_points" => self.budget_points = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "threshold" => self.threshold = parse(key, value)?,
            "clip" => self.clip = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "wall_clock" => self.wall_clock = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Read `key = value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; `task` is applied before `beta`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        pairs.sort_by_key(|(k, _)| k == "beta");
        for (k, v) in pairs {
            config.set(&k, &v)?;
        }
        Ok(config)
    }

    /// `key = value` lines for every field; [`TrainConfig::parse`] inverts it.
    pub fn to_text(&self) -> String {
        let hidden: Vec<String> = self.hidden.iter().map(ToString::to_string).collect();
        let (task, beta) = match self.task {
            TaskMode::Prediction => ("prediction", 1),
            TaskMode::Classification { with_prediction } => {
                ("classification", u8::from(with_prediction))
            }
        };
        let values: Vec<String> = vec![
            self.learning_rate.to_string(),
            self.decay.to_string(),
            self.lambda.to_string(),
            self.gamma.to_string(),
            self.batch_mode.to_string(),
            self.num_mixtures.to_string(),
            hidden.join(","),
            self.layer.to_string(),
            self.scale.to_string(),
            self.curriculum.to_string(),
            task.to_string(),
            beta.to_string(),
            self.seed.to_string(),
            self.budget_points.to_string(),
            self.eval_every.to_string(),
            self.threshold.to_string(),
            self.clip.to_string(),
            self.init_scale.to_string(),
            self.checkpoint_every.to_string(),
            self.wall_clock.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
