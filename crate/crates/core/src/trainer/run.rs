use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use super::adam::Adam;
use super::batching::{epoch_rng, make_batches};
use super::checkpoint::{Checkpoint, TrainState};
use super::config::TrainConfig;
use super::metrics::{
    evaluate, metrics_csv, parse_metrics_csv, rmse_from, views, MetricsRecord, METRICS_HEADER,
};
use crate::curriculum::{CurriculumKind, CurriculumState};
use crate::error::{Error, Result};
use crate::model::{evaluate_batch, Batch, LossSettings, Model, TaskMode};
use crate::seed::{rng_for, INIT};
use crate::strokes::{SeqView, StrokeSequence};

/// Hooks called by [`Trainer::run`].
pub trait Observer {
    fn on_record(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    /// Called after each epoch's bookkeeping, when the trainer is at an
    /// exact resume point.
    fn on_epoch_end(&mut self, _trainer: &Trainer<'_>) -> Result<()> {
        Ok(())
    }

    /// Checked before every batch; `true` ends the run early.
    fn should_stop(&self) -> bool {
        false
    }
}

pub struct NoObserver;

impl Observer for NoObserver {}

pub struct Trainer<'d> {
    config: TrainConfig,
    settings: LossSettings,
    model: Model,
    adam: Adam,
    curriculum: CurriculumState,
    state: TrainState,
    train: &'d [StrokeSequence],
    test: Vec<SeqView<'d>>,
    metrics: Vec<MetricsRecord>,
    started: Instant,
}

impl<'d> Trainer<'d> {
    /// Fresh run with weights drawn from the run seed.
    pub fn new(
        config: TrainConfig,
        train: &'d [StrokeSequence],
        test: &'d [StrokeSequence],
    ) -> Result<Self> {
        config.validate()?;
        let model = Model::with_init_scale(
            config.model_config(),
            config.init_scale,
            &mut rng_for(config.seed, INIT),
        )?;
        Self::with_model(config, model, train, test)
    }

    /// Fresh run starting from existing weights.
    pub fn with_model(
        config: TrainConfig,
        model: Model,
        train: &'d [StrokeSequence],
        test: &'d [StrokeSequence],
    ) -> Result<Self> {
        config.validate()?;
        if model.config() != &config.model_config() {
            return Err(Error::Config(format!(
                "model {:?} does not match the run config {:?}",
                model.config(),
                config.model_config()
            )));
        }
        let curriculum = CurriculumState::new(config.curriculum, train, config.seed)
            .with_threshold(config.threshold);
        Ok(Self {
            settings: config.loss_settings(),
            adam: Adam::new(model.params()),
            model,
            curriculum,
            state: TrainState::default(),
            train,
            test: views(test),
            metrics: Vec::new(),
            started: Instant::now(),
            config,
        })
    }

    /// Continue from a checkpoint taken on the same data.
    pub fn resume(
        checkpoint: Checkpoint,
        train: &'d [StrokeSequence],
        test: &'d [StrokeSequence],
    ) -> Result<Self> {
        let Checkpoint {
            config,
            params,
            adam_step,
            adam_m,
            adam_v,
            rng,
            state,
            curriculum_limit,
            curriculum_log,
        } = checkpoint;
        if rng != epoch_rng(config.seed, state.epoch) {
            return Err(Error::Checkpoint(
                "rng state does not belong to this seed and epoch".into(),
            ));
        }
        let model = Model::from_params(config.model_config(), params)?;
        let mut trainer = Self::with_model(config, model, train, test)?;
        trainer.adam = Adam::from_state(trainer.model.params(), adam_step, adam_m, adam_v)?;
        trainer
            .curriculum
            .restore(curriculum_limit, curriculum_log)?;
        trainer.state = state;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.model.params().clone(),
            adam_step: self.adam.step_count(),
            adam_m: self.adam.first_moment().clone(),
            adam_v: self.adam.second_moment().clone(),
            rng: epoch_rng(self.config.seed, self.state.epoch),
            state: self.state,
            curriculum_limit: self.curriculum.limit(),
            curriculum_log: self.curriculum.log().to_vec(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn curriculum(&self) -> &CurriculumState {
        &self.curriculum
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Records produced by this trainer instance.
    pub fn metrics(&self) -> &[MetricsRecord] {
        &self.metrics
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate * self.config.decay.powf(self.state.epoch as f64)
    }

    fn record(&mut self, observer: &mut dyn Observer) -> Result<()> {
        let s = &mut self.state;
        let (train_rmse, train_loss) = if s.window_points > 0 {
            (
                rmse_from(s.window_sse, s.window_points as usize),
                s.window_loss / s.window_points as f64,
            )
        } else {
            let view = self.curriculum.view(self.train);
            let e = evaluate(&self.model, &view, &self.settings)?;
            (e.rmse, e.loss)
        };
        let (test_rmse, test_loss, accuracy) = if self.test.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let e = evaluate(&self.model, &self.test, &self.settings)?;
            (e.rmse, e.loss, e.accuracy)
        };
        let record = MetricsRecord {
            points: s.points,
            epoch: s.epoch,
            train_rmse,
            test_rmse,
            train_loss,
            test_loss,
            accuracy,
            limit: self.curriculum.limit(),
            seconds: if self.config.wall_clock {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        s.window_sse = 0.0;
        s.window_loss = 0.0;
        s.window_points = 0;
        s.last_record = Some(s.points);
        log::info!(
            "points {} epoch {} train_rmse {:.4} test_rmse {:.4} accuracy {:.4} limit {}",
            record.points,
            record.epoch,
            record.train_rmse,
            record.test_rmse,
            record.accuracy,
            record.limit
        );
        self.metrics.push(record);
        observer.on_record(&record)
    }

    fn abort(&self, reason: String) -> Error {
        Error::Aborted {
            points: self.state.points,
            reason,
        }
    }

    fn train_batch(&mut self, items: &[SeqView<'_>]) -> Result<()> {
        let batch = Batch::new(items, self.config.scale);
        if batch.points() == 0 {
            return Ok(());
        }
        let eval = evaluate_batch(&self.model, &batch, &self.settings, true)?;
        let mut grads = eval.grads.as_ref().expect("gradients requested").clone();
        grads.check_finite()?;
        if self.config.clip > 0.0 {
            grads.clip_global_norm(self.config.clip);
        }
        let lr = self.learning_rate();
        self.adam.update(self.model.params_mut(), &grads, lr)?;

        let p = batch.points() as u64;
        let s = &mut self.state;
        s.points += p;
        s.epoch_sse += eval.sse;
        s.epoch_points += p;
        s.window_sse += eval.sse;
        s.window_loss += eval.data_loss() * p as f64;
        s.window_points += p;
        Ok(())
    }

    /// Train until the points budget is spent. A non-finite loss or
    /// gradient stops the run with [`Error::Aborted`], leaving the trainer
    /// at its last good state.
    pub fn run(&mut self, observer: &mut dyn Observer) -> Result<()> {
        self.run_inner(observer).map_err(|e| match e {
            Error::NonFinite(what) => self.abort(what),
            e => e,
        })
    }

    fn run_inner(&mut self, observer: &mut dyn Observer) -> Result<()> {
        if self.state.last_record.is_none() {
            self.record(observer)?;
        }
        'epochs: while self.state.points < self.config.budget_points {
            let view = self.curriculum.view(self.train);
            if view.iter().all(|v| v.points() == 0) {
                return Err(Error::Config(
                    "training data has no prediction targets".into(),
                ));
            }
            let batches = make_batches(
                &view,
                self.config.batch_mode,
                self.config.seed,
                self.state.epoch,
            );
            while (self.state.cursor as usize) < batches.len() {
                if self.state.points >= self.config.budget_points || observer.should_stop() {
                    break 'epochs;
                }
                let items: Vec<SeqView> = batches[self.state.cursor as usize]
                    .iter()
                    .map(|&i| view[i])
                    .collect();
                self.train_batch(&items)?;
                self.state.cursor += 1;
                self.state.batches += 1;
                if self.state.batches.is_multiple_of(self.config.eval_every) {
                    self.record(observer)?;
                }
            }

            let s = &mut self.state;
            let epoch_rmse = rmse_from(s.epoch_sse, s.epoch_points.max(1) as usize);
            let advanced = self.curriculum.on_epoch_end(epoch_rmse, s.points);
            s.epoch += 1;
            s.cursor = 0;
            s.epoch_sse = 0.0;
            s.epoch_points = 0;
            if advanced {
                log::info!(
                    "curriculum advanced to {} at {} points (epoch rmse {epoch_rmse:.3})",
                    self.curriculum.limit(),
                    s.points
                );
                if s.last_record != Some(s.points) {
                    self.record(observer)?;
                }
            }
            observer.on_epoch_end(self)?;
        }
        if self.state.last_record != Some(self.state.points) {
            self.record(observer)?;
        }
        Ok(())
    }
}

/// Writes `metrics.csv` as records arrive and refreshes `checkpoint.ckpt`
/// every `checkpoint_every` epochs.
pub struct RunDir {
    dir: PathBuf,
    metrics: File,
    checkpoint_every: u64,
}

impl RunDir {
    pub const METRICS: &'static str = "metrics.csv";
    pub const CHECKPOINT: &'static str = "checkpoint.ckpt";
    pub const FINAL: &'static str = "final.ckpt";
    pub const MANIFEST: &'static str = "run.txt";

    /// Start a new metrics file, or when `resume_from` is given keep the rows
    /// up to that checkpoint's last record.
    pub fn open(
        dir: &Path,
        checkpoint_every: u64,
        resume_from: Option<&TrainState>,
    ) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(Self::METRICS);
        let kept = match resume_from {
            Some(state) if path.exists() => {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let rows = parse_metrics_csv(&text)?;
                let cut = state.last_record.unwrap_or(0);
                rows.into_iter()
                    .filter(|r| state.last_record.is_some() && r.points <= cut)
                    .collect()
            }
            _ => Vec::new(),
        };
        std::fs::write(&path, metrics_csv(&kept)).map_err(|e| Error::io(&path, e))?;
        let metrics = OpenOptions::new()
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        debug_assert!(METRICS_HEADER.starts_with("points"));
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            checkpoint_every,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl Observer for RunDir {
    fn on_record(&mut self, record: &MetricsRecord) -> Result<()> {
        let path = self.path(Self::METRICS);
        writeln!(self.metrics, "{}", record.to_csv_row())
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn on_epoch_end(&mut self, trainer: &Trainer<'_>) -> Result<()> {
        if self.checkpoint_every > 0 && trainer.state().epoch.is_multiple_of(self.checkpoint_every)
        {
            trainer.checkpoint().save(&self.path(Self::CHECKPOINT))?;
        }
        Ok(())
    }
}

/// The four ways of training the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferVariant {
    /// Pretrained weights; classification plus prediction loss.
    TransferBoth,
    /// Pretrained weights; classification loss only.
    TransferClassOnly,
    /// Fresh weights; classification plus prediction loss.
    ScratchBoth,
    /// Fresh weights; classification loss only.
    ScratchClassOnly,
}

impl TransferVariant {
    pub const ALL: [TransferVariant; 4] = [
        TransferVariant::TransferBoth,
        TransferVariant::TransferClassOnly,
        TransferVariant::ScratchBoth,
        TransferVariant::ScratchClassOnly,
    ];

    pub fn is_transfer(self) -> bool {
        matches!(
            self,
            TransferVariant::TransferBoth | TransferVariant::TransferClassOnly
        )
    }

    pub fn task(self) -> TaskMode {
        TaskMode::Classification {
            with_prediction: matches!(
                self,
                TransferVariant::TransferBoth | TransferVariant::ScratchBoth
            ),
        }
    }
}

impl fmt::Display for TransferVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferVariant::TransferBoth => "transfer-both",
            TransferVariant::TransferClassOnly => "transfer-class",
            TransferVariant::ScratchBoth => "scratch-both",
            TransferVariant::ScratchClassOnly => "scratch-class",
        })
    }
}

impl FromStr for TransferVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransferVariant::ALL
            .into_iter()
            .find(|v| v.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown transfer variant {s:?}")))
    }
}

/// Set up a classification run. Transfer variants take the architecture and
/// weights from `source`; all variants start with a fresh optimizer and the
/// regular curriculum, and count points from zero.
pub fn transfer_trainer<'d>(
    source: Option<&Checkpoint>,
    variant: TransferVariant,
    base: &TrainConfig,
    train: &'d [StrokeSequence],
    test: &'d [StrokeSequence],
) -> Result<Trainer<'d>> {
    let mut config = base.clone();
    config.task = variant.task();
    config.curriculum = CurriculumKind::Regular;
    if variant.is_transfer() {
        let source = source
            .ok_or_else(|| Error::Config(format!("{variant} needs a pretrained checkpoint")))?;
        let c = &source.config;
        config.num_mixtures = c.num_mixtures;
        config.hidden = c.hidden.clone();
        config.layer = c.layer;
        config.scale = c.scale;
        let model = Model::from_params(config.model_config(), source.params.clone())?;
        Trainer::with_model(config, model, train, test)
    } else {
        Trainer::new(config, train, test)
    }
}

/// [`transfer_trainer`] followed by a full run; returns the metrics.
pub fn transfer_run(
    source: Option<&Checkpoint>,
    variant: TransferVariant,
    base: &TrainConfig,
    train: &[StrokeSequence],
    test: &[StrokeSequence],
    observer: &mut dyn Observer,
) -> Result<Vec<MetricsRecord>> {
    let mut trainer = transfer_trainer(source, variant, base, train, test)?;
    trainer.run(observer)?;
    Ok(trainer.metrics().to_vec())
}
