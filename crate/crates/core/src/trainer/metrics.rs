use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{total_loss, Batch, BatchEval, LossSettings, MdnOutput, Model};
use crate::strokes::{SeqView, StrokeSequence};

pub const METRICS_HEADER: &str =
    "points,epoch,train_rmse,test_rmse,train_loss,test_loss,accuracy,limit,seconds";

/// Sequences per evaluation chunk. Chunks are reduced in order, so results
/// do not depend on the thread count.
const EVAL_CHUNK: usize = 64;

/// One row of the metrics stream. RMSEs are in pixels; losses are per point
/// and exclude the weight penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub points: u64,
    pub epoch: u64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub accuracy: f64,
    /// Curriculum limit; `usize::MAX` when unbounded.
    pub limit: usize,
    pub seconds: f64,
}

fn format_limit(limit: usize) -> String {
    if limit == usize::MAX {
        "inf".to_string()
    } else {
        limit.to_string()
    }
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.points,
            self.epoch,
            self.train_rmse,
            self.test_rmse,
            self.train_loss,
            self.test_loss,
            self.accuracy,
            format_limit(self.limit),
            self.seconds
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Invalid(format!(
                "metrics row needs 9 fields: {line:?}"
            )));
        }
        let bad = |i: usize| Error::Invalid(format!("metrics field {i} in {line:?}"));
        let f = |i: usize| fields[i].parse::<f64>().map_err(|_| bad(i));
        Ok(Self {
            points: fields[0].parse().map_err(|_| bad(0))?,
            epoch: fields[1].parse().map_err(|_| bad(1))?,
            train_rmse: f(2)?,
            test_rmse: f(3)?,
            train_loss: f(4)?,
            test_loss: f(5)?,
            accuracy: f(6)?,
            limit: if fields[7] == "inf" {
                usize::MAX
            } else {
                fields[7].parse().map_err(|_| bad(7))?
            },
            seconds: f(8)?,
        })
    }
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(METRICS_HEADER) {
        return Err(Error::Invalid(
            "metrics file lacks the expected header".into(),
        ));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(MetricsRecord::parse_row)
        .collect()
}

pub fn views(data: &[StrokeSequence]) -> Vec<SeqView<'_>> {
    data.iter().map(StrokeSequence::view).collect()
}

/// Teacher-forced metrics over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub rmse: f64,
    /// Task loss per point, without the weight penalty.
    pub loss: f64,
    /// Share of sequences whose class at the last input step is right.
    pub accuracy: f64,
    pub points: usize,
    pub sequences: usize,
    /// Sequences too short to provide a target.
    pub skipped: usize,
    pub floored: usize,
}

pub(crate) fn rmse_from(sse: f64, points: usize) -> f64 {
    (sse / (2.0 * points as f64)).sqrt()
}

fn eval_chunks(
    model: &Model,
    data: &[SeqView<'_>],
    settings: &LossSettings,
) -> Result<Vec<BatchEval>> {
    let scale = model.config().scale;
    data.par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            crate::model::evaluate_batch(model, &Batch::new(chunk, scale), settings, false)
        })
        .collect()
}

pub fn evaluate(
    model: &Model,
    data: &[SeqView<'_>],
    settings: &LossSettings,
) -> Result<Evaluation> {
    let no_penalty = LossSettings {
        lambda: 0.0,
        ..*settings
    };
    let parts = eval_chunks(model, data, &no_penalty)?;
    let mut sse = 0.0;
    let mut loss = 0.0;
    let mut points = 0;
    let mut correct = 0;
    let mut sequences = 0;
    let mut floored = 0;
    for p in &parts {
        sse += p.sse;
        loss += total_loss(settings.task, p.classification, p.prediction.data_term());
        points += p.points;
        correct += p.correct;
        sequences += p.sequences;
        floored += p.prediction.floored;
    }
    if points == 0 {
        return Err(Error::Invalid(
            "evaluation data has no prediction targets".into(),
        ));
    }
    Ok(Evaluation {
        rmse: rmse_from(sse, points),
        loss: loss / points as f64,
        accuracy: correct as f64 / sequences as f64,
        points,
        sequences,
        skipped: data.len() - sequences,
        floored,
    })
}

/// `sqrt(sum of squared offset errors / (2P))` in pixels, using the mixture
/// mean as the prediction.
pub fn evaluate_rmse(model: &Model, data: &[SeqView<'_>]) -> Result<f64> {
    Ok(evaluate(model, data, &LossSettings::default())?.rmse)
}

/// Share of sequences classified correctly after their one-but-last step.
pub fn evaluate_accuracy(model: &Model, data: &[SeqView<'_>]) -> Result<f64> {
    Ok(evaluate(model, data, &LossSettings::default())?.accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionLoss {
    /// 1 for the first predicted step (the target after the first input).
    pub position: usize,
    pub mean: f64,
    pub count: usize,
}

/// Mean prediction loss (mixture, eos and eod terms) by target position,
/// over the sequences that reach it. Positions without data have mean NaN.
pub fn loss_by_position(
    model: &Model,
    data: &[SeqView<'_>],
    max_position: usize,
) -> Result<Vec<PositionLoss>> {
    let m = model.config().num_mixtures;
    let scale = model.config().scale;
    let partial: Vec<(Vec<f64>, Vec<usize>)> = data
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let batch = Batch::new(chunk, scale);
            let trace = model.forward(&batch)?;
            let mut sums = vec![0.0; max_position];
            let mut counts = vec![0; max_position];
            let mut out = MdnOutput::zeros(m);
            for t in 0..batch.steps().min(max_position) {
                for (r, target) in batch.targets(t).iter().enumerate() {
                    out.fill_from_raw(trace.raw(t).row(r));
                    sums[t] += crate::model::loss::step_prediction(&out, target, None).data_term();
                    counts[t] += 1;
                }
            }
            Ok((sums, counts))
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; max_position];
    let mut counts = vec![0; max_position];
    for (s, c) in partial {
        for i in 0..max_position {
            sums[i] += s[i];
            counts[i] += c[i];
        }
    }
    Ok((0..max_position)
        .map(|i| PositionLoss {
            position: i + 1,
            mean: if counts[i] == 0 {
                f64::NAN
            } else {
                sums[i] / counts[i] as f64
            },
            count: counts[i],
        })
        .collect())
}
