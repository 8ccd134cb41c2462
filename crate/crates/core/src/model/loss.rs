//! Prediction and classification losses with their gradients with respect
//! to the raw head outputs.

use rand::Rng;

use super::batch::{Batch, StepTarget};
use super::config::{TaskMode, CLASS_COUNT};
use super::mdn::{point_estimate, MdnOutput};
use super::network::Model;
use crate::error::{Error, Result};
use crate::tensor::ops::softmax_backward_slice;
use crate::tensor::{check_gradients, GradCheckReport, GradStore, Matrix, ParamStore};

/// Smallest probability allowed inside a logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub task: TaskMode,
    /// Weight of the max-|w| penalty.
    pub lambda: f64,
    /// Weight of the classification cross entropy.
    pub gamma: f64,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            task: TaskMode::Prediction,
            lambda: 0.25,
            gamma: 10.0,
        }
    }
}

/// Summed prediction loss, split by term.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PredictionLoss {
    pub mixture: f64,
    pub eos: f64,
    pub eod: f64,
    pub regularizer: f64,
    /// Log arguments that fell below [`LOG_FLOOR`].
    pub floored: usize,
}

impl PredictionLoss {
    pub fn total(&self) -> f64 {
        self.mixture + self.eos + self.eod + self.regularizer
    }

    /// Everything except the regularizer.
    pub fn data_term(&self) -> f64 {
        self.mixture + self.eos + self.eod
    }

    fn accumulate(&mut self, other: &PredictionLoss) {
        self.mixture += other.mixture;
        self.eos += other.eos;
        self.eod += other.eod;
        self.floored += other.floored;
    }
}

/// The largest-magnitude weight. Biases are excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxWeight {
    pub name: String,
    pub index: usize,
    pub value: f64,
}

/// First maximum in (name, index) order, so ties resolve deterministically.
pub fn max_abs_weight(params: &ParamStore) -> Option<MaxWeight> {
    let mut best: Option<MaxWeight> = None;
    for (name, m) in params.iter().filter(|(n, _)| Model::is_weight(n)) {
        for (index, &value) in m.as_slice().iter().enumerate() {
            if best.as_ref().is_none_or(|b| value.abs() > b.value.abs()) {
                best = Some(MaxWeight {
                    name: name.to_string(),
                    index,
                    value,
                });
            }
        }
    }
    best
}

fn floored_neg_log(p: f64) -> (f64, bool) {
    if p < LOG_FLOOR {
        (-LOG_FLOOR.ln(), true)
    } else {
        (-p.ln(), false)
    }
}

fn bernoulli_term(p: f64, y: bool) -> (f64, bool) {
    floored_neg_log(if y { p } else { 1.0 - p })
}

/// Loss of one step. When `d_raw` is given, `weight * dL/draw` is added to
/// it; floored terms contribute no gradient.
pub(crate) fn step_prediction(
    out: &MdnOutput,
    target: &StepTarget,
    d_raw: Option<(&mut [f64], f64)>,
) -> PredictionLoss {
    let m = out.num_mixtures();
    let mut log_terms = Vec::with_capacity(m);
    let mut z = Vec::with_capacity(m);
    for j in 0..m {
        let (log_n, zx, zy) = out.log_component(j, target.dx, target.dy);
        log_terms.push(out.pi[j].ln() + log_n);
        z.push((zx, zy));
    }
    let shift = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = log_terms.iter().map(|l| (l - shift).exp()).sum();
    let log_mix = shift + sum.ln();

    let mut loss = PredictionLoss::default();
    let mix_floored = log_mix.is_nan() || log_mix < LOG_FLOOR.ln();
    loss.mixture = if mix_floored {
        -LOG_FLOOR.ln()
    } else {
        -log_mix
    };
    let (eos, eos_floored) = bernoulli_term(out.eos_p, target.eos);
    let (eod, eod_floored) = bernoulli_term(out.eod_p, target.eod);
    loss.eos = eos;
    loss.eod = eod;
    loss.floored = usize::from(mix_floored) + usize::from(eos_floored) + usize::from(eod_floored);

    if let Some((d, w)) = d_raw {
        if !mix_floored {
            for j in 0..m {
                let g = (log_terms[j] - log_mix).exp();
                let (zx, zy) = z[j];
                let (sx, sy, r) = (out.sigma_x[j], out.sigma_y[j], out.rho[j]);
                let c = 1.0 / (1.0 - r * r);
                let zz = zx * zx + zy * zy - 2.0 * r * zx * zy;
                d[j] += w * (out.pi[j] - g);
                d[m + j] -= w * g * c / sx * (zx - r * zy);
                d[2 * m + j] -= w * g * c / sy * (zy - r * zx);
                d[3 * m + j] -= w * g * (c * zx * (zx - r * zy) - 1.0);
                d[4 * m + j] -= w * g * (c * zy * (zy - r * zx) - 1.0);
                d[5 * m + j] -= w * g * (zx * zy + r * (1.0 - c * zz));
            }
        }
        if !eos_floored {
            d[6 * m] += w * (out.eos_p - f64::from(u8::from(target.eos)));
        }
        if !eod_floored {
            d[6 * m + 1] += w * (out.eod_p - f64::from(u8::from(target.eod)));
        }
    }
    loss
}

/// One step's cross entropy, `gamma` included, plus the number of clamped
/// probabilities. Adds `weight * dL/dlogits` to `d_logits` when given.
pub(crate) fn step_classification(
    class_p: &[f64],
    label: u8,
    gamma: f64,
    d_logits: Option<(&mut [f64], f64)>,
) -> (f64, usize) {
    let k = class_p.len() as f64;
    let mut sum = 0.0;
    let mut clamped = 0;
    let mut d_p = [0.0; CLASS_COUNT];
    for (n, &p) in class_p.iter().enumerate() {
        let y = n == usize::from(label);
        let q = p.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
        let hit = q != p;
        clamped += usize::from(hit);
        if y {
            sum += q.ln();
            if !hit {
                d_p[n] = -gamma / k / p;
            }
        } else {
            sum += (1.0 - q).ln();
            if !hit {
                d_p[n] = gamma / k / (1.0 - p);
            }
        }
    }
    if let Some((d, w)) = d_logits {
        let mut dz = [0.0; CLASS_COUNT];
        softmax_backward_slice(class_p, &d_p, &mut dz);
        for (a, b) in d.iter_mut().zip(dz) {
            *a += w * b;
        }
    }
    (-gamma * sum / k, clamped)
}

/// Summed prediction loss over aligned outputs and targets, plus
/// `lambda * max|w|`. No per-point normalization.
pub fn prediction_loss(
    outputs: &[MdnOutput],
    targets: &[StepTarget],
    weights: &ParamStore,
    lambda: f64,
) -> Result<PredictionLoss> {
    if outputs.is_empty() || outputs.len() != targets.len() {
        return Err(Error::shape(
            "prediction_loss",
            format!("{} outputs", outputs.len()),
            format!("{} targets", targets.len()),
        ));
    }
    let mut loss = PredictionLoss::default();
    for (o, t) in outputs.iter().zip(targets) {
        loss.accumulate(&step_prediction(o, t, None));
    }
    loss.regularizer = lambda * max_abs_weight(weights).map_or(0.0, |w| w.value.abs());
    Ok(loss)
}

/// `gamma` times the mean over steps of the per-class binary cross entropy.
pub fn classification_loss(class_p: &[Vec<f64>], label: u8, gamma: f64) -> Result<f64> {
    if class_p.is_empty() || usize::from(label) >= CLASS_COUNT {
        return Err(Error::Invalid(format!(
            "classification loss needs steps and a digit label, got {} steps, label {label}",
            class_p.len()
        )));
    }
    let mut total = 0.0;
    for p in class_p {
        if p.len() != CLASS_COUNT {
            return Err(Error::shape(
                "classification_loss",
                format!("{} probabilities", p.len()),
                format!("{CLASS_COUNT} classes"),
            ));
        }
        total += step_classification(p, label, gamma, None).0;
    }
    Ok(total / class_p.len() as f64)
}

pub fn total_loss(task: TaskMode, classification: f64, prediction: f64) -> f64 {
    match task {
        TaskMode::Prediction => prediction,
        TaskMode::Classification { .. } => classification + task.beta() * prediction,
    }
}

/// Loss, metrics and optionally gradients for one batch.
#[derive(Debug, Clone)]
pub struct BatchEval {
    /// Training objective: summed step losses over points, plus the penalty.
    pub loss: f64,
    /// Summed prediction terms, no penalty.
    pub prediction: PredictionLoss,
    /// Summed per-step classification terms, `gamma` included.
    pub classification: f64,
    /// `lambda * max|w|`.
    pub regularizer: f64,
    /// Squared pixel error of the point estimates, both coordinates.
    pub sse: f64,
    pub points: usize,
    /// Sequences answered correctly at their last input step.
    pub correct: usize,
    pub sequences: usize,
    pub grads: Option<GradStore>,
}

impl BatchEval {
    /// Objective without the penalty, per point.
    pub fn data_loss(&self) -> f64 {
        self.loss - self.regularizer
    }
}

/// Index of the largest probability; the lowest index wins ties.
pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate_batch(
    model: &Model,
    batch: &Batch,
    settings: &LossSettings,
    with_grads: bool,
) -> Result<BatchEval> {
    let m = model.config().num_mixtures;
    let scale = model.config().scale;
    let trace = model.forward(batch)?;
    let points = batch.points().max(1) as f64;
    let weight = 1.0 / points;
    let beta = settings.task.beta();
    let classify = settings.task.classifies();

    let mut prediction = PredictionLoss::default();
    let mut classification = 0.0;
    let mut class_floored = 0;
    let mut sse = 0.0;
    let mut correct = 0;
    let mut out = MdnOutput::zeros(m);
    let mut d_raw = Vec::with_capacity(if with_grads { batch.steps() } else { 0 });

    for t in 0..batch.steps() {
        let raw = trace.raw(t);
        let mut d = with_grads.then(|| Matrix::zeros(raw.rows(), raw.cols()));
        for (r, target) in batch.targets(t).iter().enumerate() {
            out.fill_from_raw(raw.row(r));
            let d_row = d.as_mut().map(|d| d.row_mut(r));
            let (d_pred, d_class) = match d_row {
                Some(row) => {
                    let (a, b) = row.split_at_mut(6 * m + 2);
                    (Some(a), Some(b))
                }
                None => (None, None),
            };
            let step = step_prediction(
                &out,
                target,
                d_pred.filter(|_| beta > 0.0).map(|a| (a, weight * beta)),
            );
            prediction.accumulate(&step);
            if classify {
                let (l, c) = step_classification(
                    &out.class_p,
                    target.class,
                    settings.gamma,
                    d_class.map(|b| (b, weight)),
                );
                classification += l;
                class_floored += c;
            }
            let (px, py) = point_estimate(&out, scale);
            sse += (px - target.dx * scale).powi(2) + (py - target.dy * scale).powi(2);
            if batch.length(r) == t + 1 && argmax(&out.class_p) == usize::from(target.class) {
                correct += 1;
            }
        }
        if let Some(d) = d {
            d_raw.push(d);
        }
    }

    let max_w = max_abs_weight(model.params());
    let regularizer = settings.lambda * max_w.as_ref().map_or(0.0, |w| w.value.abs());
    let data = total_loss(settings.task, classification, prediction.data_term());
    let loss = data / points + regularizer;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {loss}")));
    }
    prediction.floored += class_floored;
    prediction.regularizer = regularizer;

    let grads = if with_grads {
        let mut g = model.backward(&trace, &d_raw)?;
        if let Some(w) = max_w {
            if w.value != 0.0 {
                g.get_mut(&w.name)?.as_mut_slice()[w.index] += settings.lambda * w.value.signum();
            }
        }
        Some(g)
    } else {
        None
    };

    Ok(BatchEval {
        loss,
        prediction,
        classification,
        regularizer,
        sse,
        points: batch.points(),
        correct,
        sequences: batch.rows(),
        grads,
    })
}

/// Finite-difference check of [`evaluate_batch`] gradients. Use `lambda = 0`
/// unless the max-|w| coordinate is well separated, since the penalty is
/// not differentiable at ties.
pub fn gradient_check<R: Rng>(
    model: &Model,
    batch: &Batch,
    settings: &LossSettings,
    eps: f64,
    sample: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let eval = evaluate_batch(model, batch, settings, true)?;
    let grads = eval.grads.expect("requested gradients");
    let config = model.config().clone();
    check_gradients(
        model.params(),
        &grads,
        |p| {
            let probe = Model::from_parts(config.clone(), p.clone());
            Ok(evaluate_batch(&probe, batch, settings, false)?.loss)
        },
        eps,
        sample,
        rng,
    )
}
