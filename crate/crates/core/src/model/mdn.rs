//! Mixture parameters, bivariate normal densities and sampling.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::CLASS_COUNT;
use crate::error::{Error, Result};
use crate::strokes::PenStep;
use crate::tensor::ops::{sigmoid_scalar, softmax_slice};

/// Keeps `1 - rho^2` representable when the correlation logit saturates.
const RHO_LIMIT: f64 = 1.0 - 1e-12;

/// Squashed network outputs for one timestep.
///
/// Raw layout: `[pi logits | mu_x | mu_y | log sigma_x | log sigma_y |
/// atanh rho | eos logit | eod logit | class logits]`, `M` wide each for the
/// six mixture blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MdnOutput {
    pub pi: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    pub rho: Vec<f64>,
    pub eos_p: f64,
    pub eod_p: f64,
    pub class_p: Vec<f64>,
}

impl MdnOutput {
    pub fn zeros(m: usize) -> Self {
        Self {
            pi: vec![0.0; m],
            mu_x: vec![0.0; m],
            mu_y: vec![0.0; m],
            sigma_x: vec![0.0; m],
            sigma_y: vec![0.0; m],
            rho: vec![0.0; m],
            eos_p: 0.0,
            eod_p: 0.0,
            class_p: vec![0.0; CLASS_COUNT],
        }
    }

    pub fn num_mixtures(&self) -> usize {
        self.pi.len()
    }

    /// Overwrite from a raw row of length `6M + 2 + 10`, `M = self.num_mixtures()`.
    pub(crate) fn fill_from_raw(&mut self, raw: &[f64]) {
        let m = self.pi.len();
        debug_assert_eq!(raw.len(), 6 * m + 2 + CLASS_COUNT);
        softmax_slice(&raw[..m], &mut self.pi);
        self.mu_x.copy_from_slice(&raw[m..2 * m]);
        self.mu_y.copy_from_slice(&raw[2 * m..3 * m]);
        for j in 0..m {
            self.sigma_x[j] = raw[3 * m + j].exp();
            self.sigma_y[j] = raw[4 * m + j].exp();
            self.rho[j] = raw[5 * m + j].tanh().clamp(-RHO_LIMIT, RHO_LIMIT);
        }
        self.eos_p = sigmoid_scalar(raw[6 * m]);
        self.eod_p = sigmoid_scalar(raw[6 * m + 1]);
        softmax_slice(&raw[6 * m + 2..], &mut self.class_p);
    }

    /// Log of component `j`'s density at `(x, y)`, with the standardized
    /// residuals `(zx, zy)` it was computed from.
    pub(crate) fn log_component(&self, j: usize, x: f64, y: f64) -> (f64, f64, f64) {
        let (sx, sy, r) = (self.sigma_x[j], self.sigma_y[j], self.rho[j]);
        let zx = (x - self.mu_x[j]) / sx;
        let zy = (y - self.mu_y[j]) / sy;
        let one_m = 1.0 - r * r;
        let z = zx * zx + zy * zy - 2.0 * r * zx * zy;
        let log_n = -(2.0 * PI * sx * sy).ln() - 0.5 * one_m.ln() - z / (2.0 * one_m);
        (log_n, zx, zy)
    }
}

pub fn mdn_transform(raw: &[f64], num_mixtures: usize) -> Result<MdnOutput> {
    let expected = 6 * num_mixtures + 2 + CLASS_COUNT;
    if num_mixtures == 0 || raw.len() != expected {
        return Err(Error::shape(
            "mdn_transform",
            format!("raw length {}", raw.len()),
            format!("expected {expected}"),
        ));
    }
    let mut out = MdnOutput::zeros(num_mixtures);
    out.fill_from_raw(raw);
    Ok(out)
}

pub fn bivariate_density(
    x: f64,
    y: f64,
    mu_x: f64,
    mu_y: f64,
    sigma_x: f64,
    sigma_y: f64,
    rho: f64,
) -> Result<f64> {
    if !(sigma_x > 0.0 && sigma_y > 0.0) || rho.is_nan() || rho.abs() >= 1.0 {
        return Err(Error::Invalid(format!(
            "bivariate normal needs sigma > 0 and |rho| < 1, got ({sigma_x}, {sigma_y}, {rho})"
        )));
    }
    let zx = (x - mu_x) / sigma_x;
    let zy = (y - mu_y) / sigma_y;
    let one_m = 1.0 - rho * rho;
    let z = zx * zx + zy * zy - 2.0 * rho * zx * zy;
    Ok((-z / (2.0 * one_m)).exp() / (2.0 * PI * sigma_x * sigma_y * one_m.sqrt()))
}

/// Mixture mean of the offset, in pixels.
pub fn point_estimate(out: &MdnOutput, scale: f64) -> (f64, f64) {
    let mut x = 0.0;
    let mut y = 0.0;
    for j in 0..out.pi.len() {
        x += out.pi[j] * out.mu_x[j];
        y += out.pi[j] * out.mu_y[j];
    }
    (x * scale, y * scale)
}

/// Continuous offset draw in network units: pick a component by weight,
/// then sample its correlated Gaussian. `temperature` sharpens (< 1) or
/// flattens (> 1) the weights and scales the variances.
pub fn sample_offset<R: Rng + ?Sized>(
    out: &MdnOutput,
    temperature: f64,
    rng: &mut R,
) -> (f64, f64) {
    let m = out.pi.len();
    let weights: Vec<f64> = if temperature == 1.0 {
        out.pi.clone()
    } else {
        let logits: Vec<f64> = out
            .pi
            .iter()
            .map(|p| p.max(1e-300).ln() / temperature)
            .collect();
        let mut w = vec![0.0; m];
        softmax_slice(&logits, &mut w);
        w
    };
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut j = m - 1;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            j = k;
            break;
        }
    }
    let spread = temperature.sqrt();
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let r = out.rho[j];
    let x = out.mu_x[j] + out.sigma_x[j] * spread * z1;
    let y = out.mu_y[j] + out.sigma_y[j] * spread * (r * z1 + (1.0 - r * r).sqrt() * z2);
    (x, y)
}

/// Draw one pen step in pixel units, rounding offsets half away from zero.
/// A sampled end-of-digit also ends the stroke.
pub fn sample_step<R: Rng + ?Sized>(
    out: &MdnOutput,
    scale: f64,
    temperature: f64,
    rng: &mut R,
) -> PenStep {
    let (x, y) = sample_offset(out, temperature, rng);
    let eod = rng.random::<f64>() < out.eod_p;
    let eos = rng.random::<f64>() < out.eos_p || eod;
    if eos {
        PenStep {
            dx: 0,
            dy: 0,
            eos,
            eod,
        }
    } else {
        PenStep::moveto((x * scale).round() as i32, (y * scale).round() as i32)
    }
}
