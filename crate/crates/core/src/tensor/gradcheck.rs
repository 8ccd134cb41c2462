//! Central-difference verification of analytic gradients.

use rand::Rng;

use super::params::{GradStore, ParamStore};
use crate::error::Result;

/// Gradients below this are compared absolutely; central differences
/// cannot resolve them relative to themselves.
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coordinate {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Max of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst: Option<(Coordinate, f64, f64)>,
}

/// Compare `analytic` with central differences of `objective` on at least
/// `sample` coordinates drawn uniformly without replacement (all of them when
/// the model is smaller than `sample`).
pub fn check_gradients<R: Rng>(
    params: &ParamStore,
    analytic: &GradStore,
    objective: impl Fn(&ParamStore) -> Result<f64>,
    eps: f64,
    sample: usize,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let layout: Vec<(String, usize)> = params
        .iter()
        .map(|(name, m)| (name.to_string(), m.len()))
        .collect();
    let total: usize = layout.iter().map(|(_, n)| n).sum();
    let mut flat: Vec<usize> = if total <= sample {
        (0..total).collect()
    } else {
        rand::seq::index::sample(rng, total, sample).into_vec()
    };
    flat.sort_unstable();

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    let mut offset = 0;
    let mut cursor = 0;
    for (name, len) in &layout {
        while cursor < flat.len() && flat[cursor] < offset + len {
            let index = flat[cursor] - offset;
            cursor += 1;
            let orig = params.get(name)?.as_slice()[index];
            probe.values_mut(name)?[index] = orig + eps;
            let plus = objective(&probe)?;
            probe.values_mut(name)?[index] = orig - eps;
            let minus = objective(&probe)?;
            probe.values_mut(name)?[index] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic.get(name)?.as_slice()[index];
            let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(DENOM_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((
                    Coordinate {
                        name: name.clone(),
                        index,
                    },
                    exact,
                    numeric,
                ));
            }
        }
        offset += len;
    }
    Ok(report)
}
