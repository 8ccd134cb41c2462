use std::collections::BTreeMap;

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Named parameters, iterated in lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Invalid(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))
    }

    /// Mutable access to values; the shape must not be changed through it.
    pub fn values_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        self.params
            .get_mut(name)
            .map(|m| m.as_mut_slice())
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))
    }

    /// Replace a parameter's values with a matrix of identical shape.
    pub fn assign(&mut self, name: &str, value: Matrix) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::shape(
                "assign",
                format!("{name} {:?}", slot.shape()),
                format!("{:?}", value.shape()),
            ));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|m| m.len()).sum()
    }

    pub fn zeros_like(&self) -> GradStore {
        GradStore {
            grads: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape())
    }
}

/// Gradients aligned name-for-name and shape-for-shape with a [`ParamStore`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradStore {
    grads: BTreeMap<String, Matrix>,
}

impl GradStore {
    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.grads
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("no gradient for {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.grads
            .get_mut(name)
            .ok_or_else(|| Error::Invalid(format!("no gradient for {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.grads.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .map(|g| g.sum_squares())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global L2 norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            self.grads.values_mut().for_each(|g| g.scale(k));
        }
        norm
    }

    pub fn add_assign(&mut self, other: &GradStore) -> Result<()> {
        for (name, g) in self.grads.iter_mut() {
            let o = other.get(name)?;
            if o.shape() != g.shape() {
                return Err(Error::shape("add_assign", name, format!("{:?}", o.shape())));
            }
            for (a, b) in g.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, g) in &self.grads {
            g.check_finite(&format!("gradient of {name}"))?;
        }
        Ok(())
    }
}
