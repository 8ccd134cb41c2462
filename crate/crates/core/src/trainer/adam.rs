use crate::error::{Error, Result};
use crate::tensor::{GradStore, Matrix, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    step: u64,
    m: ParamStore,
    v: ParamStore,
}

fn zeros(params: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (name, p) in params.iter() {
        out.insert(name, Matrix::zeros(p.rows(), p.cols()))
            .expect("names are unique");
    }
    out
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            step: 0,
            m: zeros(params),
            v: zeros(params),
        }
    }

    /// Restore saved moments; both must match the parameter layout.
    pub fn from_state(
        params: &ParamStore,
        step: u64,
        m: ParamStore,
        v: ParamStore,
    ) -> Result<Self> {
        if !params.same_layout(&m) || !params.same_layout(&v) {
            return Err(Error::Checkpoint(
                "optimizer state does not match the parameters".into(),
            ));
        }
        Ok(Self { step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &ParamStore {
        &self.m
    }

    pub fn second_moment(&self) -> &ParamStore {
        &self.v
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for ((name, p), ((_, m), (_, v))) in params
            .iter_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = grads.get(name)?;
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", name, format!("{:?}", g.shape())));
            }
            let values = p.as_mut_slice();
            for (k, &gk) in g.as_slice().iter().enumerate() {
                let mk = &mut m.as_mut_slice()[k];
                let vk = &mut v.as_mut_slice()[k];
                *mk = BETA1 * *mk + (1.0 - BETA1) * gk;
                *vk = BETA2 * *vk + (1.0 - BETA2) * gk * gk;
                values[k] -= lr * (*mk / c1) / ((*vk / c2).sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}
