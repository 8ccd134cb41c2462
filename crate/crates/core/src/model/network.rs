use rand::Rng;

use super::batch::Batch;
use super::config::{LayerKind, ModelConfig, INPUT_SIZE};
use super::mdn::MdnOutput;
use crate::error::{Error, Result};
use crate::tensor::{
    lstm_cell_backward, lstm_cell_forward, GradStore, LstmCache, LstmGrads, LstmParams, Matrix,
    ParamStore,
};

pub const DEFAULT_INIT_SCALE: f64 = 0.08;
const FORGET_BIAS: f64 = 1.0;

fn w_input(l: usize) -> String {
    format!("layer{l}.w_input")
}
fn w_hidden(l: usize) -> String {
    format!("layer{l}.w_hidden")
}
fn bias(l: usize) -> String {
    format!("layer{l}.bias")
}
const OUT_W: &str = "output.weight";
const OUT_B: &str = "output.bias";

#[derive(Clone, Copy)]
enum LayerRef<'a> {
    Lstm(LstmParams<'a>),
    Dense { w: &'a Matrix, b: &'a Matrix },
}

enum LayerCache {
    Lstm(LstmCache),
    Dense { x: Matrix, h: Matrix },
}

struct StepCache {
    layers: Vec<LayerCache>,
    top: Matrix,
    raw: Matrix,
}

/// Everything the backward pass needs from a forward pass over a [`Batch`].
pub struct Trace {
    steps: Vec<StepCache>,
}

impl Trace {
    pub fn steps(&self) -> usize {
        self.steps.len()
    }

    /// Raw head outputs at step `t`, one row per active batch row.
    pub fn raw(&self, t: usize) -> &Matrix {
        &self.steps[t].raw
    }
}

/// Network weights plus their configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
}

impl Model {
    /// Weights uniform in `[-0.08, 0.08]`, biases zero except the LSTM
    /// forget gate at 1.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        Self::with_init_scale(config, DEFAULT_INIT_SCALE, rng)
    }

    pub fn with_init_scale<R: Rng + ?Sized>(
        config: ModelConfig,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut uniform = |rows: usize, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| {
                if init_scale > 0.0 {
                    rng.random_range(-init_scale..init_scale)
                } else {
                    0.0
                }
            })
        };
        let mut params = ParamStore::new();
        let mut fan_in = INPUT_SIZE;
        for (l, &hidden) in config.hidden_sizes.iter().enumerate() {
            match config.layer_kind {
                LayerKind::Recurrent => {
                    params.insert(w_input(l), uniform(fan_in, 4 * hidden))?;
                    params.insert(w_hidden(l), uniform(hidden, 4 * hidden))?;
                    let mut b = Matrix::zeros(1, 4 * hidden);
                    for j in hidden..2 * hidden {
                        b.set(0, j, FORGET_BIAS);
                    }
                    params.insert(bias(l), b)?;
                }
                LayerKind::Feedforward => {
                    params.insert(w_input(l), uniform(fan_in, hidden))?;
                    params.insert(bias(l), Matrix::zeros(1, hidden))?;
                }
            }
            fan_in = hidden;
        }
        params.insert(OUT_W, uniform(fan_in, config.output_size()))?;
        params.insert(OUT_B, Matrix::zeros(1, config.output_size()))?;
        Ok(Self { config, params })
    }

    /// Adopt existing weights; names and shapes must match `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let template = Self::with_init_scale(
            config.clone(),
            0.0,
            &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0),
        )?;
        if !template.params.same_layout(&params) {
            return Err(Error::shape(
                "model parameters",
                format!("{:?}", template.params.names().collect::<Vec<_>>()),
                format!("{:?}", params.names().collect::<Vec<_>>()),
            ));
        }
        Ok(Self { config, params })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore) -> Self {
        Self { config, params }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Whether a parameter is a weight matrix (subject to regularization)
    /// rather than a bias.
    pub fn is_weight(name: &str) -> bool {
        !name.ends_with("bias")
    }

    fn layers(&self) -> Result<Vec<LayerRef<'_>>> {
        (0..self.config.hidden_sizes.len())
            .map(|l| {
                Ok(match self.config.layer_kind {
                    LayerKind::Recurrent => LayerRef::Lstm(LstmParams {
                        w_x: self.params.get(&w_input(l))?,
                        w_h: self.params.get(&w_hidden(l))?,
                        b: self.params.get(&bias(l))?,
                    }),
                    LayerKind::Feedforward => LayerRef::Dense {
                        w: self.params.get(&w_input(l))?,
                        b: self.params.get(&bias(l))?,
                    },
                })
            })
            .collect()
    }

    fn head(&self, top: &Matrix) -> Result<Matrix> {
        let w = self.params.get(OUT_W)?;
        let b = self.params.get(OUT_B)?;
        let mut raw = crate::tensor::ops::matmul(top, w)?;
        for r in 0..raw.rows() {
            for (v, bb) in raw.row_mut(r).iter_mut().zip(b.as_slice()) {
                *v += bb;
            }
        }
        Ok(raw)
    }

    fn dense_forward(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
        let mut z = crate::tensor::ops::matmul(x, w)?;
        for r in 0..z.rows() {
            for (v, bb) in z.row_mut(r).iter_mut().zip(b.as_slice()) {
                *v = (*v + bb).tanh();
            }
        }
        Ok(z)
    }

    /// Teacher-forced forward pass. Recurrent state starts at zero for every
    /// row and never crosses rows.
    pub fn forward(&self, batch: &Batch) -> Result<Trace> {
        let layers = self.layers()?;
        let n0 = if batch.steps() > 0 {
            batch.rows_at(0)
        } else {
            0
        };
        let mut h_state: Vec<Matrix> = self
            .config
            .hidden_sizes
            .iter()
            .map(|&h| Matrix::zeros(n0, h))
            .collect();
        let mut c_state = h_state.clone();
        let mut steps = Vec::with_capacity(batch.steps());
        for t in 0..batch.steps() {
            let n = batch.rows_at(t);
            let mut input = batch.input(t).clone();
            let mut caches = Vec::with_capacity(layers.len());
            for (l, layer) in layers.iter().enumerate() {
                match *layer {
                    LayerRef::Lstm(p) => {
                        let h_prev = h_state[l].top_rows(n);
                        let c_prev = c_state[l].top_rows(n);
                        let (h, c, cache) = lstm_cell_forward(&input, &h_prev, &c_prev, p)?;
                        caches.push(LayerCache::Lstm(cache));
                        h_state[l] = h.clone();
                        c_state[l] = c;
                        input = h;
                    }
                    LayerRef::Dense { w, b } => {
                        let h = Self::dense_forward(&input, w, b)?;
                        caches.push(LayerCache::Dense {
                            x: input,
                            h: h.clone(),
                        });
                        input = h;
                    }
                }
            }
            let raw = self.head(&input)?;
            steps.push(StepCache {
                layers: caches,
                top: input,
                raw,
            });
        }
        Ok(Trace { steps })
    }

    /// Backpropagation through time from per-step gradients of the raw head
    /// outputs. Gradients of shared weights accumulate over all steps.
    pub fn backward(&self, trace: &Trace, d_raw: &[Matrix]) -> Result<GradStore> {
        if d_raw.len() != trace.steps.len() {
            return Err(Error::shape(
                "backward",
                format!("{} traced steps", trace.steps.len()),
                format!("{} gradients", d_raw.len()),
            ));
        }
        let layers = self.layers()?;
        let w_out = self.params.get(OUT_W)?;
        let mut g_out_w = Matrix::zeros(w_out.rows(), w_out.cols());
        let mut g_out_b = Matrix::zeros(1, w_out.cols());
        let mut g_layers: Vec<(Matrix, Matrix, Matrix)> = layers
            .iter()
            .map(|layer| match layer {
                LayerRef::Lstm(p) => (
                    Matrix::zeros(p.w_x.rows(), p.w_x.cols()),
                    Matrix::zeros(p.w_h.rows(), p.w_h.cols()),
                    Matrix::zeros(1, p.b.cols()),
                ),
                LayerRef::Dense { w, b } => (
                    Matrix::zeros(w.rows(), w.cols()),
                    Matrix::zeros(0, 0),
                    Matrix::zeros(1, b.cols()),
                ),
            })
            .collect();

        let hidden = &self.config.hidden_sizes;
        let mut dh_next: Vec<Matrix> = hidden.iter().map(|&h| Matrix::zeros(0, h)).collect();
        let mut dc_next = dh_next.clone();

        for t in (0..trace.steps.len()).rev() {
            let step = &trace.steps[t];
            let dr = &d_raw[t];
            if dr.shape() != step.raw.shape() {
                return Err(Error::shape(
                    "backward",
                    format!("raw {:?} at step {t}", step.raw.shape()),
                    format!("gradient {:?}", dr.shape()),
                ));
            }
            let n = dr.rows();
            let (mut d_above, dw) = crate::tensor::ops::matmul_backward(&step.top, w_out, dr)?;
            g_out_w.add_top_rows(&dw);
            for (a, b) in g_out_b
                .as_mut_slice()
                .iter_mut()
                .zip(crate::tensor::ops::sum_rows(dr).as_slice())
            {
                *a += b;
            }

            for l in (0..layers.len()).rev() {
                match (&layers[l], &step.layers[l]) {
                    (LayerRef::Lstm(p), LayerCache::Lstm(cache)) => {
                        let mut dh = Matrix::zeros(n, hidden[l]);
                        dh.add_top_rows(&dh_next[l]);
                        dh.add_top_rows(&d_above);
                        let mut dc = Matrix::zeros(n, hidden[l]);
                        dc.add_top_rows(&dc_next[l]);
                        let (gx, gh, gb) = &mut g_layers[l];
                        let mut grads = LstmGrads {
                            w_x: gx,
                            w_h: gh,
                            b: gb,
                        };
                        let (dx, dh_prev, dc_prev) =
                            lstm_cell_backward(cache, &dh, &dc, *p, &mut grads)?;
                        dh_next[l] = dh_prev;
                        dc_next[l] = dc_prev;
                        d_above = dx;
                    }
                    (LayerRef::Dense { w, .. }, LayerCache::Dense { x, h }) => {
                        let mut dz = d_above;
                        for (d, &hv) in dz.as_mut_slice().iter_mut().zip(h.as_slice()) {
                            *d *= 1.0 - hv * hv;
                        }
                        let (dx, dw) = crate::tensor::ops::matmul_backward(x, w, &dz)?;
                        let (gw, _, gb) = &mut g_layers[l];
                        gw.add_top_rows(&dw);
                        for (a, b) in gb
                            .as_mut_slice()
                            .iter_mut()
                            .zip(crate::tensor::ops::sum_rows(&dz).as_slice())
                        {
                            *a += b;
                        }
                        d_above = dx;
                    }
                    _ => unreachable!("cache kind follows layer kind"),
                }
            }
        }

        let mut grads = self.params.zeros_like();
        *grads.get_mut(OUT_W)? = g_out_w;
        *grads.get_mut(OUT_B)? = g_out_b;
        for (l, (gx, gh, gb)) in g_layers.into_iter().enumerate() {
            *grads.get_mut(&w_input(l))? = gx;
            *grads.get_mut(&bias(l))? = gb;
            if self.config.layer_kind == LayerKind::Recurrent {
                *grads.get_mut(&w_hidden(l))? = gh;
            }
        }
        Ok(grads)
    }

    pub fn stepper(&self) -> Result<Stepper<'_>> {
        let layers = self.layers()?;
        Ok(Stepper {
            model: self,
            h: self
                .config
                .hidden_sizes
                .iter()
                .map(|&h| Matrix::zeros(1, h))
                .collect(),
            c: self
                .config
                .hidden_sizes
                .iter()
                .map(|&h| Matrix::zeros(1, h))
                .collect(),
            layers,
            out: MdnOutput::zeros(self.config.num_mixtures),
        })
    }
}

/// Runs one sequence a step at a time, carrying recurrent state.
pub struct Stepper<'m> {
    model: &'m Model,
    layers: Vec<LayerRef<'m>>,
    h: Vec<Matrix>,
    c: Vec<Matrix>,
    out: MdnOutput,
}

impl Stepper<'_> {
    /// Feed one input (already in network units) and return the mixture
    /// parameters for the next step.
    pub fn step(&mut self, input: &[f64; INPUT_SIZE]) -> Result<&MdnOutput> {
        let mut x = Matrix::row_vector(input)?;
        for (l, layer) in self.layers.iter().enumerate() {
            x = match *layer {
                LayerRef::Lstm(p) => {
                    let (h, c, _) = lstm_cell_forward(&x, &self.h[l], &self.c[l], p)?;
                    self.h[l] = h.clone();
                    self.c[l] = c;
                    h
                }
                LayerRef::Dense { w, b } => Model::dense_forward(&x, w, b)?,
            };
        }
        let raw = self.model.head(&x)?;
        self.out.fill_from_raw(raw.row(0));
        Ok(&self.out)
    }
}
