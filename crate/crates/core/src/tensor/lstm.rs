//! LSTM cell without peepholes. Gate pre-activations are laid out as four
//! column blocks `[input | forget | output | candidate]`, each `hidden` wide:
//!
//! ```text
//! z = x W_x + h_prev W_h + b
//! i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
//! c = f * c_prev + i * g
//! h = o * tanh(c)
//! ```
//!
//! Rows are independent batch items; a single vector is a one-row matrix.

use super::matrix::{gemm, Matrix};
use super::ops::sigmoid_scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LstmParams<'a> {
    pub w_x: &'a Matrix,
    pub w_h: &'a Matrix,
    pub b: &'a Matrix,
}

impl LstmParams<'_> {
    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if self.w_h.cols() != 4 * h || self.w_x.cols() != 4 * h || self.b.shape() != (1, 4 * h) {
            return Err(Error::shape(
                "lstm params",
                format!("w_x {:?} w_h {:?}", self.w_x.shape(), self.w_h.shape()),
                format!("b {:?}", self.b.shape()),
            ));
        }
        Ok(())
    }
}

pub struct LstmGrads<'a> {
    pub w_x: &'a mut Matrix,
    pub w_h: &'a mut Matrix,
    pub b: &'a mut Matrix,
}

/// Activations saved by [`lstm_cell_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    /// Activated gates `[i | f | o | g]`.
    gates: Matrix,
    tanh_c: Matrix,
}

impl LstmCache {
    pub fn rows(&self) -> usize {
        self.x.rows()
    }
}

pub fn lstm_cell_forward(
    x: &Matrix,
    h_prev: &Matrix,
    c_prev: &Matrix,
    p: LstmParams<'_>,
) -> Result<(Matrix, Matrix, LstmCache)> {
    p.validate()?;
    let n = x.rows();
    let hidden = p.hidden();
    if x.cols() != p.w_x.rows() || h_prev.shape() != (n, hidden) || c_prev.shape() != (n, hidden) {
        return Err(Error::shape(
            "lstm_cell_forward",
            format!(
                "x {:?} h {:?} c {:?}",
                x.shape(),
                h_prev.shape(),
                c_prev.shape()
            ),
            format!("w_x {:?} hidden {hidden}", p.w_x.shape()),
        ));
    }

    let mut gates = Matrix::zeros(n, 4 * hidden);
    gemm(1.0, x, false, p.w_x, false, 0.0, &mut gates);
    gemm(1.0, h_prev, false, p.w_h, false, 1.0, &mut gates);

    let mut c = Matrix::zeros(n, hidden);
    let mut tanh_c = Matrix::zeros(n, hidden);
    let mut h = Matrix::zeros(n, hidden);
    let bias = p.b.as_slice();
    for r in 0..n {
        let z = gates.row_mut(r);
        for (v, b) in z.iter_mut().zip(bias) {
            *v += b;
        }
        let (ifo, g) = z.split_at_mut(3 * hidden);
        ifo.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
        g.iter_mut().for_each(|v| *v = v.tanh());

        let z = gates.row(r);
        let cp = c_prev.row(r);
        let (c_row, tc_row, h_row) = (c.row_mut(r), tanh_c.row_mut(r), h.row_mut(r));
        for j in 0..hidden {
            let (i, f, o, g) = (z[j], z[hidden + j], z[2 * hidden + j], z[3 * hidden + j]);
            c_row[j] = f * cp[j] + i * g;
            tc_row[j] = c_row[j].tanh();
            h_row[j] = o * tc_row[j];
        }
    }

    let cache = LstmCache {
        x: x.clone(),
        h_prev: h_prev.clone(),
        c_prev: c_prev.clone(),
        gates,
        tanh_c,
    };
    Ok((h, c, cache))
}

/// Accumulates parameter gradients into `grads` and returns
/// `(dx, dh_prev, dc_prev)`.
pub fn lstm_cell_backward(
    cache: &LstmCache,
    dh: &Matrix,
    dc: &Matrix,
    p: LstmParams<'_>,
    grads: &mut LstmGrads<'_>,
) -> Result<(Matrix, Matrix, Matrix)> {
    let n = cache.rows();
    let hidden = p.hidden();
    if dh.shape() != (n, hidden) || dc.shape() != (n, hidden) || cache.gates.cols() != 4 * hidden {
        return Err(Error::shape(
            "lstm_cell_backward",
            format!("cache {n}x{}", cache.gates.cols() / 4),
            format!("dh {:?} dc {:?}", dh.shape(), dc.shape()),
        ));
    }

    let mut dz = Matrix::zeros(n, 4 * hidden);
    let mut dc_prev = Matrix::zeros(n, hidden);
    for r in 0..n {
        let z = cache.gates.row(r);
        let tc = cache.tanh_c.row(r);
        let cp = cache.c_prev.row(r);
        let (dh_r, dc_r) = (dh.row(r), dc.row(r));
        let dcp = dc_prev.row_mut(r);
        let dzr = dz.row_mut(r);
        for j in 0..hidden {
            let (i, f, o, g) = (z[j], z[hidden + j], z[2 * hidden + j], z[3 * hidden + j]);
            let d_o = dh_r[j] * tc[j];
            let d_c = dc_r[j] + dh_r[j] * o * (1.0 - tc[j] * tc[j]);
            let d_i = d_c * g;
            let d_f = d_c * cp[j];
            let d_g = d_c * i;
            dcp[j] = d_c * f;
            dzr[j] = d_i * i * (1.0 - i);
            dzr[hidden + j] = d_f * f * (1.0 - f);
            dzr[2 * hidden + j] = d_o * o * (1.0 - o);
            dzr[3 * hidden + j] = d_g * (1.0 - g * g);
        }
    }

    gemm(1.0, &cache.x, true, &dz, false, 1.0, grads.w_x);
    gemm(1.0, &cache.h_prev, true, &dz, false, 1.0, grads.w_h);
    let db = grads.b.as_mut_slice();
    for r in 0..n {
        for (a, b) in db.iter_mut().zip(dz.row(r)) {
            *a += b;
        }
    }

    let mut dx = Matrix::zeros(n, cache.x.cols());
    gemm(1.0, &dz, false, p.w_x, true, 0.0, &mut dx);
    let mut dh_prev = Matrix::zeros(n, hidden);
    gemm(1.0, &dz, false, p.w_h, true, 0.0, &mut dh_prev);
    Ok((dx, dh_prev, dc_prev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Cell {
        w_x: Matrix,
        w_h: Matrix,
        b: Matrix,
    }

    impl Cell {
        fn random(input: usize, hidden: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
            let mut m = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale));
            Cell {
                w_x: m(input, 4 * hidden),
                w_h: m(hidden, 4 * hidden),
                b: m(1, 4 * hidden),
            }
        }

        fn params(&self) -> LstmParams<'_> {
            LstmParams {
                w_x: &self.w_x,
                w_h: &self.w_h,
                b: &self.b,
            }
        }

        fn zero_grads(&self) -> (Matrix, Matrix, Matrix) {
            (
                Matrix::zeros(self.w_x.rows(), self.w_x.cols()),
                Matrix::zeros(self.w_h.rows(), self.w_h.cols()),
                Matrix::zeros(1, self.b.cols()),
            )
        }
    }

    fn rand_m(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let cell = Cell {
            w_x: Matrix::zeros(4, 16),
            w_h: Matrix::zeros(4, 16),
            b: Matrix::zeros(1, 16),
        };
        let x = Matrix::row_vector(&[0.3, -2.0, 1.0, 1.0]).unwrap();
        let (h, c, _) = lstm_cell_forward(
            &x,
            &Matrix::zeros(1, 4),
            &Matrix::zeros(1, 4),
            cell.params(),
        )
        .unwrap();
        assert!(h.as_slice().iter().all(|&v| v == 0.0));
        assert!(c.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let hidden = 3;
        let mut b = Matrix::zeros(1, 4 * hidden);
        for j in 0..hidden {
            b.set(0, hidden + j, 50.0); // forget gate
            b.set(0, j, -50.0); // input gate closed
        }
        let cell = Cell {
            w_x: Matrix::zeros(2, 4 * hidden),
            w_h: Matrix::zeros(hidden, 4 * hidden),
            b,
        };
        let c_prev = Matrix::row_vector(&[0.5, -1.25, 2.0]).unwrap();
        let x = Matrix::row_vector(&[1.0, -1.0]).unwrap();
        let (_, c, _) =
            lstm_cell_forward(&x, &Matrix::zeros(1, hidden), &c_prev, cell.params()).unwrap();
        for (a, b) in c.as_slice().iter().zip(c_prev.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cell = Cell::random(3, 4, 0.1, &mut rng);
        let bad_x = Matrix::zeros(1, 5);
        assert!(lstm_cell_forward(
            &bad_x,
            &Matrix::zeros(1, 4),
            &Matrix::zeros(1, 4),
            cell.params()
        )
        .is_err());
        let x = Matrix::zeros(2, 3);
        let (_, _, cache) = lstm_cell_forward(
            &x,
            &Matrix::zeros(2, 4),
            &Matrix::zeros(2, 4),
            cell.params(),
        )
        .unwrap();
        let (mut a, mut b, mut c) = cell.zero_grads();
        let mut g = LstmGrads {
            w_x: &mut a,
            w_h: &mut b,
            b: &mut c,
        };
        assert!(lstm_cell_backward(
            &cache,
            &Matrix::zeros(1, 4),
            &Matrix::zeros(2, 4),
            cell.params(),
            &mut g
        )
        .is_err());
    }

    /// Loss = sum over steps of <w_t, h_t> + <v, c_T> for a stack of cells
    /// unrolled over `steps` with shared weights per layer.
    fn unrolled_loss(cells: &[Cell], xs: &[Matrix], ws: &[Matrix], v: &Matrix) -> f64 {
        let n = xs[0].rows();
        let mut hs: Vec<Matrix> = cells
            .iter()
            .map(|c| Matrix::zeros(n, c.w_h.rows()))
            .collect();
        let mut cs = hs.clone();
        let mut loss = 0.0;
        for (x, w) in xs.iter().zip(ws) {
            let mut input = x.clone();
            for (l, cell) in cells.iter().enumerate() {
                let (h, c, _) = lstm_cell_forward(&input, &hs[l], &cs[l], cell.params()).unwrap();
                hs[l] = h.clone();
                cs[l] = c;
                input = h;
            }
            loss += input
                .as_slice()
                .iter()
                .zip(w.as_slice())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        loss + cs
            .last()
            .unwrap()
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(a, b)| a * b)
            .sum::<f64>()
    }

    fn analytic(
        cells: &[Cell],
        xs: &[Matrix],
        ws: &[Matrix],
        v: &Matrix,
    ) -> (Vec<(Matrix, Matrix, Matrix)>, Vec<Matrix>) {
        let n = xs[0].rows();
        let layers = cells.len();
        let mut hs: Vec<Matrix> = cells
            .iter()
            .map(|c| Matrix::zeros(n, c.w_h.rows()))
            .collect();
        let mut cs = hs.clone();
        let mut caches: Vec<Vec<LstmCache>> = vec![Vec::new(); layers];
        for x in xs {
            let mut input = x.clone();
            for (l, cell) in cells.iter().enumerate() {
                let (h, c, cache) =
                    lstm_cell_forward(&input, &hs[l], &cs[l], cell.params()).unwrap();
                caches[l].push(cache);
                hs[l] = h.clone();
                cs[l] = c;
                input = h;
            }
        }
        let mut grads: Vec<(Matrix, Matrix, Matrix)> =
            cells.iter().map(|c| c.zero_grads()).collect();
        let mut dh_next: Vec<Matrix> = cells
            .iter()
            .map(|c| Matrix::zeros(n, c.w_h.rows()))
            .collect();
        let mut dc_next = dh_next.clone();
        dc_next[layers - 1] = Matrix::from_fn(n, v.cols(), |r, c| v.get(r, c));
        let mut dxs = vec![Matrix::zeros(0, 0); xs.len()];
        for t in (0..xs.len()).rev() {
            let mut dh_from_above = ws[t].clone();
            for l in (0..layers).rev() {
                let mut dh = dh_next[l].clone();
                dh.add_top_rows(&dh_from_above);
                let (gx, gh, gb) = &mut grads[l];
                let mut g = LstmGrads {
                    w_x: gx,
                    w_h: gh,
                    b: gb,
                };
                let (dx, dhp, dcp) =
                    lstm_cell_backward(&caches[l][t], &dh, &dc_next[l], cells[l].params(), &mut g)
                        .unwrap();
                dh_next[l] = dhp;
                dc_next[l] = dcp;
                dh_from_above = dx;
            }
            dxs[t] = dh_from_above;
        }
        (grads, dxs)
    }

    fn param_mut(c: &mut Cell, which: usize, i: usize) -> &mut f64 {
        match which {
            0 => &mut c.w_x.as_mut_slice()[i],
            1 => &mut c.w_h.as_mut_slice()[i],
            _ => &mut c.b.as_mut_slice()[i],
        }
    }

    fn max_rel_error(cells: &mut [Cell], xs: &mut [Matrix], ws: &[Matrix], v: &Matrix) -> f64 {
        let (grads, dxs) = analytic(cells, xs, ws, v);
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for l in 0..cells.len() {
            for which in 0..3 {
                let len = match which {
                    0 => cells[l].w_x.len(),
                    1 => cells[l].w_h.len(),
                    _ => cells[l].b.len(),
                };
                for i in 0..len {
                    let orig = *param_mut(&mut cells[l], which, i);
                    *param_mut(&mut cells[l], which, i) = orig + eps;
                    let fp = unrolled_loss(cells, xs, ws, v);
                    *param_mut(&mut cells[l], which, i) = orig - eps;
                    let fm = unrolled_loss(cells, xs, ws, v);
                    *param_mut(&mut cells[l], which, i) = orig;
                    let numeric = (fp - fm) / (2.0 * eps);
                    let g = match which {
                        0 => &grads[l].0,
                        1 => &grads[l].1,
                        _ => &grads[l].2,
                    };
                    worst = worst.max(rel(g.as_slice()[i], numeric));
                }
            }
        }
        for t in 0..xs.len() {
            for i in 0..xs[t].len() {
                let orig = xs[t].as_slice()[i];
                xs[t].as_mut_slice()[i] = orig + eps;
                let fp = unrolled_loss(cells, xs, ws, v);
                xs[t].as_mut_slice()[i] = orig - eps;
                let fm = unrolled_loss(cells, xs, ws, v);
                xs[t].as_mut_slice()[i] = orig;
                worst = worst.max(rel(dxs[t].as_slice()[i], (fp - fm) / (2.0 * eps)));
            }
        }
        worst
    }

    fn run_case(layers: usize, steps: usize, hidden: usize, batch: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = 3;
        let mut cells: Vec<Cell> = (0..layers)
            .map(|l| Cell::random(if l == 0 { input } else { hidden }, hidden, 0.5, &mut rng))
            .collect();
        let mut xs: Vec<Matrix> = (0..steps).map(|_| rand_m(batch, input, &mut rng)).collect();
        let ws: Vec<Matrix> = (0..steps)
            .map(|_| rand_m(batch, hidden, &mut rng))
            .collect();
        let v = rand_m(batch, hidden, &mut rng);
        max_rel_error(&mut cells, &mut xs, &ws, &v)
    }

    #[test]
    fn single_cell_gradients() {
        let err = run_case(1, 1, 4, 1, 21);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn stacked_cells_three_steps() {
        let err = run_case(2, 3, 4, 2, 22);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn shared_weights_five_steps() {
        let err = run_case(1, 5, 5, 3, 23);
        assert!(err < 1e-4, "max rel err {err}");
    }
}
