use super::config::INPUT_SIZE;
use crate::strokes::{PenStep, SeqView};
use crate::tensor::Matrix;

/// The step to be predicted, with offsets in network units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTarget {
    pub dx: f64,
    pub dy: f64,
    pub eos: bool,
    pub eod: bool,
    pub class: u8,
}

impl StepTarget {
    pub fn from_step(step: &PenStep, label: u8, scale: f64) -> Self {
        Self {
            dx: step.dx as f64 / scale,
            dy: step.dy as f64 / scale,
            eos: step.eos,
            eod: step.eod,
            class: label,
        }
    }
}

pub fn input_vector(step: &PenStep, scale: f64) -> [f64; INPUT_SIZE] {
    [
        step.dx as f64 / scale,
        step.dy as f64 / scale,
        f64::from(u8::from(step.eos)),
        f64::from(u8::from(step.eod)),
    ]
}

/// Teacher-forced, time-major batch. Rows are ordered by decreasing length
/// so the items still active at step `t` are exactly the first `rows(t)`.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Row `r` holds item `order[r]` of the source slice.
    order: Vec<usize>,
    lengths: Vec<usize>,
    labels: Vec<u8>,
    inputs: Vec<Matrix>,
    targets: Vec<Vec<StepTarget>>,
    points: usize,
}

impl Batch {
    /// Items with fewer than two steps provide no targets and are left out.
    pub fn new(items: &[SeqView<'_>], scale: f64) -> Self {
        let mut order: Vec<usize> = (0..items.len())
            .filter(|&i| items[i].points() > 0)
            .collect();
        order.sort_by_key(|&i| std::cmp::Reverse(items[i].points()));
        let lengths: Vec<usize> = order.iter().map(|&i| items[i].points()).collect();
        let labels = order.iter().map(|&i| items[i].label).collect();
        let max_len = lengths.first().copied().unwrap_or(0);

        let mut inputs = Vec::with_capacity(max_len);
        let mut targets = Vec::with_capacity(max_len);
        for t in 0..max_len {
            let rows = lengths.iter().take_while(|&&l| l > t).count();
            let mut x = Matrix::zeros(rows, INPUT_SIZE);
            let mut y = Vec::with_capacity(rows);
            for (r, &i) in order[..rows].iter().enumerate() {
                let item = &items[i];
                x.row_mut(r)
                    .copy_from_slice(&input_vector(&item.steps[t], scale));
                y.push(StepTarget::from_step(&item.steps[t + 1], item.label, scale));
            }
            inputs.push(x);
            targets.push(y);
        }
        Self {
            order,
            points: lengths.iter().sum(),
            lengths,
            labels,
            inputs,
            targets,
        }
    }

    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Number of input -> target pairs.
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn rows(&self) -> usize {
        self.order.len()
    }

    pub fn rows_at(&self, t: usize) -> usize {
        self.inputs[t].rows()
    }

    pub fn input(&self, t: usize) -> &Matrix {
        &self.inputs[t]
    }

    pub fn targets(&self, t: usize) -> &[StepTarget] {
        &self.targets[t]
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn length(&self, row: usize) -> usize {
        self.lengths[row]
    }

    pub fn label(&self, row: usize) -> u8 {
        self.labels[row]
    }
}
