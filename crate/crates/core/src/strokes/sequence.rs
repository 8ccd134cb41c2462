use crate::error::{Error, Result};

/// One pen movement. `dy` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PenStep {
    pub dx: i32,
    pub dy: i32,
    pub eos: bool,
    pub eod: bool,
}

impl PenStep {
    pub const fn moveto(dx: i32, dy: i32) -> Self {
        Self {
            dx,
            dy,
            eos: false,
            eod: false,
        }
    }

    pub const PEN_UP: PenStep = PenStep {
        dx: 0,
        dy: 0,
        eos: true,
        eod: false,
    };

    pub const END: PenStep = PenStep {
        dx: 0,
        dy: 0,
        eos: true,
        eod: true,
    };

    /// `eod => eos` and `eos => (dx, dy) == (0, 0)`.
    pub fn is_valid(&self) -> bool {
        (!self.eod || self.eos) && (!self.eos || (self.dx == 0 && self.dy == 0))
    }
}

/// A complete digit: pen steps terminated by exactly one `(0, 0, 1, 1)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StrokeSequence {
    steps: Vec<PenStep>,
    label: u8,
}

impl StrokeSequence {
    pub fn new(steps: Vec<PenStep>, label: u8) -> Result<Self> {
        if label > 9 {
            return Err(Error::Invalid(format!("label {label} outside 0-9")));
        }
        if steps.last() != Some(&PenStep::END) {
            return Err(Error::Invalid(
                "sequence must end with (0,0,1,1)".to_string(),
            ));
        }
        if let Some(i) = steps.iter().position(|s| !s.is_valid()) {
            return Err(Error::Invalid(format!("step {i} violates eos/eod rules")));
        }
        if steps[..steps.len() - 1].iter().any(|s| s.eod) {
            return Err(Error::Invalid("eod before the final step".to_string()));
        }
        Ok(Self { steps, label })
    }

    pub fn steps(&self) -> &[PenStep] {
        &self.steps
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn view(&self) -> SeqView<'_> {
        SeqView {
            steps: &self.steps,
            label: self.label,
        }
    }

    /// Number of pen strokes (runs of pen-down steps).
    pub fn stroke_count(&self) -> usize {
        let mut count = 0;
        let mut down = false;
        for s in &self.steps {
            if s.eos {
                down = false;
            } else if !down {
                down = true;
                count += 1;
            }
        }
        count
    }
}

/// A borrowed, possibly truncated sequence as seen by training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqView<'a> {
    pub steps: &'a [PenStep],
    pub label: u8,
}

impl<'a> SeqView<'a> {
    /// Input -> target pairs this item provides.
    pub fn points(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn prefix(&self, len: usize) -> SeqView<'a> {
        SeqView {
            steps: &self.steps[..len.min(self.steps.len())],
            label: self.label,
        }
    }
}
