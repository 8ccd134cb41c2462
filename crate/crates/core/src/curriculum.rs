//! Training regimes that expose a growing slice of the data.
//!
//! Every incremental regime starts small and doubles its limit whenever an
//! epoch's training RMSE falls strictly below the threshold.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::CLASS_COUNT;
use crate::seed::{rng_for, SUBSET};
use crate::strokes::{SeqView, StrokeSequence};

pub const DEFAULT_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurriculumKind {
    /// All data from the start.
    Regular,
    /// Growing prefixes of every sequence.
    IncrementalLength,
    /// Growing subset of the sequences.
    IncrementalSetSize,
    /// Growing set of digit classes, in numeric order.
    IncrementalClasses,
}

impl CurriculumKind {
    pub const ALL: [CurriculumKind; 4] = [
        CurriculumKind::Regular,
        CurriculumKind::IncrementalLength,
        CurriculumKind::IncrementalSetSize,
        CurriculumKind::IncrementalClasses,
    ];

    pub fn initial_limit(self) -> usize {
        match self {
            CurriculumKind::Regular => usize::MAX,
            CurriculumKind::IncrementalLength => 2,
            CurriculumKind::IncrementalSetSize => 10,
            CurriculumKind::IncrementalClasses => 1,
        }
    }
}

impl fmt::Display for CurriculumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurriculumKind::Regular => "regular",
            CurriculumKind::IncrementalLength => "incremental_length",
            CurriculumKind::IncrementalSetSize => "incremental_set_size",
            CurriculumKind::IncrementalClasses => "incremental_classes",
        })
    }
}

impl FromStr for CurriculumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(CurriculumKind::Regular),
            "incremental_length" | "length" | "isl" => Ok(CurriculumKind::IncrementalLength),
            "incremental_set_size" | "size" => Ok(CurriculumKind::IncrementalSetSize),
            "incremental_classes" | "classes" => Ok(CurriculumKind::IncrementalClasses),
            _ => Err(Error::Config(format!("unknown curriculum {s:?}"))),
        }
    }
}

/// A limit change and the training progress at which it happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Advancement {
    pub points: u64,
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    kind: CurriculumKind,
    limit: usize,
    maximum: usize,
    threshold: f64,
    log: Vec<Advancement>,
    /// Fixed membership order for the set-size regime.
    subset_order: Vec<usize>,
}

fn natural_maximum(kind: CurriculumKind, full: &[StrokeSequence]) -> usize {
    match kind {
        CurriculumKind::Regular => usize::MAX,
        CurriculumKind::IncrementalLength => {
            full.iter().map(StrokeSequence::len).max().unwrap_or(0)
        }
        CurriculumKind::IncrementalSetSize => full.len(),
        CurriculumKind::IncrementalClasses => CLASS_COUNT,
    }
}

impl CurriculumState {
    /// `seed` fixes the set-size regime's membership order.
    pub fn new(kind: CurriculumKind, full: &[StrokeSequence], seed: u64) -> Self {
        let maximum = natural_maximum(kind, full);
        let subset_order = if kind == CurriculumKind::IncrementalSetSize {
            let mut order: Vec<usize> = (0..full.len()).collect();
            order.shuffle(&mut rng_for(seed, SUBSET));
            order
        } else {
            Vec::new()
        };
        Self {
            kind,
            limit: kind.initial_limit().min(maximum),
            maximum,
            threshold: DEFAULT_THRESHOLD,
            log: Vec::new(),
            subset_order,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn kind(&self) -> CurriculumKind {
        self.kind
    }

    /// `usize::MAX` for the regular regime.
    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn maximum(&self) -> usize {
        self.maximum
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn log(&self) -> &[Advancement] {
        &self.log
    }

    pub fn is_saturated(&self) -> bool {
        self.limit >= self.maximum
    }

    /// Reinstate progress saved from an earlier run on the same data.
    pub fn restore(&mut self, limit: usize, log: Vec<Advancement>) -> Result<()> {
        let initial = self.kind.initial_limit().min(self.maximum);
        let mut prev = initial;
        for a in &log {
            if a.limit <= prev || a.limit > self.maximum {
                return Err(Error::Checkpoint(format!(
                    "curriculum log entry {a:?} does not follow limit {prev}"
                )));
            }
            prev = a.limit;
        }
        if limit != prev {
            return Err(Error::Checkpoint(format!(
                "curriculum limit {limit} disagrees with its log (expected {prev})"
            )));
        }
        self.limit = limit;
        self.log = log;
        Ok(())
    }

    /// The training items visible at the current limit. Prefixes are cut
    /// as-is, without an end marker.
    pub fn view<'a>(&self, full: &'a [StrokeSequence]) -> Vec<SeqView<'a>> {
        match self.kind {
            CurriculumKind::Regular => full.iter().map(StrokeSequence::view).collect(),
            CurriculumKind::IncrementalLength => {
                full.iter().map(|s| s.view().prefix(self.limit)).collect()
            }
            CurriculumKind::IncrementalSetSize => {
                let mut members: Vec<usize> =
                    self.subset_order.iter().copied().take(self.limit).collect();
                members.sort_unstable();
                members.into_iter().map(|i| full[i].view()).collect()
            }
            CurriculumKind::IncrementalClasses => full
                .iter()
                .filter(|s| usize::from(s.label()) < self.limit)
                .map(StrokeSequence::view)
                .collect(),
        }
    }

    /// Double the limit if `train_rmse` is strictly below the threshold.
    /// Returns whether the limit changed.
    pub fn on_epoch_end(&mut self, train_rmse: f64, points: u64) -> bool {
        if self.kind == CurriculumKind::Regular
            || self.is_saturated()
            || train_rmse.is_nan()
            || train_rmse >= self.threshold
        {
            return false;
        }
        self.limit = self.limit.saturating_mul(2).min(self.maximum);
        self.log.push(Advancement {
            points,
            limit: self.limit,
        });
        true
    }

    /// Limit in force after `points` points, from the advancement log.
    pub fn limit_at(&self, points: u64) -> usize {
        self.log
            .iter()
            .take_while(|a| a.points <= points)
            .last()
            .map_or(self.kind.initial_limit().min(self.maximum), |a| a.limit)
    }

    /// Share of the full data's prediction targets visible at `limit`.
    pub fn fraction_visible_at(&self, limit: usize, full: &[StrokeSequence]) -> f64 {
        let total: usize = full.iter().map(|s| s.view().points()).sum();
        if total == 0 {
            return 1.0;
        }
        let mut probe = self.clone();
        probe.limit = limit.min(self.maximum);
        let seen: usize = probe.view(full).iter().map(SeqView::points).sum();
        seen as f64 / total as f64
    }

    pub fn fraction_visible(&self, full: &[StrokeSequence]) -> f64 {
        self.fraction_visible_at(self.limit, full)
    }
}
