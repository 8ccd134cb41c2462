use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::BatchMode;
use crate::seed::{derive_seed, SHUFFLE};
use crate::strokes::SeqView;

/// The shuffle generator for one epoch: the run's shuffle seed on stream
/// `epoch`.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(derive_seed(seed, SHUFFLE));
    rng.set_stream(epoch);
    rng
}

/// Split a shuffled view into batches of indices into `view`.
///
/// In points mode a batch is closed once its sequences hold at least
/// `p` steps, so batches of two-step prefixes contain `p / 2` sequences.
/// Sequences are never split.
pub fn make_batches(
    view: &[SeqView<'_>],
    mode: BatchMode,
    seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..view.len()).collect();
    order.shuffle(&mut epoch_rng(seed, epoch));
    match mode {
        BatchMode::Sequences(n) => order.chunks(n.max(1)).map(<[usize]>::to_vec).collect(),
        BatchMode::Points(p) => {
            let mut batches = Vec::new();
            let mut current = Vec::new();
            let mut steps = 0;
            for i in order {
                current.push(i);
                steps += view[i].steps.len();
                if steps >= p {
                    batches.push(std::mem::take(&mut current));
                    steps = 0;
                }
            }
            if !current.is_empty() {
                batches.push(current);
            }
            batches
        }
    }
}
