//! Sub-seed derivation. Every random stream in a run is keyed by the run seed
//! and a fixed label, so one `--seed` controls everything.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const SUBSET: &str = "subset";
pub const SAMPLE: &str = "sample";

pub fn derive_seed(seed: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    hasher.finalize().into()
}

pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, label))
}

/// Serialize a ChaCha8 generator position as lowercase hex:
/// 32 seed bytes, 8 stream bytes, 16 word-position bytes (all little-endian).
pub fn rng_to_hex(rng: &ChaCha8Rng) -> String {
    let mut bytes = Vec::with_capacity(56);
    bytes.extend_from_slice(&rng.get_seed());
    bytes.extend_from_slice(&rng.get_stream().to_le_bytes());
    bytes.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn rng_from_hex(hex: &str) -> Option<ChaCha8Rng> {
    if hex.len() != 112 {
        return None;
    }
    let bytes: Vec<u8> = (0..56)
        .map(|i| u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).ok())
        .collect::<Option<_>>()?;
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&bytes[..32]);
    let stream = u64::from_le_bytes(bytes[32..40].try_into().ok()?);
    let word_pos = u128::from_le_bytes(bytes[40..56].try_into().ok()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Some(rng)
}
