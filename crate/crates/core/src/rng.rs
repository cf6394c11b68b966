//! Labeled random streams.
//!
//! Every component draws from ChaCha8 seeded with the user seed and a stream
//! number derived from a fixed label, so adding draws in one component never
//! shifts another component's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a hash of the label, used as the ChaCha stream id.
fn label_id(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(label_id(label));
    r
}
