//! Named random sub-streams derived from one master seed, so data
//! generation, initialization and batch sampling are independently
//! reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// ChaCha stream selected by an FNV-1a hash of the label.
pub fn substream(seed: u64, label: &str) -> ChaCha12Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(h);
    rng
}
