use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catmap::{period, KeySet};

const MAX_PQ: u32 = 16;
const MAX_K: u64 = 64;

/// Draws a key for an `n x n` grid.
///
/// `p` and `q` are uniform in `[1, 16]` and `k` in `[1, min(period, 64))`,
/// so the map is never the identity. Keys whose `k`-th power matrix is
/// triangular are redrawn: those keep rows or columns intact and leave
/// neighbouring addresses next to each other.
pub fn gen_key(seed: u64, n: u32) -> KeySet {
    assert!(n >= 1, "grid side must be positive");
    if n == 1 {
        return KeySet::new(1, 1, 1, 1).expect("valid");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fallback = None;
    for _ in 0..1024 {
        let p = rng.gen_range(1..=MAX_PQ);
        let q = rng.gen_range(1..=MAX_PQ);
        let t = period(&KeySet::new(0, p, q, n).expect("valid")).period;
        if t < 2 {
            continue;
        }
        let k = rng.gen_range(1..t.min(MAX_K)) as u32;
        let key = KeySet::new(k, p, q, n).expect("valid");
        if !key.power_matrix().is_triangular() {
            return key;
        }
        fallback.get_or_insert(key);
    }
    fallback.expect("some draw has period at least 2")
}
