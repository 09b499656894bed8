//! Seeded, splittable random streams.
//!
//! Every stochastic routine takes an explicit generator. Work that is split
//! across sites, replicates or grid points draws from [`substream`], which
//! derives an independent ChaCha stream from `(seed, index)`, so serial and
//! parallel runs produce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream number `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream for a two-level index, e.g. (grid point, replicate).
pub fn substream2(seed: u64, outer: u64, inner: u64) -> SimRng {
    let mixed = seed ^ outer.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    substream(mixed, inner)
}
