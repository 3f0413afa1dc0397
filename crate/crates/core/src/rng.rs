//! Seeded, counter-based random number generation.
//!
//! ChaCha is a counter-mode stream cipher: a (seed, stream) pair plus a
//! block counter fully determines the output, so parallel workers given
//! disjoint streams reproduce the single-threaded results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic generator for a given seed and stream index.
pub fn rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}
