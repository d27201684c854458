//! Counter-based RNG streams.
//!
//! Every (replicate, area) pair draws from its own ChaCha stream derived
//! from the scenario seed, so simulation output is a pure function of the
//! seed and replicate index no matter how replicates are scheduled across
//! threads. Normal variates come from the ziggurat sampler in
//! `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Streams at and above this base are reserved for design realization
/// (covariate draws); replicate streams live below it.
pub(crate) const COVARIATE_STREAM_BASE: u64 = u64::MAX - (1 << 24);

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The stream for one (replicate, area) pair.
pub(crate) fn replicate_area_rng(seed: u64, rep: u64, area: u64) -> ChaCha8Rng {
    debug_assert!(area < (1 << 16));
    stream_rng(seed, (rep << 16) | area)
}
