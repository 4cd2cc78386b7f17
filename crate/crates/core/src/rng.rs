//! Seeded, counter-stable random number streams.
//!
//! Every stochastic component in the crate draws from a ChaCha12 generator
//! keyed by a user seed, with independent substreams selected by a stream
//! index. Substream `i` of seed `s` is the same no matter how many other
//! substreams are drawn, so enlarging a path batch never reshuffles earlier
//! paths.
//!
//! Standard normals are produced by inverse-CDF transform of a 53-bit
//! uniform (Wichura's PPND16, see [`crate::math::norm_inv`]). The sampling
//! scheme is part of the crate's reproducibility contract: fixtures freeze
//! byte-exact outputs, so the normal generator must never change silently.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// ChaCha12 generator positioned on substream `index` of `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Uniform draw in the open interval (0, 1) with 2^-53 granularity.
#[inline]
pub fn unit_open(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// One standard normal draw via inverse-CDF sampling.
#[inline]
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    crate::math::norm_inv(unit_open(rng))
}
