//! Seeded random streams.
//!
//! Every per-identity computation draws from `stream(seed, identity_id)`, a
//! ChaCha generator keyed by the campaign seed with the identity as its
//! stream selector. Results are therefore independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Stream = ChaCha12Rng;

pub fn stream(seed: u64, identity_id: u64) -> Stream {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(identity_id);
    rng
}

/// Stream for a named sub-purpose of a seed (oracle construction, basis
/// sampling, ...) so that they never share draws with identity streams.
pub fn purpose_stream(seed: u64, purpose: &str) -> Stream {
    // FNV-1a; only needs to be stable, not strong.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ h.rotate_left(17));
    rng.set_stream(u64::MAX - (h >> 1));
    rng
}
