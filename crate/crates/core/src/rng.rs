//! Reproducible random streams keyed by `(seed, path index, role)`.
//!
//! Every stream is a ChaCha8 keystream: the seed fixes the key, and the path
//! index and role select the 64-bit stream id. Draws therefore depend only on
//! the key triple and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which consumer a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamRole {
    /// Holding times and jump targets of the Markov chain.
    Chain,
    /// Brownian increments.
    Brownian,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Chain => 0,
            StreamRole::Brownian => 1,
        }
    }
}

/// Random generator type handed out by [`stream`].
pub type Stream = ChaCha8Rng;

/// Open the stream for `(seed, path_index, role)`.
pub fn stream(seed: u64, path_index: u64, role: StreamRole) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index.wrapping_mul(2).wrapping_add(role.tag()));
    rng
}
