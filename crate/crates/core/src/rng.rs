//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`).
//! ChaCha exposes a 64-bit stream selector next to the 64-bit seed, so independent
//! sub-streams (one per cluster, per repeat, per bootstrap replicate) are obtained
//! by keeping the seed and changing the stream id, without any hashing of seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags occupy the top 16 bits of the stream id; the low 48 bits carry an index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    BarabasiAlbert = 1,
    ErdosRenyi = 2,
    Attributes = 3,
    Partition = 4,
    Responses = 5,
    Bootstrap = 6,
    ClusterChoice = 7,
    Repeat = 8,
    Synthetic = 9,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) | (index & 0xFFFF_FFFF_FFFF));
    rng
}

/// Derives a child seed for a nested pipeline (e.g. one simulation repeat) from
/// a parent seed and an index. Draws from a dedicated stream, so children of
/// distinct indices never share state.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, Purpose::Repeat, index).next_u64()
}
