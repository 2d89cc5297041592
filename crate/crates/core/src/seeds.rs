//! Counter-based seeding.
//!
//! Every random stream is `ChaCha8Rng::seed_from_u64(base_seed)` with a
//! distinct stream id, so replicate `k` can be regenerated on its own:
//!
//! | stream                         | use                       |
//! |--------------------------------|---------------------------|
//! | 0                              | population synthesis      |
//! | `1 + 8k + Component as u64`    | replicate `k` components  |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const POPULATION_STREAM: u64 = 0;
const STREAMS_PER_REPLICATE: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Component {
    Sample = 0,
    Census = 1,
    Pes = 2,
    Matching = 3,
    FollowUp = 4,
}

pub fn stream_rng(base_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream);
    rng
}

pub fn replicate_stream(replicate: u64, component: Component) -> u64 {
    1 + replicate * STREAMS_PER_REPLICATE + component as u64
}

pub fn replicate_rng(base_seed: u64, replicate: u64, component: Component) -> ChaCha8Rng {
    stream_rng(base_seed, replicate_stream(replicate, component))
}
