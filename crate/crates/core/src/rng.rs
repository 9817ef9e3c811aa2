//! Seed derivation.
//!
//! Every random stream in a run is derived from a single master seed. A named
//! sub-stream seed is `splitmix64(master ^ fnv1a64(name))`; the stream itself
//! is a ChaCha8 generator seeded from that value. Names used by the harness:
//!
//! | name       | consumer                                   |
//! |------------|--------------------------------------------|
//! | `data`     | synthetic dataset generation               |
//! | `init`     | encoder, center and classifier init        |
//! | `sampling` | PK batch sampling during training          |
//! | `eval`     | single-shot gallery draws at evaluation    |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub const DATA: &str = "data";
pub const INIT: &str = "init";
pub const SAMPLING: &str = "sampling";
pub const EVAL: &str = "eval";

fn fnv1a64(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the named sub-stream of `master`.
pub fn substream_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a64(name))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(master: u64, name: &str) -> Stream {
    stream(substream_seed(master, name))
}
