//! Seeded random streams.
//!
//! A run owns one seed. Each consumer (splitting, shuffling, SES noise,
//! dropout, initialization) draws from its own stream derived from that seed
//! and a counter, so turning one consumer off never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split,
    Shuffle,
    SesNoise,
    Dropout,
    Init,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Split => 0x5350_4c49,
            Stream::Shuffle => 0x5348_5546,
            Stream::SesNoise => 0x4e4f_4953,
            Stream::Dropout => 0x4452_4f50,
            Stream::Init => 0x494e_4954,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Generator for `stream` at position `counter` (epoch, step, record index...).
pub fn stream_rng(seed: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed ^ stream.tag()) ^ splitmix64(counter.wrapping_add(1)));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Counter for a (step, item) pair.
pub fn counter2(major: u64, minor: u64) -> u64 {
    splitmix64(major).wrapping_add(minor)
}
