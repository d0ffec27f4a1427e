//! Keyed random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from the run
//! seed plus a key path such as `(epoch, batch, item, view)`, so results do
//! not depend on the order in which parallel work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags that keep streams for different purposes apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Shuffle = 2,
    ClipSample = 3,
    Augment = 4,
    Schedule = 5,
    Generate = 6,
    Eval = 7,
    Probe = 8,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a key path into a 64-bit stream id.
pub fn mix_key(seed: u64, domain: Domain, key: &[u64]) -> u64 {
    let mut h = splitmix(seed ^ splitmix(domain as u64));
    for &k in key {
        h = splitmix(h ^ splitmix(k.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    h
}

/// Opens the stream for `(seed, domain, key...)`.
pub fn stream(seed: u64, domain: Domain, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_key(seed, domain, key))
}
