//! Named random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream. The stream is
//! selected by `(master seed, purpose, label, replicate)`: the master seed
//! keys the generator and the remaining triple is hashed (FNV-1a followed by
//! a SplitMix64 finaliser) into the 64-bit ChaCha stream id. Streams with
//! different ids are independent, and a stream's contents never depend on
//! how many draws other streams made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream id for `(purpose, label, replicate)`.
pub fn stream_id(purpose: &str, label: &str, replicate: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325;
    h = fnv1a(purpose.as_bytes(), h);
    h = fnv1a(&[0xff], h);
    h = fnv1a(label.as_bytes(), h);
    h = fnv1a(&[0xff], h);
    h = fnv1a(&replicate.to_le_bytes(), h);
    splitmix(h)
}

/// The generator for one named stream.
pub fn stream(master_seed: u64, purpose: &str, label: &str, replicate: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream_id(purpose, label, replicate));
    rng
}
