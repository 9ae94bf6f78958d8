//! Seed derivation: one master seed fans out into independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent random streams derived from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Augment = 2,
    Init = 3,
    Batch = 4,
    Split = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit mix of an integer, used for id hashing.
pub fn mix(x: u64) -> u64 {
    splitmix64(x)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream as u64)) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> Rng {
    rng_from(derive_seed(master, stream, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ() {
        let a = derive_seed(7, Stream::Data, 0);
        assert_ne!(a, derive_seed(7, Stream::Augment, 0));
        assert_ne!(a, derive_seed(7, Stream::Data, 1));
        assert_ne!(a, derive_seed(8, Stream::Data, 0));
        assert_eq!(a, derive_seed(7, Stream::Data, 0));
    }
}
