//! Keyed random streams.
//!
//! Every random decision in the crate draws from a ChaCha stream whose key is
//! derived from a root seed and a path of integer labels (tree index, node
//! path, replicate number, ...). Streams never depend on the order in which
//! work is scheduled, so results are identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain labels that keep sibling streams derived from one seed apart.
pub(crate) mod label {
    pub const SUBSAMPLE: u64 = 0x5355_4253;
    pub const FIXED_POINTS: u64 = 0x4649_5850;
    pub const OMEGA: u64 = 0x4f4d_4547;
    pub const DATA: u64 = 0x4441_5441;
    pub const PERMUTE: u64 = 0x5045_524d;
    pub const REPLICATE: u64 = 0x5245_504c;
    pub const REFERENCE: u64 = 0x5245_4645;
    pub const ZETA1: u64 = 0x5a45_5431;
    pub const ZETAKK: u64 = 0x5a45_544b;
    pub const POINTS: u64 = 0x504f_494e;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a path of labels into a 64-bit key.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Opens the stream addressed by `seed` and `path`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let key = derive(seed, path);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(key.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_stream() {
        let a: Vec<u64> = stream(7, &[1, 2]).random_iter().take(4).collect();
        let b: Vec<u64> = stream(7, &[1, 2]).random_iter().take(4).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn paths_are_not_prefix_or_order_collisions() {
        assert_ne!(derive(7, &[1, 2]), derive(7, &[2, 1]));
        assert_ne!(derive(7, &[1]), derive(7, &[1, 0]));
        assert_ne!(derive(7, &[]), derive(8, &[]));
    }
}
