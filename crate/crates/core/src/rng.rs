//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by a master seed and a path of integer tags, so results do
//! not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `seed`. Distinct tag paths give unrelated seeds.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn keyed(seed: u64, tags: &[u64]) -> Rng {
    seeded(derive(seed, tags))
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(n: usize, rng: &mut Rng) -> alloc::vec::Vec<usize> {
    use rand::Rng as _;
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
