//! Named random streams derived from one root seed.
//!
//! Every consumer of randomness asks for its own stream (`"init"`,
//! `"data-order"`, `"vi-noise"`, `"mc-eval"`, ...), so changing how much
//! randomness one stage draws never shifts another stage's numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of sub-stream `name` under `root`.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    splitmix(root ^ splitmix(fnv1a(name.as_bytes())))
}

/// Generator for sub-stream `name` under `root`.
pub fn stream(root: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(root, name))
}

/// Generator for the `index`-th member of an indexed family of streams.
pub fn indexed_stream(root: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(splitmix(derive_seed(root, name) ^ splitmix(index.wrapping_add(1))))
}

pub fn standard_normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `n` independent Rademacher (±1) draws.
pub fn rademacher(rng: &mut Rng, n: usize) -> Vec<f64> {
    use rand::Rng as _;
    (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}
