//! Shared fixtures for the benchmarks.

use moped_core::rng;
use moped_core::Tensor;

/// Standard-normal tensor from the `"bench"` stream of `seed`.
pub fn normal_tensor(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    let mut r = rng::stream(seed, "bench");
    Tensor::new(shape.to_vec(), rng::standard_normals(&mut r, n)).expect("shape matches data")
}

/// Random probability stack `[t, b, k]`.
pub fn probability_stack(t: usize, b: usize, k: usize, seed: u64) -> Tensor {
    let logits = normal_tensor(&[t * b, k], seed);
    let probs = moped_core::kernels::softmax_rows(logits.data(), k);
    Tensor::new(vec![t, b, k], probs).expect("shape matches data")
}
