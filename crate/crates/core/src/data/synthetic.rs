//! Small seeded datasets for desk-scale runs.
//!
//! Blobs are isotropic Gaussian clusters whose means sit on scaled basis
//! vectors, serialized as 1-channel `side × side` images. Because the means
//! depend only on the spec (not the seed), `ShiftedBlobs` reuses the exact
//! cluster structure of `Blobs`, translated along the diagonal; it serves as
//! an out-of-distribution companion.

use std::f64::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticKind {
    Blobs,
    TwoMoons,
    ShiftedBlobs,
}

impl std::str::FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SyntheticKind::Blobs),
            "two-moons" => Ok(SyntheticKind::TwoMoons),
            "shifted-blobs" => Ok(SyntheticKind::ShiftedBlobs),
            other => Err(Error::Invalid(format!("unknown synthetic dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Number of blob clusters (two-moons is always 2).
    pub classes: usize,
    /// Blob images are `side × side`; the cluster count may not exceed `side²`.
    pub side: usize,
    /// Pairwise distance between blob means, in units of `noise`.
    pub separation: f64,
    /// Per-coordinate standard deviation of blob points.
    pub noise: f64,
    /// Translation of shifted blobs, in units of `noise`.
    pub shift: f64,
    /// Standard deviation of the two-moons jitter.
    pub moon_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 3,
            side: 2,
            separation: 6.0,
            noise: 1.0,
            shift: 10.0,
            moon_noise: 0.1,
        }
    }
}

/// Default-spec dataset of `n` points for the `"train"` split.
pub fn make_synthetic(kind: SyntheticKind, n: usize, seed: u64) -> Result<Dataset> {
    make_synthetic_with(kind, &SyntheticSpec::default(), n, seed, "train")
}

pub fn make_synthetic_with(
    kind: SyntheticKind,
    spec: &SyntheticSpec,
    n: usize,
    seed: u64,
    split: &str,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Invalid(format!("synthetic dataset needs n >= 2, got {n}")));
    }
    let mut r = rng::stream(seed, &format!("synthetic-{split}"));
    match kind {
        SyntheticKind::Blobs | SyntheticKind::ShiftedBlobs => {
            let d = spec.side * spec.side;
            if spec.classes < 2 || spec.classes > d {
                return Err(Error::Invalid(format!(
                    "blobs need 2 <= classes <= side^2 = {d}, got {}",
                    spec.classes
                )));
            }
            // Means a·e_k are pairwise a·√2 apart.
            let a = spec.separation * spec.noise / std::f64::consts::SQRT_2;
            let shift = if kind == SyntheticKind::ShiftedBlobs {
                spec.shift * spec.noise / (d as f64).sqrt()
            } else {
                0.0
            };
            let mut data = Vec::with_capacity(n * d);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let k = i % spec.classes;
                let eps = rng::standard_normals(&mut r, d);
                data.extend((0..d).map(|j| {
                    let mean = if j == k { a } else { 0.0 };
                    mean + shift + spec.noise * eps[j]
                }));
                labels.push(k);
            }
            let name = if shift == 0.0 { "blobs" } else { "shifted-blobs" };
            Dataset::new(
                Tensor::new(vec![n, spec.side, spec.side, 1], data)?,
                labels,
                spec.classes,
                name,
                split,
            )
        }
        SyntheticKind::TwoMoons => {
            let mut data = Vec::with_capacity(2 * n);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let k = i % 2;
                let t = r.random_range(0.0..PI);
                let (x, y) = if k == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let eps = rng::standard_normals(&mut r, 2);
                data.push(x + spec.moon_noise * eps[0]);
                data.push(y + spec.moon_noise * eps[1]);
                labels.push(k);
            }
            Dataset::new(Tensor::new(vec![n, 1, 2, 1], data)?, labels, 2, "two-moons", split)
        }
    }
}
