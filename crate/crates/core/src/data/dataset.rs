use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Labelled images, `[N, H, W, C]` with pixel values in `[0, 1]` for image
/// data (synthetic features are unbounded).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
    pub split: String,
}

impl Dataset {
    pub fn new(
        images: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
        split: impl Into<String>,
    ) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(Error::shape(
                "dataset",
                format!("images must be [N, H, W, C], got {:?}", images.shape()),
            ));
        }
        let n = images.shape()[0];
        if n == 0 {
            return Err(Error::Invalid("dataset is empty".into()));
        }
        if labels.len() != n {
            return Err(Error::Invalid(format!(
                "{} labels for {} images",
                labels.len(),
                n
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            name: name.into(),
            split: split.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape `[H, W, C]`.
    pub fn input_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_outer(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
            split: self.split.clone(),
        }
    }

    /// First `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            images: self.images.select_outer(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Minibatches of one epoch. The order is a permutation drawn from the
    /// `"data-order"` stream of `seed` indexed by `epoch`; the final partial
    /// batch is kept.
    pub fn epoch_batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut r = rng::indexed_stream(seed, "data-order", epoch as u64);
        order.shuffle(&mut r);
        order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    /// Contiguous chunks in input order, for evaluation.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        (0..self.len()).step_by(size.max(1)).map(move |start| {
            let end = (start + size).min(self.len());
            Batch {
                images: self.images.slice_outer(start, end),
                labels: self.labels[start..end].to_vec(),
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let images = Tensor::new(vec![n, 1, 1, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        Dataset::new(images, (0..n).map(|i| i % 2).collect(), 2, "toy", "train").unwrap()
    }

    #[test]
    fn batch_order_is_seeded() {
        let d = toy(10);
        let a = d.epoch_batches(3, 1, 0);
        assert_eq!(a, d.epoch_batches(3, 1, 0));
        assert_ne!(a, d.epoch_batches(3, 1, 1));
        assert_eq!(a.len(), 4);
        assert_eq!(a[3].len(), 1);
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn invariants_checked() {
        let images = Tensor::zeros(&[2, 1, 1, 1]);
        assert!(Dataset::new(images.clone(), vec![0, 2], 2, "x", "y").is_err());
        assert!(Dataset::new(images, vec![0], 2, "x", "y").is_err());
        assert!(Dataset::new(Tensor::zeros(&[0, 1, 1, 1]), vec![], 2, "x", "y").is_err());
    }

    #[test]
    fn chunks_cover_in_order() {
        let d = toy(5);
        let labels: Vec<usize> = d.chunks(2).flat_map(|b| b.labels).collect();
        assert_eq!(labels, d.labels);
    }
}
