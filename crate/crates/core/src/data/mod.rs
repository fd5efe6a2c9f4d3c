//! Dataset loaders, batching and augmentation.

mod cifar;
mod mnist;

pub use cifar::{load_cifar10, load_cifar100, parse_cifar_records, CIFAR100_NORM, CIFAR10_NORM, CIFAR_RECORD_BYTES};
pub use mnist::{load_mnist, parse_idx_images, parse_idx_labels, MNIST_NORM};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{derive_seed, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel normalization constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization<const C: usize> {
    pub mean: [f64; C],
    pub std: [f64; C],
}

/// Images `[N, H, W, C]` with one class label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Value a black pixel takes after normalization, per channel; used to
    /// fill padding during augmentation.
    pub fill: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize, fill: Vec<T>) -> Result<Self> {
        if images.rank() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "{} labels for images of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        if fill.len() != images.shape()[3] {
            return Err(Error::invalid("fill values must match the channel count"));
        }
        Ok(Self {
            images,
            labels,
            classes,
            fill,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keeps the first `n` samples.
    pub fn truncate(self, n: usize) -> Result<Self> {
        if n >= self.len() {
            return Ok(self);
        }
        let rows: Vec<usize> = (0..n).collect();
        Dataset::new(self.images.select_rows(&rows)?, self.labels[..n].to_vec(), self.classes, self.fill)
    }

    /// Gathers samples `indices`, augmenting each with a stream derived
    /// from `(seed, epoch, sample index)` when a policy is given.
    pub fn batch(&self, indices: &[usize], augment: Option<(&AugmentPolicy, u64, u64)>) -> Result<(Tensor<T>, Vec<usize>)> {
        let mut x = self.images.select_rows(indices)?;
        if let Some((policy, seed, epoch)) = augment {
            if policy.enabled {
                let dims = [x.shape()[1], x.shape()[2], x.shape()[3]];
                let per = dims.iter().product::<usize>();
                for (slot, &idx) in x.data_mut().chunks_mut(per).zip(indices) {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("augment:{epoch}:{idx}")));
                    let out = policy.apply(slot, dims, &self.fill, &mut rng);
                    slot.copy_from_slice(&out);
                }
            }
        }
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Sample order for one epoch; a pure function of `(seed, epoch)`.
pub fn epoch_permutation(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("epoch:{epoch}")));
    order.shuffle(&mut rng);
    order
}

/// Pad, random-crop back to size, and horizontal flip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub enabled: bool,
    pub pad: usize,
    pub flip_prob: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            pad: 4,
            flip_prob: 0.5,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Augments one `[H, W, C]` image.
    pub fn apply<T: Scalar, R: Rng>(&self, image: &[T], [h, w, c]: [usize; 3], fill: &[T], rng: &mut R) -> Vec<T> {
        let p = self.pad;
        let dy = rng.random_range(0..=2 * p);
        let dx = rng.random_range(0..=2 * p);
        let flip = rng.random_bool(self.flip_prob.clamp(0.0, 1.0));
        let mut out = Vec::with_capacity(image.len());
        for y in 0..h {
            for x in 0..w {
                let sx = if flip { w - 1 - x } else { x };
                // coordinates in the padded image
                let (py, px) = (y + dy, sx + dx);
                let inside = py >= p && py < h + p && px >= p && px < w + p;
                for k in 0..c {
                    out.push(if inside {
                        image[((py - p) * w + (px - p)) * c + k]
                    } else {
                        fill[k]
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_is_pure_and_complete() {
        let a = epoch_permutation(3, 1, 50);
        assert_eq!(a, epoch_permutation(3, 1, 50));
        assert_ne!(a, epoch_permutation(3, 2, 50));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn zero_padding_without_flip_is_identity_crop() {
        let policy = AugmentPolicy {
            enabled: true,
            pad: 0,
            flip_prob: 0.0,
        };
        let img: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(policy.apply(&img, [2, 3, 2], &[0.0, 0.0], &mut rng), img);
        let flip = AugmentPolicy { flip_prob: 1.0, ..policy };
        let out = flip.apply(&img, [2, 3, 2], &[0.0, 0.0], &mut rng);
        assert_eq!(&out[..6], &[4.0, 5.0, 2.0, 3.0, 0.0, 1.0]);
    }

    #[test]
    fn augmentation_is_reproducible_and_keeps_pixels() {
        let images: Tensor<f32> = Tensor::new(vec![2, 4, 4, 1], (0..32).map(|v| v as f32 + 1.0).collect()).unwrap();
        let ds = Dataset::new(images, vec![0, 1], 2, vec![-9.0]).unwrap();
        let policy = AugmentPolicy {
            pad: 1,
            ..AugmentPolicy::default()
        };
        let (a, _) = ds.batch(&[1, 0], Some((&policy, 5, 0))).unwrap();
        let (b, labels) = ds.batch(&[1, 0], Some((&policy, 5, 0))).unwrap();
        assert_eq!(a, b);
        assert_eq!(labels, vec![1, 0]);
        assert!(a.data().iter().all(|&v| v == -9.0 || (1.0..=32.0).contains(&v)));
        let (plain, _) = ds.batch(&[1], None).unwrap();
        assert_eq!(plain.data()[0], 17.0);
    }
}
