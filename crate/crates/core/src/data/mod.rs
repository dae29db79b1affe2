//! Datasets, loaders, normalization and mini-batching.

mod amat;
mod idx;

pub use amat::{parse_amat, read_amat, write_amat};
pub use idx::{load_mnist_dir, parse_idx, read_idx, write_idx, IdxArray, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// Images `N×C×H×W` with integer labels in `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    /// Set once the images have been standardized.
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        images.dims4("dataset images")?;
        if images.dim0() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.dim0(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::OutOfRange {
                what: "label",
                value: bad,
                bound: num_classes,
            });
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split: Split::Train,
            normalization: None,
        })
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.gather(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Dataset {
        Dataset {
            images: Tensor::zeros(&[1]),
            labels: Vec::new(),
            num_classes: self.num_classes,
            split: self.split,
            normalization: self.normalization,
        }
    }

    /// The first `n` samples (all of them if `n ≥ len`).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(Error::OutOfRange {
                what: "split size",
                value: n,
                bound: self.len() + 1,
            });
        }
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        Ok((self.subset(&head), self.subset(&tail)))
    }

    /// Appends `other`, which must have the same sample shape and classes.
    pub fn concat(mut self, other: &Dataset) -> Result<Dataset> {
        if self.sample_shape() != other.sample_shape()
            || self.num_classes != other.num_classes
            || self.normalization != other.normalization
        {
            return Err(Error::dim("dataset concat", self.images.shape(), other.images.shape()));
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] += other.len();
        let mut data = self.images.into_data();
        data.extend_from_slice(other.images.data());
        self.labels.extend_from_slice(&other.labels);
        self.images = Tensor::new(shape, data)?;
        Ok(self)
    }

    /// Images and labels for one mini-batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.gather(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Per-dataset pixel standardization `(x − mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    /// Mean and population standard deviation over every pixel.
    pub fn fit(data: &Dataset) -> Result<Self> {
        let px = data.images.data();
        if px.is_empty() {
            return Err(Error::ZeroStd);
        }
        let n = px.len() as f64;
        let mean = px.iter().sum::<f64>() / n;
        let var = px.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(Error::ZeroStd);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, images: &Tensor) -> Tensor {
        images.map(|v| (v - self.mean) / self.std)
    }

    /// Standardizes `data` with these constants. Applying to an already
    /// standardized dataset is an error.
    pub fn apply_dataset(&self, data: &Dataset) -> Result<Dataset> {
        if data.normalization.is_some() {
            return Err(Error::Usage("dataset is already standardized".into()));
        }
        Ok(Dataset {
            images: self.apply(&data.images),
            normalization: Some(*self),
            ..data.clone()
        })
    }
}

/// Fits the constants on `train` and applies them to both splits.
pub fn standardize(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    let norm = Normalization::fit(train)?;
    Ok((norm.apply_dataset(train)?, norm.apply_dataset(test)?))
}

/// Shuffled mini-batch indices for one epoch.
///
/// The order depends only on `(seed, epoch)`. A trailing batch of a single
/// sample is folded into the one before it, since batch statistics need at
/// least two samples.
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::substream(seed, epoch as u64).shuffle(&mut order);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Toy 1×28×28 classification data; see [`synth_blobs_shaped`].
pub fn synth_blobs(n: usize, num_classes: usize, seed: u64) -> Result<Dataset> {
    synth_blobs_shaped(n, num_classes, (28, 28), seed)
}

/// `n` images cycling through the classes. The image is cut into a
/// `g×g` grid of cells (`g = ceil(sqrt(K))`, so quadrants for up to four
/// classes); class `c` has cell `c` bright (0.8) on a dark (0.2) background,
/// plus uniform noise in ±0.15.
pub fn synth_blobs_shaped(n: usize, num_classes: usize, (h, w): (usize, usize), seed: u64) -> Result<Dataset> {
    if num_classes < 2 || n < num_classes {
        return Err(Error::Config(format!(
            "synth_blobs needs n ≥ num_classes ≥ 2, got n={n}, num_classes={num_classes}"
        )));
    }
    let g = (1..).find(|g| g * g >= num_classes).unwrap();
    if h < g || w < g {
        return Err(Error::Config(format!("{h}×{w} images cannot hold a {g}×{g} grid")));
    }
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(n * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % num_classes;
        let (cy, cx) = (label / g, label % g);
        for y in 0..h {
            for x in 0..w {
                let lit = y * g / h == cy && x * g / w == cx;
                let base = if lit { 0.8 } else { 0.2 };
                data.push(base + rng.uniform(-0.15, 0.15));
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 1, h, w], data)?, labels, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_gives_zero_mean_unit_std() {
        let ds = synth_blobs_shaped(15, 3, (4, 4), 1).unwrap();
        let (train, test) = ds.split_at(10).unwrap();
        let (z, zt) = standardize(&train, &test).unwrap();
        let again = Normalization::fit(&z).unwrap();
        assert!(again.mean.abs() < 1e-10);
        assert!((again.std - 1.0).abs() < 1e-12);
        // the test split reuses the train constants
        assert_eq!(zt.normalization, z.normalization);
        assert_eq!(zt.images, Normalization::fit(&train).unwrap().apply(&test.images));
        assert!(z.normalization.unwrap().apply_dataset(&z).is_err());
    }

    #[test]
    fn constant_images_cannot_be_standardized() {
        let ds = Dataset::new(Tensor::full(&[2, 1, 2, 2], 0.5), vec![0, 1], 2).unwrap();
        assert!(matches!(Normalization::fit(&ds), Err(Error::ZeroStd)));
    }

    #[test]
    fn batches_cover_every_index_once() {
        let batches = epoch_batches(10, 3, 4, 0);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // 3 + 3 + 3 + 1: the singleton is merged
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 4]);
    }

    #[test]
    fn batch_order_depends_on_seed_and_epoch() {
        assert_eq!(epoch_batches(50, 8, 1, 2), epoch_batches(50, 8, 1, 2));
        assert_ne!(epoch_batches(50, 8, 1, 2), epoch_batches(50, 8, 1, 3));
        assert_ne!(epoch_batches(50, 8, 1, 2), epoch_batches(50, 8, 2, 2));
    }

    #[test]
    fn label_count_mismatch() {
        let err = Dataset::new(Tensor::zeros(&[3, 1, 2, 2]), vec![0, 1], 2).unwrap_err();
        assert!(matches!(err, Error::CountMismatch { images: 3, labels: 2 }));
    }

    #[test]
    fn blobs_light_one_quadrant_per_class() {
        let ds = synth_blobs(10, 2, 4).unwrap();
        assert_eq!(ds.images.shape(), &[10, 1, 28, 28]);
        assert_eq!(ds, synth_blobs(10, 2, 4).unwrap());
        assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mean_over = |s: usize, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>| {
            let img = ds.images.slab(s);
            let (mut t, mut k) = (0.0, 0);
            for y in ys {
                for x in xs.clone() {
                    t += img[y * 28 + x];
                    k += 1;
                }
            }
            t / k as f64
        };
        // class 0 lights the top-left quadrant, class 1 the top-right
        assert!(mean_over(0, 0..14, 0..14) > 0.7 && mean_over(0, 0..14, 14..28) < 0.3);
        assert!(mean_over(1, 0..14, 14..28) > 0.7 && mean_over(1, 0..14, 0..14) < 0.3);
    }

    #[test]
    fn split_and_concat_are_inverse() {
        let ds = synth_blobs_shaped(8, 2, (3, 3), 9).unwrap();
        let (a, b) = ds.split_at(5).unwrap();
        assert_eq!((a.len(), b.len()), (5, 3));
        assert_eq!(a.concat(&b).unwrap(), ds);
        assert!(ds.split_at(9).is_err());
    }
}
