use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng;

/// Labeled samples with row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    batch: Batch,
    classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dataset feature {i}")));
        }
        Ok(Self {
            batch: Batch::new(features, dim, labels)?,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.batch.dim()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        self.batch.labels()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.batch.row(i)
    }

    /// The whole dataset as a single batch.
    pub fn as_batch(&self) -> &Batch {
        &self.batch
    }

    /// Rows at `indices`, in that order, as a batch.
    pub fn gather(&self, indices: &[usize]) -> Result<Batch> {
        self.batch.gather(indices)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            batch: self.gather(indices)?,
            classes: self.classes,
        })
    }

    /// Seeded shuffle, then the last `⌊val_fraction·n⌋` rows become validation.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::InvalidArgument(format!(
                "val_fraction must lie in [0, 1), got {val_fraction}"
            )));
        }
        let n_val = (val_fraction * self.len() as f64).floor() as usize;
        if n_val == 0 || n_val == self.len() {
            return Err(Error::InvalidArgument(format!(
                "split of {} rows with fraction {val_fraction} leaves an empty side",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng::stream(seed));
        let (train, val) = idx.split_at(self.len() - n_val);
        Ok((self.subset(train)?, self.subset(val)?))
    }
}

/// Class centers with unit distance between neighbours.
///
/// With `d ≥ classes` the centers are scaled, seeded-permuted one-hot vectors
/// (a regular simplex). Otherwise they sit on a circle in the first two
/// coordinates (or on a line when `d = 1`) with a seeded phase.
fn blob_centers(d: usize, classes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(rng::derive_seed(seed, "centers"));
    if d >= classes {
        let mut axes: Vec<usize> = (0..d).collect();
        axes.shuffle(&mut rng);
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        (0..classes)
            .map(|c| {
                let mut v = vec![0.0; d];
                v[axes[c]] = scale;
                v
            })
            .collect()
    } else if d >= 2 {
        let radius = 0.5 / (std::f64::consts::PI / classes as f64).sin();
        let phase: f64 = rand::Rng::random_range(&mut rng, 0.0..std::f64::consts::TAU);
        (0..classes)
            .map(|c| {
                let a = phase + std::f64::consts::TAU * c as f64 / classes as f64;
                let mut v = vec![0.0; d];
                v[0] = radius * a.cos();
                v[1] = radius * a.sin();
                v
            })
            .collect()
    } else {
        (0..classes).map(|c| vec![c as f64]).collect()
    }
}

/// Isotropic Gaussian blobs, one per class, balanced to within one sample.
pub fn gen_blobs(n: usize, d: usize, classes: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || d == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "blobs need classes >= 2, d >= 1, n >= 1 (got n={n}, d={d}, classes={classes})"
        )));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spread must be >= 0, got {spread}"
        )));
    }
    let centers = blob_centers(d, classes, seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut rng = rng::stream(rng::derive_seed(seed, "points"));
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * d);
    for &label in &labels {
        for &c in &centers[label] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(c + spread * z);
        }
    }
    Dataset::new(features, d, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_classes() {
        let ds = gen_blobs(300, 4, 3, 0.5, 1).unwrap();
        let mut counts = [0; 3];
        for &l in ds.labels() {
            counts[l] += 1;
        }
        assert_eq!(counts, [100, 100, 100]);
        let ds = gen_blobs(301, 2, 3, 0.5, 1).unwrap();
        let mut counts = [0; 3];
        for &l in ds.labels() {
            counts[l] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn zero_spread_is_perfectly_separable_by_nearest_neighbour() {
        for d in [1, 2, 5] {
            let ds = gen_blobs(60, d, 4, 0.0, 7).unwrap();
            let mut correct = 0;
            for i in 0..ds.len() {
                let nearest = (0..ds.len())
                    .filter(|&j| j != i)
                    .min_by(|&a, &b| {
                        let da: f64 = ds
                            .row(a)
                            .iter()
                            .zip(ds.row(i))
                            .map(|(x, y)| (x - y).powi(2))
                            .sum();
                        let db: f64 = ds
                            .row(b)
                            .iter()
                            .zip(ds.row(i))
                            .map(|(x, y)| (x - y).powi(2))
                            .sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                correct += usize::from(ds.labels()[nearest] == ds.labels()[i]);
            }
            assert_eq!(correct, ds.len(), "d={d}");
        }
    }

    #[test]
    fn same_seed_same_data() {
        let a = gen_blobs(50, 3, 3, 1.0, 5).unwrap();
        let b = gen_blobs(50, 3, 3, 1.0, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_blobs(50, 3, 3, 1.0, 6).unwrap());
    }

    #[test]
    fn rejects_invalid_sizes() {
        assert!(gen_blobs(10, 2, 1, 1.0, 0).is_err());
        assert!(gen_blobs(10, 0, 2, 1.0, 0).is_err());
        assert!(gen_blobs(0, 2, 2, 1.0, 0).is_err());
        assert!(gen_blobs(10, 2, 2, -1.0, 0).is_err());
    }

    #[test]
    fn split_partitions_rows() {
        let ds = gen_blobs(100, 2, 2, 1.0, 3).unwrap();
        let (train, val) = ds.split(0.2, 9).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));
        assert!(ds.split(0.0, 9).is_err());
    }
}
