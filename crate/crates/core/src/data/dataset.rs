use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::idx::{read_idx_file, IdxTensor};
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

pub const MNIST_PIXELS: usize = 784;
pub const MNIST_CLASSES: usize = 10;
/// Pixel mean and standard deviation of the MNIST training set on the `[0, 1]` scale.
pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

/// Transform applied to `[0, 1]` pixels before training; prototypes are built
/// from the transformed inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Pixels stay in `[0, 1]`.
    #[default]
    Unit,
    /// `(x − mean) / std` with the MNIST training statistics.
    Standardize,
}

/// Images as rows, with their labels. Loaded images are scaled into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub images: Matrix<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Matrix<T>, labels: Vec<u8>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::shape("Dataset", images.rows(), labels.len()));
        }
        Ok(Dataset { images, labels })
    }

    /// Pairs an image tensor `[n × h × w]` with a label tensor `[n]`, scaling pixels by 1/255.
    pub fn from_idx(images: &IdxTensor, labels: &IdxTensor) -> Result<Self> {
        if images.dims.len() != 3 || labels.dims.len() != 1 {
            return Err(Error::Idx(
                "expected a 3-D image tensor and a 1-D label tensor".into(),
            ));
        }
        let (n, width) = (images.items(), images.item_len());
        if labels.items() != n {
            return Err(Error::Idx(format!(
                "{n} images but {} labels",
                labels.items()
            )));
        }
        let scale = T::of(1.0 / 255.0);
        let data = images
            .data
            .iter()
            .map(|&b| T::of(b as f64) * scale)
            .collect();
        Dataset::new(Matrix::from_vec(n, width, data)?, labels.data.clone())
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self> {
        Self::from_idx(&read_idx_file(images)?, &read_idx_file(labels)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Dataset {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// `n` distinct rows chosen with a seeded generator, in ascending index order.
    pub fn subsample(&self, n: usize, seed: u64) -> Self {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.select(&idx)
    }

    /// Column `i` of the result is column `perm[i]` of the input.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Dataset {
            images: self.images.select_cols(perm),
            labels: self.labels.clone(),
        }
    }

    /// Mini-batches in an order shuffled by `seed`; the last batch may be short.
    pub fn batches(&self, batch_size: usize, seed: u64) -> Batches<'_, T> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Batches {
            data: self,
            order,
            batch_size: batch_size.max(1),
            pos: 0,
        }
    }

    pub fn normalized(&self, n: Normalization) -> Self {
        match n {
            Normalization::Unit => self.clone(),
            Normalization::Standardize => {
                let (mean, inv) = (T::of(MNIST_MEAN), T::of(1.0 / MNIST_STD));
                Dataset {
                    images: self.images.map(|v| (v - mean) * inv),
                    labels: self.labels.clone(),
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
        }
    }
}

pub struct Batches<'a, T> {
    data: &'a Dataset<T>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<T: Scalar> Batches<'_, T> {
    /// Sample indices of every batch, in order.
    pub fn indices(&self) -> Vec<Vec<usize>> {
        self.order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

impl<T: Scalar> Iterator for Batches<'_, T> {
    type Item = Dataset<T>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.data.select(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Locations of the four MNIST files inside a directory; `.gz` variants are
/// used when the plain file is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl MnistPaths {
    pub const FILES: [&'static str; 4] = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ];

    pub fn in_dir(dir: &Path) -> Self {
        let pick = |name: &str| {
            let plain = dir.join(name);
            let gz = dir.join(format!("{name}.gz"));
            if !plain.exists() && gz.exists() {
                gz
            } else {
                plain
            }
        };
        MnistPaths {
            train_images: pick(Self::FILES[0]),
            train_labels: pick(Self::FILES[1]),
            test_images: pick(Self::FILES[2]),
            test_labels: pick(Self::FILES[3]),
        }
    }

    pub fn exist(&self) -> bool {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
        .iter()
        .all(|p| p.exists())
    }

    /// `(train, test)`.
    pub fn load<T: Scalar>(&self) -> Result<(Dataset<T>, Dataset<T>)> {
        Ok((
            Dataset::load(&self.train_images, &self.train_labels)?,
            Dataset::load(&self.test_images, &self.test_labels)?,
        ))
    }
}
