//! MNIST ingestion, permutedMNIST tasks and batching.

mod dataset;
pub mod idx;
mod tasks;

pub use dataset::{
    Batches, Dataset, MnistPaths, Normalization, MNIST_CLASSES, MNIST_MEAN, MNIST_PIXELS, MNIST_STD,
};
pub use idx::{parse_idx, read_idx_file, write_idx, IdxTensor};
pub use tasks::{invert_permutation, task_permutation, TaskStream, PERMUTATION_GENERATOR};
