use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Name of the permutation generator, echoed into configs.
pub const PERMUTATION_GENERATOR: &str = "chacha8-stream-task-fisher-yates";

/// Pixel permutation of task `task`: the identity for task 0, otherwise a
/// Fisher–Yates shuffle driven by ChaCha8 seeded with `seed` on stream `task`.
pub fn task_permutation(seed: u64, task: usize, len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    if task == 0 {
        return perm;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task as u64);
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// The permutedMNIST task sequence over shared base datasets.
#[derive(Debug, Clone)]
pub struct TaskStream<T> {
    train: Dataset<T>,
    test: Dataset<T>,
    permutations: Vec<Vec<usize>>,
    seed: u64,
}

impl<T: Scalar> TaskStream<T> {
    pub fn new(train: Dataset<T>, test: Dataset<T>, tasks: usize, seed: u64) -> Result<Self> {
        if train.dim() != test.dim() {
            return Err(Error::shape("TaskStream", train.dim(), test.dim()));
        }
        let dim = train.dim();
        let permutations = (0..tasks).map(|t| task_permutation(seed, t, dim)).collect();
        Ok(TaskStream {
            train,
            test,
            permutations,
            seed,
        })
    }

    pub fn tasks(&self) -> usize {
        self.permutations.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.train.dim()
    }

    pub fn permutation(&self, task: usize) -> Result<&[usize]> {
        self.permutations
            .get(task)
            .map(Vec::as_slice)
            .ok_or_else(|| self.range_error(task))
    }

    pub fn base_train(&self) -> &Dataset<T> {
        &self.train
    }

    pub fn base_test(&self) -> &Dataset<T> {
        &self.test
    }

    fn range_error(&self, task: usize) -> Error {
        Error::OutOfRange {
            what: "task index",
            value: task.to_string(),
            range: format!("[0, {})", self.tasks()),
        }
    }

    /// `(train, test)` of task `task`.
    pub fn make_task(&self, task: usize) -> Result<(Dataset<T>, Dataset<T>)> {
        Ok((self.train_set(task)?, self.test_set(task)?))
    }

    pub fn train_set(&self, task: usize) -> Result<Dataset<T>> {
        let perm = self.permutation(task)?;
        Ok(if task == 0 {
            self.train.clone()
        } else {
            self.train.permuted(perm)
        })
    }

    pub fn test_set(&self, task: usize) -> Result<Dataset<T>> {
        let perm = self.permutation(task)?;
        Ok(if task == 0 {
            self.test.clone()
        } else {
            self.test.permuted(perm)
        })
    }
}
