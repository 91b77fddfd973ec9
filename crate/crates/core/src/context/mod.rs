//! Context vectors: one-hot task IDs, task prototypes, and online clustering.

mod eigen;
mod hotelling;
mod stats;
mod store;

use serde::{Deserialize, Serialize};

pub use hotelling::{
    hotelling, hotelling_match, HotellingResult, DEFAULT_P_THRESHOLD, EIGEN_RTOL, NULL_SPACE_RTOL,
};
pub use stats::Prototype;
pub use store::{Assignment, PrototypeStore};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// Where training contexts come from. Evaluation with prototypes always
/// uses nearest-prototype inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    /// `e_τ` of length T.
    Onehot,
    /// Mean of task τ's training inputs.
    PrototypeGiven,
    /// Online clustering of training batches without task labels.
    PrototypeInferred,
}

/// `e_task` of length `tasks`.
pub fn onehot_context<T: Scalar>(task: usize, tasks: usize) -> Result<Vec<T>> {
    if task >= tasks {
        return Err(Error::OutOfRange {
            what: "task id",
            value: task.to_string(),
            range: format!("[0, {tasks})"),
        });
    }
    let mut v = vec![T::zero(); tasks];
    v[task] = T::one();
    Ok(v)
}

/// Prototype of one task's training samples.
pub fn build_prototype_given<T: Scalar>(
    samples: &Matrix<T>,
    covariance: bool,
) -> Result<Prototype> {
    Prototype::from_samples(samples, covariance)
}
