//! Dense numerical building blocks.

mod adam;
pub mod gradcheck;
mod linear;
mod loss;
mod matrix;

pub use adam::{AdamConfig, AdamState};
pub use linear::{kept_inputs, random_mask, Linear, LinearGrads};
pub use loss::{argmax_rows, softmax_xent};
pub use matrix::{axpy, dot, Matrix};
