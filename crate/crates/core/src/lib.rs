pub mod analysis;
pub mod context;
pub mod data;
pub mod dendrites;
pub mod error;
pub mod harness;
pub mod model;
pub mod nn;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix32 = nn::Matrix<f32>;
pub type Matrix64 = nn::Matrix<f64>;
pub type Layer32 = dendrites::ActiveDendritesLayer<f32>;
pub type Layer64 = dendrites::ActiveDendritesLayer<f64>;
pub type Network32 = model::Network<f32>;
pub type Network64 = model::Network<f64>;
