//! Pedestrian counting by dynamic region division.
//!
//! A frame is split into a nearby region, counted from detections, and a
//! distant region, counted by integrating a density map predicted by a small
//! inception-dilated network. The split follows the expected detection row
//! but bends around every detection whose head crosses it.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the common choices.

pub mod density;
pub mod detections;
pub mod division;
mod error;
pub mod fusion;
pub mod idcnn;
pub mod raster;
mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::{round_half_up, Scalar};

pub type DensityMap32 = density::DensityMap<f32>;
pub type DensityMap64 = density::DensityMap<f64>;
pub type Tensor32 = idcnn::Tensor<f32>;
pub type Tensor64 = idcnn::Tensor<f64>;
pub type Network32 = idcnn::Network<f32>;
pub type Network64 = idcnn::Network<f64>;
pub type TrainState32 = idcnn::TrainState<f32>;
pub type TrainState64 = idcnn::TrainState<f64>;
pub type PerspectiveModel32 = density::PerspectiveModel<f32>;
pub type PerspectiveModel64 = density::PerspectiveModel<f64>;
