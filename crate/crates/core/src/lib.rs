//! Network, inverter and critical-moment models for co-tuning the
//! fault-ride-through controls of grid-following and grid-forming inverters.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); scenario data
//! is stored in `f64`. The aliases below fix the scalar to `f64`.

pub mod error;
pub mod linalg;
pub mod critmoments;
pub mod devices;
pub mod netmodel;
pub mod powerflow;
pub mod scalar;
pub mod scenario;
pub mod synthetic;
pub mod tuning;

pub use error::{Error, Issue, Result};
pub use scalar::{polar, xy, Phasor, Scalar};

pub type Network = netmodel::NetworkModel<f64>;
