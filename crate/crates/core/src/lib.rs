//! Learned-filter tomographic reconstruction.
//!
//! A small network whose hidden layer consists of FBP filters is trained
//! from one noisy parallel-beam scan by splitting the projection angles into
//! subsets and regressing one subset's reconstruction onto the others'.
//! Once trained, arbitrary slices are reconstructed by filtering the full
//! scan once with the learned filters and backprojecting per slice.

pub mod error;
pub mod experiments;
pub mod fbp;
pub mod filters;
pub mod geometry;
pub mod io;
pub mod methods;
pub mod metrics;
pub mod mlp;
pub mod noise2filter;
pub mod phantom;
pub mod projector;

pub use error::{Error, Result};
