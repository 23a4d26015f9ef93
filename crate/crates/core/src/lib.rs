//! Spectral analysis of convolutional Gaussian-process and neural tangent
//! kernels on products of spheres.

pub mod dual;
pub mod error;
pub mod hierarchy;
pub mod kernel;
pub mod multisphere;
pub mod netlab;
pub mod orthopoly;
pub mod series;
pub mod spectrum;

pub use error::{Error, Result};
