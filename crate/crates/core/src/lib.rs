//! Self-similar solutions of the modified spatially homogeneous Boltzmann
//! equation for Maxwell molecules, computed in Fourier representation.

pub mod config;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod field;
pub mod gain;
pub mod kernel;
pub mod output;
pub mod matrix;
pub mod profile;
pub mod quadrature;
pub mod verify;

pub use error::{Error, Result};
