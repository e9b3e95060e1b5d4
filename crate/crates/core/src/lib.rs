//! One-shot learning of PDE solution operators.
//!
//! A small network learns the local (stencil-scale) solution map of a PDE
//! from a single global solution; solutions for new forcings are then found
//! by fixed-point iteration over the grid or by training a coordinate
//! network that is a fixed point of the learned local map.

pub mod error;
pub mod experiment;
pub mod fpi;
pub mod grf;
pub mod grid;
pub mod local_operator;
pub mod loinn;
pub mod metrics;
pub mod neural;
pub mod solvers;

pub use error::{Error, Result};
