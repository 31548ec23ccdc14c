//! Parametric projection-based reduced-order models for hysteretic
//! structural dynamics.

pub mod config;
pub mod container;
pub mod cprom;
pub mod cvae;
pub mod ecsw;
pub mod error;
pub mod fom;
pub mod linalg;
pub mod macprom;
pub mod metrics;
pub mod pipeline;
pub mod reduction;
pub mod sampling;

pub use error::{Error, Result};
