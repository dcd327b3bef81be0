//! Light scattering and amplification in cold atomic gases.

pub mod angular;
pub mod cli;
pub mod error;
pub mod mcscatter;
pub mod medium;
pub mod microdipole;
pub mod propagation;
pub mod protocols;
pub mod quadrature;
pub mod transport;

pub use error::{Error, Result};
