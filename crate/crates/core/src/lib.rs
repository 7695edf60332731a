pub mod cli;
pub mod error;
pub mod forward;
pub mod gaussian;
pub mod inference;
pub mod infoop;
pub mod io;
pub mod noise;
pub mod phi;
pub mod quadrature;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
