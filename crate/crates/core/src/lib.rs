pub mod asymptotic;
pub mod error;
pub mod fd;
pub mod gauss;
pub mod grid;
pub mod kernel;
pub mod params;
pub mod payoffs;
pub mod pricing;
pub mod registry;
pub mod series;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
