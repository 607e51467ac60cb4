pub mod error;
pub mod grid;
pub mod rng;
pub mod tomo;

pub use error::{Error, Result};
pub use grid::{GridImage, GridVolume};
pub mod metrics;
pub mod phantoms;
pub mod degrade;
pub mod nn;
pub mod diffusion;
pub mod solver;
pub mod xmodal;
pub mod io;
pub mod harness;
