//! Parallel-beam tomography: forward operator, adjoint, filtered
//! backprojection and the additive Gaussian measurement model.
//!
//! All operator math runs in `f64`.

mod fbp;
mod geometry;
mod project;
mod sinogram;

pub use fbp::{fbp_reconstruct, FilterKind};
pub use geometry::{default_detector_bins, uniform_angles, ProjectionGeometry};
pub use project::{back_project, forward_project, operator_norm_sq};
pub use sinogram::{add_noise, Sinogram};
