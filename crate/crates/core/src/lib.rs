//! Sparse-view fan-beam CT reconstruction with plug-and-play diffusion priors.
//!
//! The crate is organised bottom-up:
//!
//! - [`phantom`]: parametric ellipse phantoms, perturbation and dataset sampling.
//! - [`geometry`]: fan-beam scanner model, Siddon projector pair and the
//!   forward-model mismatch injector.
//! - [`solvers`]: conjugate gradient, CGLS and the proximal data-consistency step.
//! - [`schedules`]: noise schedules, reduced timestep plans and likelihood-weight ramps.
//! - [`prior`]: the denoiser interface and its reference implementations.
//! - [`sampler`]: Tweedie estimation, DDIM stepping and the decomposed sampling loop.
//! - [`metrics`]: PSNR, SSIM, line profiles and seed ensembles.
//! - [`io`]: portable binary image/sinogram files.

pub mod error;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod prior;
pub mod sampler;
pub mod schedules;
pub mod seed;
pub mod solvers;

pub use error::{CtError, Result};
pub use geometry::{FanBeamGeometry, MismatchConfig, Projector, Sinogram, Span};
pub use grid::ImageGrid;
