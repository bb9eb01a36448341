//! Online dynamic Gaussian splatting with learnable per-view residual maps.
//!
//! The crate is organized by stage:
//!
//! * [`scene`]: Gaussian parameters, activations, spherical harmonics.
//! * [`renderer`]: differentiable forward and backward splatting.
//! * [`optimize`]: losses with analytic gradients, Adam, schedules.
//! * [`stream`]: first-frame and sequential training, densification,
//!   spawning and residual-map bookkeeping.
//! * [`synth`]: synthetic dynamic multi-view fixtures and noise injection.
//! * [`metrics`]: PSNR, SSIM, masked temporal variation, spatiotemporal slices.
//! * [`io`]: PPM/PGM images, rig files and binary checkpoints.

pub mod error;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod metrics;
pub mod optimize;
pub mod renderer;
pub mod scene;
pub mod stream;
pub mod synth;

pub use error::{Error, FormatError, Result};
pub use image::{Image, StaticMask};
