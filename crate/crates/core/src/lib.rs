//! Dual-camera all-in-focus radiance fields.
//!
//! The crate covers the full desk-scale pipeline: synthetic dual-camera
//! dataset generation, spatial/photometric alignment of the camera pair,
//! training of two radiance fields plus a learnable thin-lens defocus model
//! and a blending-weight head, and all-in-focus / depth-of-field rendering.
//!
//! Modules map onto pipeline layers:
//!
//! - [`autodiff`]: tape-based reverse-mode differentiation, MLPs, Adam.
//! - [`imaging`]: image containers, gamma, PSNR/SSIM, histogram matching,
//!   multi-focus fusion, PNG/PFM I/O.
//! - [`align`]: feature matching, RANSAC homography, pyramidal
//!   Lucas-Kanade flow, forward-backward confidence, pair alignment.
//! - [`radiance`]: cameras, rays, positional encoding, radiance fields,
//!   volume rendering of color and disparity.
//! - [`bokeh`]: circle-of-confusion radius, smooth scatter kernel,
//!   differentiable bokeh rendering, defocus maps.
//! - [`fusion`]: fused dual-field volume rendering, the three training
//!   stages, all-in-focus inference, refocusing and split diopter.
//! - [`scenegen`]: the synthetic plane-stack scene generator and dataset
//!   emitter with exact ground truth.

pub mod align;
pub mod autodiff;
pub mod bokeh;
pub mod error;
pub mod fusion;
pub mod imaging;
pub mod radiance;
pub mod rng;
pub mod scenegen;

pub use error::{Error, Result};
pub use rng::Rng;
