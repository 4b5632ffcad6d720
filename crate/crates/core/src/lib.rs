//! Reflection-aware differentiable Gaussian splatting.
//!
//! A scene is a cloud of 3D Gaussians, each carrying two appearance sets: a
//! transmitted one (the physically present surface) and a reflected one
//! (virtual content seen in reflectors), plus a per-primitive reflection
//! confidence. Rendering composites both branches in one sorted traversal and
//! fuses them through the accumulated reflection map:
//!
//! ```text
//! composed = transmitted + reflection_map * reflected
//! ```
//!
//! Every rendered field has an exact analytic adjoint, so the whole pipeline
//! (activation, projection, compositing, fusion, losses) can be optimized with
//! [`optim::Trainer`].
//!
//! The crate is `no_std` (with `alloc`) when built without the `std` feature.
//! File formats, dataset loading and the command line live in the companion
//! `refsplat` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod camera;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod sh;

#[cfg(feature = "oracle")]
pub mod oracle;

pub use camera::{Camera, Splat2D};
pub use error::{Error, Result};
pub use gaussian::{ActivatedGaussian, GaussianCloud, ParamGroup, RawGaussian};
pub use image::Image;
pub use loss::{LossBundle, LossConfig};
pub use optim::{TrainConfig, TrainView, Trainer};
pub use raster::{AccumulationMode, ParamGradients, RenderOutputs, RenderSettings};
