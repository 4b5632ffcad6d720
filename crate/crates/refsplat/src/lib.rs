//! File formats, datasets, evaluation and the command line for
//! reflection-aware Gaussian splatting built on [`refsplat_core`].

pub mod checkpoint;
pub mod cli;
pub mod colmap;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod imageio;
pub mod ply;
pub mod synth;

pub use error::{Error, Result};
