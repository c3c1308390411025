//! Numerical core for reconstructing CT volumes from a pair of orthogonal
//! radiographs with a conditional denoising diffusion model.
//!
//! Everything here is pure computation over in-memory arrays and builds
//! without the standard library (`--no-default-features`); file formats,
//! dataset management and the command line live in the `diff2ct` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod baseline;
pub mod denoiser;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod phantom;
pub mod projector;
pub mod real;
pub mod rng;
pub mod schedule;
pub mod training;
mod unet;
pub mod volume;

pub use error::{Error, Result};
pub use grid::{AxisTag, Grid3, Image2D};
pub use params::{ParamId, ParameterSet};
pub use real::Real;
pub use volume::{ValueSpace, Volume};
