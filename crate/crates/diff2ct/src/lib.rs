//! File formats, dataset generation, training and evaluation drivers, and the
//! `diff2ct` command-line tool, built on [`diff2ct_core`].

pub mod checkpoint;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod format;
pub mod manifest;
pub mod parallel;
pub mod sample;
pub mod train;

pub use error::{Error, FormatError, Result};
