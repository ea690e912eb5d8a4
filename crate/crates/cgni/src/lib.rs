//! Files, datasets, training runs and reports around `cgni-core`.

mod error;

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod io;
pub mod manifest;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
