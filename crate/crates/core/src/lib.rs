//! Sensor-noise residual classifier for telling computer-generated graphics
//! (CG) apart from natural camera images (NI).
//!
//! This crate is `no_std` (it needs `alloc`). It carries everything that is
//! pure computation: the dense tensor layers with their backward passes, the
//! fixed high-pass filter bank, the five-block network, patch-grid
//! arithmetic, the training step and learning-rate policy, majority voting,
//! the checkpoint codec and a synthetic PRNU dataset generator. File and
//! image IO, manifests on disk and the command line live in the `cgni`
//! companion crate.
//!
//! Enable the `parallel` feature to spread per-sample work over a rayon
//! pool. Reductions always run in sample order, so results do not depend on
//! the thread count.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
mod par;

pub mod filters;
pub mod imaging;
pub mod inference;
pub mod model;
pub mod ops;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use filters::{FilterKernel, FilterName, HpfSelector};
pub use imaging::{GrayImage, ImageEntry, Label, Manifest, PatchRecord, PatchSpec, RgbImage, Split};
pub use inference::{majority_vote, ImageVerdict};
pub use model::{ModelCheckpoint, ModelConfig, Network};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
pub use training::{lr_schedule, TrainConfig, Trainer};
