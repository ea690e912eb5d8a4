use alloc::string::String;

use crate::imaging::Label;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An operand has the wrong extent along `axis`.
    #[error("dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A window (kernel) does not fit into the padded input along `axis`.
    #[error("kernel {kernel} does not fit padded input {padded} on {axis}")]
    KernelTooLarge {
        axis: &'static str,
        kernel: usize,
        padded: usize,
    },

    #[error("invalid class label id {0}")]
    InvalidLabel(usize),

    /// Batch normalisation in train mode needs at least two values per channel.
    #[error("batch statistics need at least 2 values per channel, got {0}")]
    SingletonStatistics(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The image cannot hold a single patch.
    #[error("image {width}x{height} is smaller than the {patch}x{patch} patch size")]
    ImageTooSmall {
        width: usize,
        height: usize,
        patch: usize,
    },

    #[error("no images for class {0}")]
    EmptyClass(Label),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at iteration {iteration}: loss is {loss}")]
    Diverged { iteration: u64, loss: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
