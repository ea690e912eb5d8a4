//! The five-block network: configuration and shape planning, parameters,
//! forward/backward passes and the checkpoint codec.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{ModelCheckpoint, FORMAT_VERSION, MAGIC};
pub use config::{block_pool, LayerShape, ModelConfig, BLOCKS};
pub use network::{BlockCache, ConvBlock, ForwardCache, ForwardOutput, Gradients, Network};
