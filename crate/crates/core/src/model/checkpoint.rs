//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "CGNI" | version: u16 | header_len: u32 | header (UTF-8 key=value lines)
//!        | f32 blobs in header `blob=` order
//! ```
//!
//! The header carries the architecture, training counters and the name and
//! length of every blob. Loading rebuilds the expected blob list from the
//! architecture and refuses anything that does not match it exactly.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use super::config::{ModelConfig, BLOCKS};
use super::network::Network;
use crate::filters::{FilterKernel, HpfSelector};
use crate::ops::BnState;
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 4] = b"CGNI";
pub const FORMAT_VERSION: u16 = 1;

/// A network plus the counters needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub network: Network<f32>,
    /// Completed epochs.
    pub epoch: u32,
    pub seed: u64,
    /// SGD iterations performed; drives the learning-rate policy.
    pub iteration: u64,
    /// Momentum buffers in trainable-blob order, when saved for resuming.
    pub velocity: Option<Vec<Vec<f32>>>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn list(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn blob_layout(net: &Network<f32>, with_velocity: bool) -> Vec<(String, usize)> {
    let mut blobs = Vec::new();
    for (i, b) in net.blocks().iter().enumerate() {
        let n = i + 1;
        let c = b.bias.len();
        blobs.push((format!("block{n}.conv.weight"), b.weight.len()));
        blobs.push((format!("block{n}.conv.bias"), c));
        blobs.push((format!("block{n}.bn.gamma"), c));
        blobs.push((format!("block{n}.bn.beta"), c));
        blobs.push((format!("block{n}.bn.running_mean"), c));
        blobs.push((format!("block{n}.bn.running_var"), c));
    }
    blobs.push(("fc.weight".into(), net.fc_weight().len()));
    blobs.push(("fc.bias".into(), net.fc_bias().len()));
    if with_velocity {
        for (name, blob) in net.blob_names().into_iter().zip(net.trainable()) {
            blobs.push((format!("velocity.{name}"), blob.len()));
        }
    }
    blobs
}

impl ModelCheckpoint {
    pub fn new(network: Network<f32>, epoch: u32, seed: u64, iteration: u64) -> Self {
        Self {
            network,
            epoch,
            seed,
            iteration,
            velocity: None,
        }
    }

    fn header(&self) -> String {
        let net = &self.network;
        let cfg = net.config();
        let bn = &net.blocks()[0].bn;
        let mut h = String::new();
        let _ = writeln!(h, "hpf={}", cfg.selector.count());
        let _ = writeln!(h, "input_size={}", cfg.input_size);
        let _ = writeln!(h, "conv_kernels={}", list(&cfg.conv_kernels));
        let _ = writeln!(h, "channels={}", list(&cfg.channels));
        let _ = writeln!(h, "pool_kernel={}", cfg.pool_kernel);
        let _ = writeln!(h, "pool_stride={}", cfg.pool_stride);
        let _ = writeln!(h, "pool_include_pad={}", cfg.pool_include_pad);
        let _ = writeln!(h, "num_classes={}", cfg.num_classes);
        if let Some(kernels) = &cfg.custom_kernels {
            for k in kernels {
                let _ = writeln!(h, "stencil={}", k.to_spec_string());
            }
        }
        let _ = writeln!(h, "bn_eps={:?}", bn.eps);
        let _ = writeln!(h, "bn_momentum={:?}", bn.stat_momentum);
        let _ = writeln!(h, "epoch={}", self.epoch);
        let _ = writeln!(h, "seed={}", self.seed);
        let _ = writeln!(h, "iteration={}", self.iteration);
        for (name, len) in blob_layout(net, self.velocity.is_some()) {
            let _ = writeln!(h, "blob={name}:{len}");
        }
        h
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        let mut put = |vals: &[f32]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        let net = &self.network;
        for b in net.blocks() {
            put(b.weight.data());
            put(&b.bias);
            put(&b.bn.gamma);
            put(&b.bn.beta);
            put(&b.bn.running_mean);
            put(&b.bn.running_var);
        }
        put(net.fc_weight().data());
        put(net.fc_bias());
        if let Some(vel) = &self.velocity {
            for v in vel {
                put(v);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let header_len = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
        let body = &bytes[10..];
        if body.len() < header_len {
            return Err(corrupt("truncated header"));
        }
        let header =
            core::str::from_utf8(&body[..header_len]).map_err(|_| corrupt("header is not UTF-8"))?;
        let parsed = Header::parse(header)?;

        let mut network = Network::<f32>::build(parsed.config.clone(), |_, len| {
            alloc::vec![0.0; len]
        })
        .map_err(|e| corrupt(format!("{e}")))?;
        let with_velocity = parsed.blobs.iter().any(|(n, _)| n.starts_with("velocity."));
        let expected = blob_layout(&network, with_velocity);
        if parsed.blobs != expected {
            return Err(corrupt("blob list does not match the architecture"));
        }

        let payload = &body[header_len..];
        let total: usize = expected.iter().map(|(_, l)| l).sum();
        if payload.len() != total * 4 {
            return Err(corrupt(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                total * 4
            )));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut take = |dst: &mut [f32]| {
            for (d, v) in dst.iter_mut().zip(&mut floats) {
                *d = v;
            }
        };
        for b in network.blocks_mut() {
            take(b.weight.data_mut());
            take(&mut b.bias);
            take(&mut b.bn.gamma);
            take(&mut b.bn.beta);
            take(&mut b.bn.running_mean);
            take(&mut b.bn.running_var);
            b.bn.eps = parsed.bn_eps;
            b.bn.stat_momentum = parsed.bn_momentum;
            if b.bn.running_var.iter().any(|v| *v < 0.0) {
                return Err(corrupt("negative running variance"));
            }
        }
        for blob in network.trainable_mut().into_iter().skip(4 * BLOCKS) {
            take(blob);
        }
        let velocity = with_velocity.then(|| {
            network
                .trainable()
                .iter()
                .map(|b| {
                    let mut v = alloc::vec![0.0f32; b.len()];
                    take(&mut v);
                    v
                })
                .collect()
        });
        Ok(Self {
            network,
            epoch: parsed.epoch,
            seed: parsed.seed,
            iteration: parsed.iteration,
            velocity,
        })
    }
}

struct Header {
    config: ModelConfig,
    bn_eps: f64,
    bn_momentum: f64,
    epoch: u32,
    seed: u64,
    iteration: u64,
    blobs: Vec<(String, usize)>,
}

fn num<V: core::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| corrupt(format!("bad value for {key}: `{v}`")))
}

fn five(key: &str, v: &str) -> Result<[usize; BLOCKS]> {
    let vals = v
        .split(',')
        .map(|p| num::<usize>(key, p))
        .collect::<Result<Vec<_>>>()?;
    vals.try_into()
        .map_err(|_| corrupt(format!("{key} needs {BLOCKS} values")))
}

impl Header {
    fn parse(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::canonical(HpfSelector::Hpf3);
        let mut stencils = Vec::new();
        let mut seen = Vec::new();
        let mut h = Header {
            config: cfg.clone(),
            bn_eps: BnState::<f32>::DEFAULT_EPS,
            bn_momentum: BnState::<f32>::DEFAULT_MOMENTUM,
            epoch: 0,
            seed: 0,
            iteration: 0,
            blobs: Vec::new(),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("malformed header line `{line}`")))?;
            if key != "blob" && key != "stencil" {
                if seen.contains(&key) {
                    return Err(corrupt(format!("duplicate key {key}")));
                }
                seen.push(key);
            }
            match key {
                "hpf" => {
                    cfg.selector = HpfSelector::from_count(num(key, value)?)
                        .ok_or_else(|| corrupt(format!("bad hpf `{value}`")))?
                }
                "input_size" => cfg.input_size = num(key, value)?,
                "conv_kernels" => cfg.conv_kernels = five(key, value)?,
                "channels" => cfg.channels = five(key, value)?,
                "pool_kernel" => cfg.pool_kernel = num(key, value)?,
                "pool_stride" => cfg.pool_stride = num(key, value)?,
                "pool_include_pad" => cfg.pool_include_pad = num(key, value)?,
                "num_classes" => cfg.num_classes = num(key, value)?,
                "stencil" => stencils.push(
                    FilterKernel::parse_spec(value).map_err(|e| corrupt(format!("{e}")))?,
                ),
                "bn_eps" => h.bn_eps = num(key, value)?,
                "bn_momentum" => h.bn_momentum = num(key, value)?,
                "epoch" => h.epoch = num(key, value)?,
                "seed" => h.seed = num(key, value)?,
                "iteration" => h.iteration = num(key, value)?,
                "blob" => {
                    let (name, len) = value
                        .rsplit_once(':')
                        .ok_or_else(|| corrupt(format!("bad blob entry `{value}`")))?;
                    h.blobs.push((name.into(), num(key, len)?));
                }
                _ => return Err(corrupt(format!("unknown header key `{key}`"))),
            }
        }
        for required in ["hpf", "input_size", "conv_kernels", "channels", "epoch", "iteration"] {
            if !seen.contains(&required) {
                return Err(corrupt(format!("missing header key {required}")));
            }
        }
        if !(h.bn_eps > 0.0) {
            return Err(corrupt("bn_eps must be positive"));
        }
        if !stencils.is_empty() {
            cfg.custom_kernels = Some(stencils);
        }
        cfg.validate().map_err(|e| corrupt(format!("{e}")))?;
        h.config = cfg;
        Ok(h)
    }
}

impl<T: Scalar> Network<T> {
    /// Snapshot as an `f32` checkpoint with the given counters.
    pub fn to_checkpoint(&self, epoch: u32, seed: u64, iteration: u64) -> ModelCheckpoint {
        ModelCheckpoint::new(self.cast(), epoch, seed, iteration)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        let net = Network::<f32>::new(ModelConfig::with_input_size(HpfSelector::Hpf3, 32), 4).unwrap();
        ModelCheckpoint::new(net, 50, 4, 1234)
    }

    #[test]
    fn round_trip_is_lossless() {
        let ck = sample();
        assert_eq!(ModelCheckpoint::decode(&ck.encode()).unwrap(), ck);
        let mut with_vel = ck.clone();
        with_vel.velocity = Some(ck.network.trainable().iter().map(|b| b.to_vec()).collect());
        assert_eq!(ModelCheckpoint::decode(&with_vel.encode()).unwrap(), with_vel);
    }

    #[test]
    fn records_epoch() {
        let ck = ModelCheckpoint::decode(&sample().encode()).unwrap();
        assert_eq!((ck.epoch, ck.iteration), (50, 1234));
    }

    #[test]
    fn custom_stencils_survive() {
        let mut cfg = ModelConfig::with_input_size(HpfSelector::Hpf1, 32);
        let mut k = FilterKernel::SQUARE3X3;
        k.normalizer = 8;
        cfg.custom_kernels = Some(alloc::vec![k]);
        let ck = ModelCheckpoint::new(Network::new(cfg, 1).unwrap(), 1, 1, 1);
        assert_eq!(ModelCheckpoint::decode(&ck.encode()).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().encode();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(ModelCheckpoint::decode(&bad_magic).is_err());

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(ModelCheckpoint::decode(&bad_version).is_err());

        let mut bad_header = bytes.clone();
        let pos = bytes.windows(8).position(|w| w == b"channels").unwrap();
        bad_header[pos + 9] = b'9';
        assert!(ModelCheckpoint::decode(&bad_header).is_err());

        assert!(ModelCheckpoint::decode(&bytes[..bytes.len() - 4]).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(ModelCheckpoint::decode(&extra).is_err());
    }
}
