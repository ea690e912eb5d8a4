use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ModelConfig, BLOCKS};
use crate::filters::FilterLayer;
use crate::ops::{
    avg_pool2d, avg_pool2d_backward, batch_norm_backward, batch_norm_infer, batch_norm_train,
    conv2d_backward, conv2d_backward_params, conv2d_forward, linear, linear_backward, relu,
    relu_backward, BnCache, BnState, ConvSpec, Mode, PoolSpec,
};
use crate::ops::softmax_probs;
use crate::{Error, Result, Scalar, Shape, Tensor};

/// conv -> batch norm -> ReLU -> average pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: ConvSpec,
    pub pool: PoolSpec,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    pub bn: BnState<T>,
}

/// Filter layer, five conv blocks, fully connected classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    config: ModelConfig,
    filter: FilterLayer<T>,
    blocks: Vec<ConvBlock<T>>,
    fc_weight: Tensor<T>,
    fc_bias: Vec<T>,
}

/// Activations kept by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BlockCache<T> {
    conv_input: Tensor<T>,
    bn: BnCache<T>,
    bn_output: Tensor<T>,
    pool_input: Shape,
}

#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    blocks: Vec<BlockCache<T>>,
    features: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    /// Present in train mode only.
    pub cache: Option<ForwardCache<T>>,
}

/// Gradients of every trainable blob, in [`Network::blob_names`] order.
/// The filter layer is frozen and has no entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub blobs: Vec<Vec<T>>,
}

impl<T: Scalar> Network<T> {
    /// He-initialised network: conv and FC weights ~ N(0, 2 / fan_in),
    /// biases 0, BN scale 1 / shift 0, running mean 0 / var 1. Filter
    /// weights come from the configured kernel bank.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, |fan_in, len| {
            let std = libm::sqrt(2.0 / fan_in as f64);
            (0..len)
                .map(|_| T::from_f64(std * rng.sample::<f64, _>(StandardNormal)))
                .collect()
        })
    }

    pub(crate) fn build(
        config: ModelConfig,
        mut weights: impl FnMut(usize, usize) -> Vec<T>,
    ) -> Result<Self> {
        let plan = config.plan()?;
        let filter = FilterLayer::new(config.selector, &config.kernels())?;
        let blocks = plan
            .blocks
            .iter()
            .map(|(conv, pool, _)| {
                let ws = conv.weight_shape();
                Ok(ConvBlock {
                    conv: *conv,
                    pool: *pool,
                    weight: Tensor::from_vec(ws, weights(ws.sample_len(), ws.len()))?,
                    bias: alloc::vec![T::ZERO; conv.out_channels],
                    bn: BnState::new(conv.out_channels),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let feats = config.channels[BLOCKS - 1];
        let fc_shape = Shape::new(config.num_classes, feats, 1, 1);
        let fc_weight = Tensor::from_vec(fc_shape, weights(feats, fc_shape.len()))?;
        let fc_bias = alloc::vec![T::ZERO; config.num_classes];
        Ok(Self {
            config,
            filter,
            blocks,
            fc_weight,
            fc_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn filter(&self) -> &FilterLayer<T> {
        &self.filter
    }

    pub fn blocks(&self) -> &[ConvBlock<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ConvBlock<T>] {
        &mut self.blocks
    }

    pub fn fc_weight(&self) -> &Tensor<T> {
        &self.fc_weight
    }

    pub fn fc_bias(&self) -> &[T] {
        &self.fc_bias
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            filter: self.filter.cast(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    conv: b.conv,
                    pool: b.pool,
                    weight: b.weight.cast(),
                    bias: b.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                    bn: b.bn.cast(),
                })
                .collect(),
            fc_weight: self.fc_weight.cast(),
            fc_bias: self.fc_bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Names of the trainable blobs, in gradient / optimizer order.
    pub fn blob_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(4 * BLOCKS + 2);
        for b in 1..=self.blocks.len() {
            for part in ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"] {
                names.push(format!("block{b}.{part}"));
            }
        }
        names.push("fc.weight".into());
        names.push("fc.bias".into());
        names
    }

    pub fn trainable(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(4 * BLOCKS + 2);
        for b in &self.blocks {
            out.extend([b.weight.data(), &b.bias[..], &b.bn.gamma[..], &b.bn.beta[..]]);
        }
        out.push(self.fc_weight.data());
        out.push(&self.fc_bias);
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(4 * BLOCKS + 2);
        for b in &mut self.blocks {
            out.push(b.weight.data_mut());
            out.push(&mut b.bias);
            out.push(&mut b.bn.gamma);
            out.push(&mut b.bn.beta);
        }
        out.push(self.fc_weight.data_mut());
        out.push(&mut self.fc_bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|b| b.len()).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        let expected = Shape::new(s.n, 1, self.config.input_size, self.config.input_size);
        expected.expect_eq(&s)?;
        if s.n == 0 {
            return Err(Error::Empty("batch"));
        }
        Ok(())
    }

    /// Inference-mode logits. Pure: running statistics are read only.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = self.filter.forward(x)?;
        for b in &self.blocks {
            let z = conv2d_forward(&h, &b.weight, Some(&b.bias), &b.conv)?;
            let z = batch_norm_infer(&z, &b.bn)?;
            h = avg_pool2d(&relu(&z), &b.pool)?;
        }
        linear(&h, &self.fc_weight, &self.fc_bias)
    }

    /// Inference-mode class probabilities, `n x classes x 1 x 1`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(softmax_probs(&self.logits(x)?))
    }

    /// Train-mode pass: batch statistics, running statistics updated, and
    /// activations cached for [`backward`](Self::backward).
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut h = self.filter.forward(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let z = conv2d_forward(&h, &b.weight, Some(&b.bias), &b.conv)?;
            let (y, bn) = batch_norm_train(&z, &mut b.bn)?;
            let a = relu(&y);
            let pooled = avg_pool2d(&a, &b.pool)?;
            caches.push(BlockCache {
                conv_input: h,
                bn,
                pool_input: a.shape(),
                bn_output: y,
            });
            h = pooled;
        }
        let logits = linear(&h, &self.fc_weight, &self.fc_bias)?;
        Ok((
            logits,
            ForwardCache {
                blocks: caches,
                features: h,
            },
        ))
    }

    /// Mode-dispatching forward pass returning logits and probabilities.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<ForwardOutput<T>> {
        let (logits, cache) = match mode {
            Mode::Train => {
                let (l, c) = self.forward_train(x)?;
                (l, Some(c))
            }
            Mode::Infer => (self.logits(x)?, None),
        };
        Ok(ForwardOutput {
            probs: softmax_probs(&logits),
            logits,
            cache,
        })
    }

    /// Chain rule from `grad_logits` back to every trainable blob.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.blocks.len() != self.blocks.len() {
            return Err(Error::Dimension {
                axis: "cached blocks",
                expected: self.blocks.len(),
                actual: cache.blocks.len(),
            });
        }
        let fc = linear_backward(&cache.features, &self.fc_weight, grad_logits)?;
        let mut g = fc.input;
        let mut per_block = Vec::with_capacity(self.blocks.len());
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            g = avg_pool2d_backward(c.pool_input, &b.pool, &g)?;
            g = relu_backward(&c.bn_output, &g)?;
            let bn = batch_norm_backward(&g, &c.bn, &b.bn.gamma)?;
            let (gw, gb) = if i == 0 {
                conv2d_backward_params(&c.conv_input, &b.weight, &b.conv, &bn.input)?
            } else {
                let cg = conv2d_backward(&c.conv_input, &b.weight, &b.conv, &bn.input)?;
                g = cg.input;
                (cg.weight, cg.bias)
            };
            per_block.push([gw.into_vec(), gb, bn.gamma, bn.beta]);
        }
        let mut blobs = Vec::with_capacity(4 * per_block.len() + 2);
        for block in per_block.into_iter().rev() {
            blobs.extend(block);
        }
        blobs.push(fc.weight.into_vec());
        blobs.push(fc.bias);
        Ok(Gradients { blobs })
    }
}

impl<T: Scalar> ForwardCache<T> {
    /// Input shape of every block's convolution, followed by the shape of
    /// the features entering the classifier.
    pub fn activation_shapes(&self) -> Vec<Shape> {
        self.blocks
            .iter()
            .map(|b| b.conv_input.shape())
            .chain([self.features.shape()])
            .collect()
    }
}

impl<T: Scalar> Gradients<T> {
    pub fn is_zero(&self) -> bool {
        self.blobs.iter().flatten().all(|v| *v == T::ZERO)
    }
}
