//! Learning-rate policy, epoch batching and the SGD training step.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::imaging::{Label, PatchRecord, PatchSet};
use crate::ops::{argmax_rows, sgd_update, softmax_cross_entropy, SgdState};
use crate::{Error, Network, Result, Scalar, Tensor};

/// SGD hyper-parameters and the epoch schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// `inv` policy: `lr = base_lr * (1 + gamma * iter)^(-power)`.
    pub lr_gamma: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: u32,
    /// Epochs after which a checkpoint is written.
    pub checkpoint_epochs: Vec<u32>,
    pub seed: u64,
    /// Reshuffle the patch order every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.001,
            lr_gamma: 0.0001,
            lr_power: 0.75,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 64,
            epochs: 80,
            checkpoint_epochs: alloc::vec![50, 80],
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if let Some(e) = self
            .checkpoint_epochs
            .iter()
            .find(|&&e| e == 0 || e > self.epochs)
        {
            return bad(alloc::format!(
                "checkpoint epoch {e} outside 1..={}",
                self.epochs
            ));
        }
        if !(self.base_lr > 0.0) || self.lr_gamma < 0.0 || self.lr_power < 0.0 {
            return bad("learning-rate policy parameters out of range".into());
        }
        Ok(())
    }
}

/// `base_lr * (1 + gamma * iter)^(-power)`.
pub fn lr_schedule(iter: u64, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * libm::pow(1.0 + cfg.lr_gamma * iter as f64, -cfg.lr_power)
}

/// Patch visiting order for `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_order(len: usize, epoch: u32, seed: u64, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// Splits one epoch into index batches. The short final batch is kept,
/// unless it holds a single patch: batch statistics need two values, so
/// that one is dropped.
pub fn make_batches(
    len: usize,
    batch_size: usize,
    epoch: u32,
    seed: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::Empty("patch stream"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let order = epoch_order(len, epoch, seed, shuffle);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batch_size > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        batches.pop();
    }
    Ok(batches)
}

/// Batched tensors for one epoch over `set`.
pub fn epoch_batches<'a>(
    set: &'a PatchSet,
    cfg: &TrainConfig,
    epoch: u32,
) -> Result<impl Iterator<Item = (Tensor<f32>, Vec<usize>)> + 'a> {
    let batches = make_batches(set.len(), cfg.batch_size, epoch, cfg.seed, cfg.shuffle)?;
    Ok(batches.into_iter().map(move |idx| set.batch(&idx)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Iteration index the step ran at (before incrementing).
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub correct: usize,
    pub batch: usize,
}

/// Network plus optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar = f32> {
    network: Network<T>,
    optimizer: Vec<SgdState<T>>,
    iteration: u64,
    config: TrainConfig,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(network: Network<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = network
            .trainable()
            .iter()
            .map(|b| SgdState::new(b.len(), config.momentum, config.weight_decay))
            .collect();
        Ok(Self {
            network,
            optimizer,
            iteration: 0,
            config,
        })
    }

    /// Continues from saved momentum buffers and iteration counter.
    pub fn resume(
        network: Network<T>,
        velocity: Option<Vec<Vec<T>>>,
        iteration: u64,
        config: TrainConfig,
    ) -> Result<Self> {
        let mut t = Self::new(network, config)?;
        if let Some(vel) = velocity {
            if vel.len() != t.optimizer.len() {
                return Err(Error::Dimension {
                    axis: "optimizer blobs",
                    expected: t.optimizer.len(),
                    actual: vel.len(),
                });
            }
            for (st, v) in t.optimizer.iter_mut().zip(vel) {
                if v.len() != st.velocity.len() {
                    return Err(Error::Dimension {
                        axis: "velocity",
                        expected: st.velocity.len(),
                        actual: v.len(),
                    });
                }
                st.velocity = v;
            }
        }
        t.iteration = iteration;
        Ok(t)
    }

    pub fn network(&self) -> &Network<T> {
        &self.network
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn velocity(&self) -> Vec<Vec<T>> {
        self.optimizer.iter().map(|s| s.velocity.clone()).collect()
    }

    pub fn into_network(self) -> Network<T> {
        self.network
    }

    /// One forward / backward / update on a batch.
    pub fn step(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<StepStats> {
        let lr = lr_schedule(self.iteration, &self.config);
        let (logits, cache) = self.network.forward_train(x)?;
        let out = softmax_cross_entropy(&logits, labels)?;
        let loss = out.loss.to_f64();
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                loss,
            });
        }
        let grads = self.network.backward(&cache, &out.grad)?;
        for ((param, grad), state) in self
            .network
            .trainable_mut()
            .into_iter()
            .zip(&grads.blobs)
            .zip(&mut self.optimizer)
        {
            sgd_update(param, grad, state, lr)?;
        }
        let correct = argmax_rows(&out.probs)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        let stats = StepStats {
            iteration: self.iteration,
            lr,
            loss,
            correct,
            batch: labels.len(),
        };
        self.iteration += 1;
        Ok(stats)
    }
}

/// Inference-mode scoring of every patch in `set`, in set order. Returns
/// patch accuracy and the scored records.
pub fn evaluate_patches(
    network: &Network<f32>,
    set: &PatchSet,
    batch_size: usize,
) -> Result<(f64, Vec<PatchRecord>)> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut records = Vec::with_capacity(set.len());
    let mut correct = 0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = set.batch(chunk);
        let probs = network.predict(&x)?;
        for ((&i, row), &label) in chunk.iter().zip(probs.data().chunks_exact(2)).zip(&labels) {
            let mut rec = set.record(i);
            rec.probs = Some((row[0] as f64, row[1] as f64));
            if rec.predicted() == Some(Label::from_index(label)?) {
                correct += 1;
            }
            records.push(rec);
        }
    }
    Ok((correct as f64 / set.len() as f64, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 0.001);
        let at_10k = lr_schedule(10_000, &cfg);
        assert!((at_10k - 5.946035575013605e-4).abs() < 1e-15);
        let flat = TrainConfig {
            lr_gamma: 0.0,
            ..TrainConfig::default()
        };
        assert!([0, 1, 1000, 1 << 40].iter().all(|&i| lr_schedule(i, &flat) == 0.001));
    }

    #[test]
    fn partition_arithmetic() {
        let b = make_batches(130, 64, 1, 0, true).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [64, 64, 2]);
        let dropped = make_batches(129, 64, 1, 0, true).unwrap();
        assert_eq!(dropped.iter().map(Vec::len).collect::<Vec<_>>(), [64, 64]);
    }

    #[test]
    fn batches_are_keyed_by_seed_and_epoch() {
        assert_eq!(make_batches(50, 8, 3, 11, true), make_batches(50, 8, 3, 11, true));
        assert_ne!(epoch_order(50, 1, 11, true), epoch_order(50, 2, 11, true));
        assert_eq!(epoch_order(5, 1, 11, false), [0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_stream_is_rejected() {
        assert_eq!(make_batches(0, 64, 1, 0, true), Err(Error::Empty("patch stream")));
    }

    #[test]
    fn checkpoint_epochs_must_fit() {
        let cfg = TrainConfig {
            epochs: 40,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
