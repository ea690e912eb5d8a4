//! Central-difference gradient checks in `f64`.
//!
//! Each layer is wrapped into a scalar objective `L = sum(r * y)` with a
//! fixed random projection `r` (the loss layer uses its own mean
//! cross-entropy). Every input element and every parameter is perturbed by
//! `±eps`; the reported error is the maximum over elements of
//! `|analytic - numeric| / max(1, |analytic|, |numeric|)`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::{Error, ModelConfig, Network, Result, Shape, Tensor};

/// Layer under test. Parameters are drawn from the seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CheckLayer {
    Linear { out_features: usize },
    Conv(ConvSpec),
    AvgPool(PoolSpec),
    BatchNorm,
    /// Inputs are pushed at least `10 * eps` away from the kink at zero.
    Relu,
    SoftmaxCrossEntropy,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `analytic` with central differences of `f` around `x`.
pub fn compare_with_central_differences(
    x: &[f64],
    analytic: &[f64],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<f64> {
    if x.len() != analytic.len() {
        return Err(Error::Dimension {
            axis: "gradient",
            expected: x.len(),
            actual: analytic.len(),
        });
    }
    let mut probe = x.to_vec();
    let mut worst = 0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe)?;
        probe[i] = x[i] - eps;
        let down = f(&probe)?;
        probe[i] = x[i];
        worst = worst.max(relative_error(analytic[i], (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}

fn normals(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tensor(shape: Shape, data: &[f64]) -> Result<Tensor<f64>> {
    Tensor::from_vec(shape, data.to_vec())
}

/// Runs the check for `layer` on a random input of `input` shape.
pub fn grad_check(layer: CheckLayer, input: Shape, eps: f64, seed: u64) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidConfig(alloc::format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = normals(&mut rng, input.len());
    let n_in = x.len();

    match layer {
        CheckLayer::Linear { out_features } => {
            let feats = input.sample_len();
            let ws = Shape::new(out_features, feats, 1, 1);
            let params = normals(&mut rng, ws.len() + out_features);
            let r = normals(&mut rng, input.n * out_features);
            let split = |v: &[f64]| -> Result<(Tensor<f64>, Tensor<f64>, Vec<f64>)> {
                Ok((
                    tensor(input, &v[..n_in])?,
                    tensor(ws, &v[n_in..n_in + ws.len()])?,
                    v[n_in + ws.len()..].to_vec(),
                ))
            };
            x.extend(params);
            let (xi, w, b) = split(&x)?;
            let y = linear(&xi, &w, &b)?;
            let g = linear_backward(&xi, &w, &tensor(y.shape(), &r)?)?;
            let analytic: Vec<f64> = [g.input.data(), g.weight.data(), &g.bias].concat();
            compare_with_central_differences(&x, &analytic, eps, |v| {
                let (xi, w, b) = split(v)?;
                Ok(dot(linear(&xi, &w, &b)?.data(), &r))
            })
        }
        CheckLayer::Conv(spec) => {
            let ws = spec.weight_shape();
            let os = spec.output_shape(input)?;
            let params = normals(&mut rng, ws.len() + spec.out_channels);
            let r = normals(&mut rng, os.len());
            let split = |v: &[f64]| -> Result<(Tensor<f64>, Tensor<f64>, Vec<f64>)> {
                Ok((
                    tensor(input, &v[..n_in])?,
                    tensor(ws, &v[n_in..n_in + ws.len()])?,
                    v[n_in + ws.len()..].to_vec(),
                ))
            };
            x.extend(params);
            let (xi, w, _) = split(&x)?;
            let g = conv2d_backward(&xi, &w, &spec, &tensor(os, &r)?)?;
            let analytic: Vec<f64> = [g.input.data(), g.weight.data(), &g.bias].concat();
            compare_with_central_differences(&x, &analytic, eps, |v| {
                let (xi, w, b) = split(v)?;
                Ok(dot(conv2d_forward(&xi, &w, Some(&b), &spec)?.data(), &r))
            })
        }
        CheckLayer::AvgPool(spec) => {
            let os = spec.output_shape(input)?;
            let r = normals(&mut rng, os.len());
            let g = avg_pool2d_backward(input, &spec, &tensor(os, &r)?)?;
            compare_with_central_differences(&x, g.data(), eps, |v| {
                Ok(dot(avg_pool2d(&tensor(input, v)?, &spec)?.data(), &r))
            })
        }
        CheckLayer::BatchNorm => {
            let c = input.c;
            let params = normals(&mut rng, 2 * c);
            let r = normals(&mut rng, input.len());
            let state_from = |v: &[f64]| {
                let mut st = BnState::<f64>::new(c);
                st.gamma = v[n_in..n_in + c].to_vec();
                st.beta = v[n_in + c..].to_vec();
                st
            };
            x.extend(params);
            let mut st = state_from(&x);
            let (_, cache) = batch_norm_train(&tensor(input, &x[..n_in])?, &mut st)?;
            let g = batch_norm_backward(&tensor(input, &r)?, &cache, &st.gamma)?;
            let analytic: Vec<f64> = [g.input.data(), &g.gamma, &g.beta].concat();
            compare_with_central_differences(&x, &analytic, eps, |v| {
                let mut st = state_from(v);
                let (y, _) = batch_norm_train(&tensor(input, &v[..n_in])?, &mut st)?;
                Ok(dot(y.data(), &r))
            })
        }
        CheckLayer::Relu => {
            let margin = 10.0 * eps;
            for v in &mut x {
                if v.abs() < margin {
                    *v = if *v < 0.0 { -margin } else { margin };
                }
            }
            let r = normals(&mut rng, input.len());
            let xi = tensor(input, &x)?;
            let g = relu_backward(&xi, &tensor(input, &r)?)?;
            compare_with_central_differences(&x, g.data(), eps, |v| {
                Ok(dot(relu(&tensor(input, v)?).data(), &r))
            })
        }
        CheckLayer::SoftmaxCrossEntropy => {
            let k = input.sample_len();
            let labels: Vec<usize> = (0..input.n).map(|_| rng.random_range(0..k)).collect();
            let out = softmax_cross_entropy(&tensor(input, &x)?, &labels)?;
            compare_with_central_differences(&x, out.grad.data(), eps, |v| {
                Ok(softmax_cross_entropy(&tensor(input, v)?, &labels)?.loss)
            })
        }
    }
}

/// End-to-end check of [`Network::backward`]: mean cross-entropy of a
/// train-mode pass over a random batch, differentiated with respect to
/// every trainable parameter. Biases, BN shifts and scales are randomised
/// first so that no gradient vanishes by symmetry.
pub fn network_grad_check(config: ModelConfig, batch: usize, eps: f64, seed: u64) -> Result<f64> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidConfig(alloc::format!(
            "finite-difference step {eps} outside [1e-7, 1e-4]"
        )));
    }
    let mut net = Network::<f64>::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for b in net.blocks_mut() {
        for v in b.bias.iter_mut().chain(&mut b.bn.beta) {
            *v = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        for v in &mut b.bn.gamma {
            *v = 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let size = net.config().input_size;
    let classes = net.config().num_classes;
    let input = Shape::new(batch, 1, size, size);
    let x = tensor(input, &normals(&mut rng, input.len()))?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();

    let loss_of = |net: &Network<f64>| -> Result<(f64, Tensor<f64>, _)> {
        let mut scratch = net.clone();
        let (logits, cache) = scratch.forward_train(&x)?;
        let out = softmax_cross_entropy(&logits, &labels)?;
        Ok((out.loss, out.grad, cache))
    };
    let (_, grad, cache) = loss_of(&net)?;
    let analytic: Vec<f64> = net.backward(&cache, &grad)?.blobs.concat();
    let params: Vec<f64> = net.trainable().concat();
    compare_with_central_differences(&params, &analytic, eps, |v| {
        let mut rest = v;
        for blob in net.trainable_mut() {
            let (head, tail) = rest.split_at(blob.len());
            blob.copy_from_slice(head);
            rest = tail;
        }
        Ok(loss_of(&net)?.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_seed_zero() {
        let err = grad_check(
            CheckLayer::Linear { out_features: 3 },
            Shape::new(2, 4, 1, 1),
            1e-6,
            0,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_5x5_pad2_stride2() {
        let spec = ConvSpec::square(5, 2, 2, 2, 3);
        let err = grad_check(CheckLayer::Conv(spec), Shape::new(1, 2, 7, 7), 1e-6, 0).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn relu_away_from_kink() {
        let err = grad_check(CheckLayer::Relu, Shape::new(2, 3, 4, 4), 1e-6, 0).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn step_outside_range_is_rejected() {
        assert!(grad_check(CheckLayer::Relu, Shape::new(1, 1, 1, 1), 1e-2, 0).is_err());
    }
}
