use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics only; nothing is mutated.
    Infer,
}

/// Per-channel batch-normalisation parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    /// Weight of the old running value: `running = m * running + (1 - m) * batch`.
    pub stat_momentum: f64,
}

impl<T: Scalar> BnState<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.9;

    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::ONE; channels],
            beta: vec![T::ZERO; channels],
            running_mean: vec![T::ZERO; channels],
            running_var: vec![T::ONE; channels],
            eps: Self::DEFAULT_EPS,
            stat_momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Scalar>(&self) -> BnState<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64())).collect();
        BnState {
            gamma: c(&self.gamma),
            beta: c(&self.beta),
            running_mean: c(&self.running_mean),
            running_var: c(&self.running_var),
            eps: self.eps,
            stat_momentum: self.stat_momentum,
        }
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if shape.c != self.channels() {
            return Err(Error::Dimension {
                axis: "channels",
                expected: self.channels(),
                actual: shape.c,
            });
        }
        Ok(())
    }
}

/// What the backward pass needs from a train-mode forward.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

fn channel_values<T: Scalar>(x: &Tensor<T>, c: usize) -> impl Iterator<Item = &T> {
    let s = x.shape();
    let plane = s.plane_len();
    (0..s.n).flat_map(move |n| {
        let off = (n * s.c + c) * plane;
        x.data()[off..off + plane].iter()
    })
}

fn for_channel_mut<T: Scalar>(x: &mut Tensor<T>, c: usize, mut f: impl FnMut(usize, &mut T)) {
    let s = x.shape();
    let plane = s.plane_len();
    for n in 0..s.n {
        let off = (n * s.c + c) * plane;
        for (i, v) in x.data_mut()[off..off + plane].iter_mut().enumerate() {
            f(off + i, v);
        }
    }
}

/// Normalises with batch statistics (biased variance) and folds them into
/// the running averages.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    state: &mut BnState<T>,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let s = x.shape();
    state.check(s)?;
    let count = s.n * s.plane_len();
    if count < 2 {
        return Err(Error::SingletonStatistics(count));
    }
    let mut x_hat = x.clone();
    let mut y = x.clone();
    let mut inv_std = Vec::with_capacity(s.c);
    let m = state.stat_momentum;
    for c in 0..s.c {
        let mean = channel_values(x, c).map(|v| v.to_f64()).sum::<f64>() / count as f64;
        let var = channel_values(x, c)
            .map(|v| {
                let d = v.to_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / count as f64;
        let istd = T::from_f64(1.0 / libm::sqrt(var + state.eps));
        let mean_t = T::from_f64(mean);
        let (g, b) = (state.gamma[c], state.beta[c]);
        for_channel_mut(&mut x_hat, c, |_, v| *v = (*v - mean_t) * istd);
        let xh = &x_hat;
        for_channel_mut(&mut y, c, |i, v| *v = g * xh.data()[i] + b);
        inv_std.push(istd);

        state.running_mean[c] =
            T::from_f64(m * state.running_mean[c].to_f64() + (1.0 - m) * mean);
        state.running_var[c] = T::from_f64(m * state.running_var[c].to_f64() + (1.0 - m) * var);
    }
    Ok((y, BnCache { x_hat, inv_std }))
}

/// Normalises with the running statistics.
pub fn batch_norm_infer<T: Scalar>(x: &Tensor<T>, state: &BnState<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    state.check(s)?;
    let mut y = x.clone();
    for c in 0..s.c {
        let istd = T::from_f64(1.0 / libm::sqrt(state.running_var[c].to_f64() + state.eps));
        let scale = state.gamma[c] * istd;
        let shift = state.beta[c] - state.running_mean[c] * scale;
        for_channel_mut(&mut y, c, |_, v| *v = *v * scale + shift);
    }
    Ok(y)
}

/// Mode-dispatching entry point. Returns a cache in train mode only.
pub fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    state: &mut BnState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, Option<BnCache<T>>)> {
    match mode {
        Mode::Train => batch_norm_train(x, state).map(|(y, c)| (y, Some(c))),
        Mode::Infer => batch_norm_infer(x, state).map(|y| (y, None)),
    }
}

/// Backward of [`batch_norm_train`], batch statistics included.
pub fn batch_norm_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &[T],
) -> Result<BnGrads<T>> {
    let s = cache.x_hat.shape();
    s.expect_eq(&grad_out.shape())?;
    if gamma.len() != s.c {
        return Err(Error::Dimension {
            axis: "channels",
            expected: s.c,
            actual: gamma.len(),
        });
    }
    let count = T::from_usize(s.n * s.plane_len());
    let mut grad_x = grad_out.clone();
    let mut grad_gamma = Vec::with_capacity(s.c);
    let mut grad_beta = Vec::with_capacity(s.c);
    for c in 0..s.c {
        let mut sum_g = T::ZERO;
        let mut sum_gx = T::ZERO;
        for (g, xh) in channel_values(grad_out, c).zip(channel_values(&cache.x_hat, c)) {
            sum_g += *g;
            sum_gx += *g * *xh;
        }
        grad_beta.push(sum_g);
        grad_gamma.push(sum_gx);
        let k = gamma[c] * cache.inv_std[c] / count;
        let xh = cache.x_hat.data();
        for_channel_mut(&mut grad_x, c, |i, v| {
            *v = k * (count * *v - sum_g - xh[i] * sum_gx);
        });
    }
    Ok(BnGrads {
        input: grad_x,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardised_input_is_nearly_unchanged() {
        // per channel: mean 0, population variance 1
        let x = Tensor::<f64>::from_vec(Shape::new(2, 1, 1, 2), vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let mut st = BnState::new(1);
        let (y, _) = batch_norm_train(&x, &mut st).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::<f32>::full(Shape::new(3, 2, 2, 2), 7.0);
        let mut st = BnState::new(2);
        let (y, _) = batch_norm_train(&x, &mut st).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::<f64>::from_vec(Shape::new(2, 1, 1, 1), vec![2.0, 4.0]).unwrap();
        let mut st = BnState::new(1);
        batch_norm_train(&x, &mut st).unwrap();
        assert!((st.running_mean[0] - 0.3).abs() < 1e-12);
        assert!((st.running_var[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn infer_uses_running_stats_and_does_not_mutate() {
        let mut st = BnState::<f64>::new(1);
        st.running_mean[0] = 1.0;
        st.running_var[0] = 4.0 - st.eps;
        st.gamma[0] = 2.0;
        st.beta[0] = 0.5;
        let before = st.clone();
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![3.0]).unwrap();
        let (y, cache) = batch_norm(&x, &mut st, Mode::Infer).unwrap();
        assert!(cache.is_none());
        assert!((y.data()[0] - 2.5).abs() < 1e-12);
        assert_eq!(st, before);
    }

    #[test]
    fn singleton_pool_is_rejected_in_train_mode() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 1, 1));
        let mut st = BnState::new(3);
        assert_eq!(
            batch_norm_train(&x, &mut st).unwrap_err(),
            Error::SingletonStatistics(1)
        );
    }
}
