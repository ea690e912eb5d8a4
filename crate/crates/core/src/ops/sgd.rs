use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar};

/// Momentum buffer for one parameter blob.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState<T> {
    pub velocity: Vec<T>,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(len: usize, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: vec![T::ZERO; len],
            momentum,
            weight_decay,
        }
    }
}

/// Momentum step with the learning rate folded into the velocity:
///
/// ```text
/// g' = grad + weight_decay * param
/// v  = momentum * v - lr * g'
/// param += v
/// ```
pub fn sgd_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    state: &mut SgdState<T>,
    lr: f64,
) -> Result<()> {
    for (axis, len) in [("gradient", grad.len()), ("velocity", state.velocity.len())] {
        if len != param.len() {
            return Err(Error::Dimension {
                axis,
                expected: param.len(),
                actual: len,
            });
        }
    }
    let (mu, wd, lr) = (
        T::from_f64(state.momentum),
        T::from_f64(state.weight_decay),
        T::from_f64(lr),
    );
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(state.velocity.iter_mut()) {
        let g = g + wd * *p;
        *v = mu * *v - lr * g;
        *p += *v;
    }
    Ok(())
}
