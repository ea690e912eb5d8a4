use crate::{Result, Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Passes the upstream gradient where `x > 0`. The subgradient at exactly
/// zero is taken as 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    x.shape().expect_eq(&grad_out.shape())?;
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= T::ZERO {
            *gv = T::ZERO;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Shape;
    use alloc::vec;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn nonnegative_input_is_identity() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0, 1.0, 2.5, 9.0]).unwrap();
        assert_eq!(relu(&x), x);
    }

    #[test]
    fn gradient_masks_by_sign() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 3), vec![-0.5, 0.0, 0.5]).unwrap();
        let g = Tensor::full(x.shape(), 3.0);
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 0.0, 3.0]);
    }
}
