use alloc::vec::Vec;

use crate::scalar::{gemm, MatRef};
use crate::{Error, Result, Scalar, Shape, Tensor};

fn check<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let ws = weight.shape();
    let (out, inp) = (ws.n, ws.sample_len());
    let feats = x.shape().sample_len();
    if feats != inp {
        return Err(Error::Dimension {
            axis: "features",
            expected: inp,
            actual: feats,
        });
    }
    Ok((x.shape().n, out, inp))
}

/// Fully connected layer on flattened samples: `y = W x + b`, with `weight`
/// shaped `out x in x 1 x 1`. Output is `n x out x 1 x 1`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let (n, out, inp) = check(x, weight)?;
    if bias.len() != out {
        return Err(Error::Dimension {
            axis: "bias",
            expected: out,
            actual: bias.len(),
        });
    }
    let mut y: Vec<T> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    gemm(
        T::ONE,
        MatRef::new(x.data(), n, inp),
        MatRef::new(weight.data(), out, inp).t(),
        T::ONE,
        &mut y,
    );
    Tensor::from_vec(Shape::new(n, out, 1, 1), y)
}

#[derive(Clone, Debug)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, out, inp) = check(x, weight)?;
    Shape::new(n, out, 1, 1).expect_eq(&grad_out.shape())?;
    let g = MatRef::new(grad_out.data(), n, out);

    let mut gx = Tensor::zeros(x.shape());
    gemm(T::ONE, g, MatRef::new(weight.data(), out, inp), T::ZERO, gx.data_mut());

    let mut gw = Tensor::zeros(weight.shape());
    gemm(T::ONE, g.t(), MatRef::new(x.data(), n, inp), T::ZERO, gw.data_mut());

    let mut gb = alloc::vec![T::ZERO; out];
    for row in grad_out.data().chunks_exact(out) {
        for (a, b) in gb.iter_mut().zip(row) {
            *a += *b;
        }
    }
    Ok(LinearGrads {
        input: gx,
        weight: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identity_weight() {
        let x = Tensor::<f64>::from_vec(Shape::new(2, 3, 1, 1), vec![1.0, 2.0, 3.0, -4.0, 5.0, 6.0])
            .unwrap();
        let mut w = Tensor::zeros(Shape::new(3, 3, 1, 1));
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(linear(&x, &w, &[0.0; 3]).unwrap().data(), x.data());
    }

    #[test]
    fn hand_matrix_product() {
        let x = Tensor::<f64>::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(linear(&x, &w, &[0.0, 1.0]).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn flattens_spatial_features() {
        let x = Tensor::<f32>::zeros(Shape::new(4, 2, 3, 3));
        let w = Tensor::zeros(Shape::new(5, 18, 1, 1));
        assert_eq!(linear(&x, &w, &[0.0; 5]).unwrap().shape(), Shape::new(4, 5, 1, 1));
        let bad = Tensor::zeros(Shape::new(5, 17, 1, 1));
        assert!(matches!(
            linear(&x, &bad, &[0.0; 5]),
            Err(Error::Dimension { axis: "features", .. })
        ));
    }
}
