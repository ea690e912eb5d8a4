use alloc::vec;
use alloc::vec::Vec;

use crate::par;
use crate::scalar::{gemm, MatRef};
use crate::{Error, Result, Scalar, Shape, Tensor};

/// Output extent of a sliding window: `floor((input + 2*pad - kernel) / stride) + 1`.
pub fn output_dim(
    axis: &'static str,
    input: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    if kernel == 0 {
        return Err(Error::InvalidConfig("kernel must be positive".into()));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::KernelTooLarge {
            axis,
            kernel,
            padded,
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// Geometry of a 2-D convolution with symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn square(
        kernel: usize,
        stride: usize,
        pad: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
            in_channels,
            out_channels,
        }
    }

    /// Stride 1 with `(kernel - 1) / 2` padding; keeps the spatial size for odd kernels.
    pub fn same(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Self::square(kernel, 1, (kernel - 1) / 2, in_channels, out_channels)
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            output_dim("rows", h, self.kernel_h, self.stride, self.pad)?,
            output_dim("cols", w, self.kernel_w, self.stride, self.pad)?,
        ))
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let (h, w) = self.output_hw(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, h, w))
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// Geometry shared by im2col and col2im for one sample.
struct Lowering {
    spec: ConvSpec,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Lowering {
    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one CHW sample into a `(ci*kh*kw) x (oh*ow)` row-major matrix.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let s = &self.spec;
        let p = self.positions();
        for c in 0..s.in_channels {
            let plane = &x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..s.kernel_h {
                for kx in 0..s.kernel_w {
                    let row = (c * s.kernel_h + ky) * s.kernel_w + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        let line = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            line.fill(T::ZERO);
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            *v = if ix < 0 || ix >= self.in_w as isize {
                                T::ZERO
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
    fn col2im<T: Scalar>(&self, cols: &[T], x: &mut [T]) {
        let s = &self.spec;
        let p = self.positions();
        x.fill(T::ZERO);
        for c in 0..s.in_channels {
            let plane = &mut x[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..s.kernel_h {
                for kx in 0..s.kernel_w {
                    let row = (c * s.kernel_h + ky) * s.kernel_w + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                            if ix >= 0 && ix < self.in_w as isize {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn check_operands<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Lowering> {
    let xs = x.shape();
    if xs.c != spec.in_channels {
        return Err(Error::Dimension {
            axis: "channels",
            expected: spec.in_channels,
            actual: xs.c,
        });
    }
    spec.weight_shape().expect_eq(&weight.shape())?;
    let (out_h, out_w) = spec.output_hw(xs.h, xs.w)?;
    Ok(Lowering {
        spec: *spec,
        in_h: xs.h,
        in_w: xs.w,
        out_h,
        out_w,
    })
}

/// Zero-padded cross-correlation of `x` (n x ci x h x w) with `weight`
/// (co x ci x kh x kw) plus an optional per-output-channel bias.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let low = check_operands(x, weight, spec)?;
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::Dimension {
                axis: "bias",
                expected: spec.out_channels,
                actual: b.len(),
            });
        }
    }
    let n = x.shape().n;
    let k = spec.patch_len();
    let p = low.positions();
    let co = spec.out_channels;
    let w = MatRef::new(weight.data(), co, k);

    let outputs = par::map_indexed(n, |i| {
        let mut cols = vec![T::ZERO; k * p];
        low.im2col(x.sample(i), &mut cols);
        let mut out = vec![T::ZERO; co * p];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(p).zip(b) {
                row.fill(bv);
            }
        }
        let beta = if bias.is_some() { T::ONE } else { T::ZERO };
        gemm(T::ONE, w, MatRef::new(&cols, k, p), beta, &mut out);
        out
    });

    let mut data = Vec::with_capacity(n * co * p);
    for o in outputs {
        data.extend_from_slice(&o);
    }
    Tensor::from_vec(Shape::new(n, co, low.out_h, low.out_w), data)
}

/// Gradients of a sum-reduced loss with respect to a convolution's operands.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

fn backward_impl<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Vec<T>)> {
    let low = check_operands(x, weight, spec)?;
    let xs = x.shape();
    Shape::new(xs.n, spec.out_channels, low.out_h, low.out_w).expect_eq(&grad_out.shape())?;

    let k = spec.patch_len();
    let p = low.positions();
    let co = spec.out_channels;
    let w = MatRef::new(weight.data(), co, k);

    let per_sample = par::map_indexed(xs.n, |i| {
        let g = MatRef::new(grad_out.sample(i), co, p);
        let mut cols = vec![T::ZERO; k * p];
        low.im2col(x.sample(i), &mut cols);

        let mut gw = vec![T::ZERO; co * k];
        gemm(T::ONE, g, MatRef::new(&cols, k, p).t(), T::ZERO, &mut gw);

        let gb: Vec<T> = grad_out
            .sample(i)
            .chunks_exact(p)
            .map(|row| row.iter().fold(T::ZERO, |a, &v| a + v))
            .collect();

        let gx = need_input.then(|| {
            gemm(T::ONE, w.t(), g, T::ZERO, &mut cols);
            let mut gx = vec![T::ZERO; xs.sample_len()];
            low.col2im(&cols, &mut gx);
            gx
        });
        (gx, gw, gb)
    });

    let mut grad_w = vec![T::ZERO; co * k];
    let mut grad_b = vec![T::ZERO; co];
    let mut grad_x = need_input.then(|| Vec::with_capacity(xs.len()));
    for (gx, gw, gb) in per_sample {
        for (a, b) in grad_w.iter_mut().zip(&gw) {
            *a += *b;
        }
        for (a, b) in grad_b.iter_mut().zip(&gb) {
            *a += *b;
        }
        if let (Some(acc), Some(gx)) = (grad_x.as_mut(), gx) {
            acc.extend_from_slice(&gx);
        }
    }
    let grad_x = grad_x.map(|d| Tensor::from_vec(xs, d)).transpose()?;
    Ok((grad_x, Tensor::from_vec(spec.weight_shape(), grad_w)?, grad_b))
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (input, weight, bias) = backward_impl(x, weight, spec, grad_out, true)?;
    Ok(ConvGrads {
        input: input.expect("input gradient requested"),
        weight,
        bias,
    })
}

/// Like [`conv2d_backward`] but skips the input gradient; used for the
/// first trainable layer, whose input comes from the frozen filter layer.
pub fn conv2d_backward_params<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>)> {
    let (_, weight, bias) = backward_impl(x, weight, spec, grad_out, false)?;
    Ok((weight, bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn zero_sum_kernel_on_constant_is_zero() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 5, 5), 1.0);
        let mut k = vec![0.0; 25];
        k[0] = 1.0;
        k[24] = -1.0;
        k[12] = 2.0;
        k[6] = -2.0;
        let w = t(Shape::new(1, 1, 5, 5), &k);
        let y = conv2d_forward(&x, &w, None, &ConvSpec::square(5, 1, 0, 1, 1)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn centered_delta_is_identity() {
        let x = t(
            Shape::new(2, 1, 3, 4),
            &(0..24).map(|v| v as f64 * 0.5 - 3.0).collect::<Vec<_>>(),
        );
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = t(Shape::new(1, 1, 3, 3), &k);
        let y = conv2d_forward(&x, &w, None, &ConvSpec::same(3, 1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_evaluated_dot_product() {
        let x = t(Shape::new(1, 1, 2, 2), &[1.0, 2.0, 3.0, 4.0]);
        let w = t(Shape::new(1, 1, 2, 2), &[1.0, 0.0, 0.0, 1.0]);
        let y = conv2d_forward(&x, &w, None, &ConvSpec::square(2, 1, 0, 1, 1)).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn no_kernel_flip() {
        // asymmetric kernel picks the right-hand neighbour
        let x = t(Shape::new(1, 1, 1, 3), &[1.0, 2.0, 3.0]);
        let w = t(Shape::new(1, 1, 1, 3), &[0.0, 0.0, 1.0]);
        let spec = ConvSpec {
            kernel_h: 1,
            kernel_w: 3,
            stride: 1,
            pad: 0,
            in_channels: 1,
            out_channels: 1,
        };
        let y = conv2d_forward(&x, &w, None, &spec).unwrap();
        assert_eq!(y.data(), &[3.0]);
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        let w = Tensor::zeros(Shape::new(2, 1, 1, 1));
        let y = conv2d_forward(&x, &w, Some(&[1.5, -2.0]), &ConvSpec::same(1, 1, 2)).unwrap();
        assert_eq!(y.data(), &[1.5, 1.5, 1.5, 1.5, -2.0, -2.0, -2.0, -2.0]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 3, 3, 3));
        let err = conv2d_forward(&x, &w, None, &ConvSpec::same(3, 3, 1)).unwrap_err();
        assert_eq!(
            err,
            Error::Dimension {
                axis: "channels",
                expected: 3,
                actual: 2
            }
        );
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let w = Tensor::zeros(Shape::new(1, 1, 5, 5));
        let err = conv2d_forward(&x, &w, None, &ConvSpec::square(5, 1, 1, 1, 1)).unwrap_err();
        assert!(matches!(err, Error::KernelTooLarge { kernel: 5, padded: 4, .. }));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = t(Shape::new(1, 1, 3, 3), &[1.0; 9]);
        let w = t(Shape::new(1, 1, 3, 3), &[0.5; 9]);
        let spec = ConvSpec::same(3, 1, 1);
        let g = conv2d_backward(&x, &w, &spec, &Tensor::zeros(Shape::new(1, 1, 3, 3))).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_pixel_chain_rule() {
        let x = t(Shape::new(1, 1, 1, 1), &[3.0]);
        let w = t(Shape::new(1, 1, 1, 1), &[-2.0]);
        let g = t(Shape::new(1, 1, 1, 1), &[0.25]);
        let grads = conv2d_backward(&x, &w, &ConvSpec::same(1, 1, 1), &g).unwrap();
        assert_eq!(grads.weight.data(), &[0.75]);
        assert_eq!(grads.input.data(), &[-0.5]);
        assert_eq!(grads.bias, vec![0.25]);
    }

    #[test]
    fn backward_rejects_wrong_upstream_shape() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        let w = Tensor::zeros(Shape::new(1, 1, 3, 3));
        let g = Tensor::zeros(Shape::new(1, 1, 3, 4));
        assert!(conv2d_backward(&x, &w, &ConvSpec::same(3, 1, 1), &g).is_err());
    }
}
