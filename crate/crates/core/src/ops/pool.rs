use alloc::vec::Vec;

use super::conv::output_dim;
use crate::{Error, Result, Scalar, Shape, Tensor};

/// Square average-pooling window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Count padded cells in the denominator. When false, each output is
    /// the mean of the in-bounds cells only, so constants pass unchanged.
    pub include_pad: bool,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize, pad: usize, include_pad: bool) -> Self {
        Self {
            kernel,
            stride,
            pad,
            include_pad,
        }
    }

    /// One window covering a whole `size x size` map.
    pub fn global(size: usize) -> Self {
        Self::new(size, 1, 0, false)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if self.pad >= self.kernel {
            return Err(Error::InvalidConfig(alloc::format!(
                "pool pad {} must be smaller than kernel {}",
                self.pad,
                self.kernel
            )));
        }
        let h = output_dim("rows", input.h, self.kernel, self.stride, self.pad)?;
        let w = output_dim("cols", input.w, self.kernel, self.stride, self.pad)?;
        Ok(Shape::new(input.n, input.c, h, w))
    }

    /// In-bounds index range `[lo, hi)` of window `o` along an axis of length `len`.
    fn span(&self, o: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.pad as isize;
        let end = start + self.kernel as isize;
        (start.max(0) as usize, (end.min(len as isize)) as usize)
    }

    fn divisor(&self, rows: (usize, usize), cols: (usize, usize)) -> usize {
        if self.include_pad {
            self.kernel * self.kernel
        } else {
            (rows.1 - rows.0) * (cols.1 - cols.0)
        }
    }
}

pub fn avg_pool2d<T: Scalar>(x: &Tensor<T>, spec: &PoolSpec) -> Result<Tensor<T>> {
    let xs = x.shape();
    let os = spec.output_shape(xs)?;
    let mut out = Vec::with_capacity(os.len());
    for plane in x.data().chunks_exact(xs.plane_len()) {
        for oy in 0..os.h {
            let rows = spec.span(oy, xs.h);
            for ox in 0..os.w {
                let cols = spec.span(ox, xs.w);
                let mut acc = T::ZERO;
                for y in rows.0..rows.1 {
                    for v in &plane[y * xs.w + cols.0..y * xs.w + cols.1] {
                        acc += *v;
                    }
                }
                out.push(acc / T::from_usize(spec.divisor(rows, cols)));
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Spreads each upstream value evenly over the cells its window averaged.
pub fn avg_pool2d_backward<T: Scalar>(
    input_shape: Shape,
    spec: &PoolSpec,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let os = spec.output_shape(input_shape)?;
    os.expect_eq(&grad_out.shape())?;
    let mut grad = Tensor::zeros(input_shape);
    let plane_in = input_shape.plane_len();
    for (gx, gy) in grad
        .data_mut()
        .chunks_exact_mut(plane_in)
        .zip(grad_out.data().chunks_exact(os.plane_len()))
    {
        for oy in 0..os.h {
            let rows = spec.span(oy, input_shape.h);
            for ox in 0..os.w {
                let cols = spec.span(ox, input_shape.w);
                let share = gy[oy * os.w + ox] / T::from_usize(spec.divisor(rows, cols));
                for y in rows.0..rows.1 {
                    for v in &mut gx[y * input_shape.w + cols.0..y * input_shape.w + cols.1] {
                        *v += share;
                    }
                }
            }
        }
    }
    Ok(grad)
}
