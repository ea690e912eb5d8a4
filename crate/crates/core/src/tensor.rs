use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result, Scalar};

/// `n x c x h x w` extent of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one sample (`c * h * w`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn expect_eq(&self, other: &Shape) -> Result<()> {
        let axes = [
            ("batch", self.n, other.n),
            ("channels", self.c, other.c),
            ("rows", self.h, other.h),
            ("cols", self.w, other.w),
        ];
        for (axis, expected, actual) in axes {
            if expected != actual {
                return Err(Error::Dimension {
                    axis,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major NCHW array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![T::ZERO; shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Dimension {
                axis: "elements",
                expected: shape.len(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.shape.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.shape.sample_len();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Same data, new extent with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-type conversion (e.g. `f32` parameters into an `f64` check).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Concatenates equally shaped samples along the batch axis.
    pub fn stack(samples: &[Tensor<T>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("stack"))?.shape;
        let mut data = Vec::with_capacity(first.len() * samples.len());
        for s in samples {
            Shape { n: first.n, ..s.shape }.expect_eq(&first)?;
            data.extend_from_slice(&s.data);
        }
        Self::from_vec(
            Shape::new(first.n * samples.len(), first.c, first.h, first.w),
            data,
        )
    }
}

impl<T: Scalar> core::ops::Index<(usize, usize, usize, usize)> for Tensor<T> {
    type Output = T;

    fn index(&self, (n, c, h, w): (usize, usize, usize, usize)) -> &T {
        let s = self.shape;
        &self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }
}

impl<T: Scalar> core::ops::IndexMut<(usize, usize, usize, usize)> for Tensor<T> {
    fn index_mut(&mut self, (n, c, h, w): (usize, usize, usize, usize)) -> &mut T {
        let s = self.shape;
        &mut self.data[((n * s.c + c) * s.h + h) * s.w + w]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::<f32>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 4, actual: 3, .. }));
    }

    #[test]
    fn index_is_row_major_nchw() {
        let t = Tensor::<f64>::from_vec(Shape::new(2, 2, 2, 3), (0..24).map(f64::from).collect())
            .unwrap();
        assert_eq!(t[(1, 0, 1, 2)], 17.0);
        assert_eq!(t.sample(1)[0], 12.0);
    }

    #[test]
    fn shape_mismatch_names_axis() {
        let err = Shape::new(1, 2, 3, 4).expect_eq(&Shape::new(1, 2, 5, 4)).unwrap_err();
        assert_eq!(
            err,
            Error::Dimension {
                axis: "rows",
                expected: 3,
                actual: 5
            }
        );
    }
}
