//! Fixed high-pass residual filters and the non-trainable first layer.
//!
//! The three stencils are integer 5x5 arrays with a separate normaliser.
//! 3x3 filters are embedded in the centre with a zero outer ring so all
//! kernels share one size.
//!
//! ```text
//! SQUARE5x5 (1/12)     EDGE3x3 (1/4)       SQUARE3x3 (1/4)
//! -1  2  -2  2 -1      0  0  0  0  0       0  0  0  0  0
//!  2 -6   8 -6  2      0 -1  2 -1  0       0 -1  2 -1  0
//! -2  8 -12  8 -2      0  2 -4  2  0       0  2 -4  2  0
//!  2 -6   8 -6  2      0  0  0  0  0       0 -1  2 -1  0
//! -1  2  -2  2 -1      0  0  0  0  0       0  0  0  0  0
//! ```

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::ops::{avg_pool2d, output_dim, PoolSpec};
use crate::{Error, Result, Scalar, Shape, Tensor};

pub const KERNEL_SIZE: usize = 5;
const TAPS: usize = KERNEL_SIZE * KERNEL_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FilterName {
    Square5x5,
    Edge3x3,
    Square3x3,
}

impl FilterName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Square5x5 => "SQUARE5x5",
            Self::Edge3x3 => "EDGE3x3",
            Self::Square3x3 => "SQUARE3x3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Square5x5, Self::Edge3x3, Self::Square3x3]
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
    }
}

/// A 5x5 integer stencil applied as `stencil / normalizer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FilterKernel {
    pub name: FilterName,
    pub stencil: [i32; TAPS],
    pub normalizer: i32,
}

#[rustfmt::skip]
const SQUARE5X5: [i32; TAPS] = [
    -1,  2,  -2,  2, -1,
     2, -6,   8, -6,  2,
    -2,  8, -12,  8, -2,
     2, -6,   8, -6,  2,
    -1,  2,  -2,  2, -1,
];

#[rustfmt::skip]
const EDGE3X3: [i32; TAPS] = [
    0,  0,  0,  0, 0,
    0, -1,  2, -1, 0,
    0,  2, -4,  2, 0,
    0,  0,  0,  0, 0,
    0,  0,  0,  0, 0,
];

#[rustfmt::skip]
const SQUARE3X3: [i32; TAPS] = [
    0,  0,  0,  0, 0,
    0, -1,  2, -1, 0,
    0,  2, -4,  2, 0,
    0, -1,  2, -1, 0,
    0,  0,  0,  0, 0,
];

impl FilterKernel {
    pub const SQUARE5X5: Self = Self {
        name: FilterName::Square5x5,
        stencil: SQUARE5X5,
        normalizer: 12,
    };
    pub const EDGE3X3: Self = Self {
        name: FilterName::Edge3x3,
        stencil: EDGE3X3,
        normalizer: 4,
    };
    pub const SQUARE3X3: Self = Self {
        name: FilterName::Square3x3,
        stencil: SQUARE3X3,
        normalizer: 4,
    };

    pub fn standard(name: FilterName) -> Self {
        match name {
            FilterName::Square5x5 => Self::SQUARE5X5,
            FilterName::Edge3x3 => Self::EDGE3X3,
            FilterName::Square3x3 => Self::SQUARE3X3,
        }
    }

    /// Exact integer check, before normalisation.
    pub fn is_zero_sum(&self) -> bool {
        self.stencil.iter().sum::<i32>() == 0
    }

    pub fn outer_ring_is_zero(&self) -> bool {
        (0..TAPS).all(|i| {
            let (r, c) = (i / KERNEL_SIZE, i % KERNEL_SIZE);
            let border = r == 0 || c == 0 || r == KERNEL_SIZE - 1 || c == KERNEL_SIZE - 1;
            !border || self.stencil[i] == 0
        })
    }

    pub fn weights(&self) -> [f64; TAPS] {
        let mut w = [0.0; TAPS];
        for (o, &s) in w.iter_mut().zip(&self.stencil) {
            *o = s as f64 / self.normalizer as f64;
        }
        w
    }

    /// Human-readable stencil dump.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} (1/{})", self.name.as_str(), self.normalizer);
        for row in self.stencil.chunks(KERNEL_SIZE) {
            let cells: Vec<String> = row.iter().map(|v| alloc::format!("{v:>4}")).collect();
            let _ = writeln!(s, "{}", cells.concat());
        }
        s
    }

    /// Compact one-line form `NAME:normalizer:v0,v1,...,v24`.
    pub fn to_spec_string(&self) -> String {
        let vals: Vec<String> = self.stencil.iter().map(|v| alloc::format!("{v}")).collect();
        alloc::format!("{}:{}:{}", self.name.as_str(), self.normalizer, vals.join(","))
    }

    /// Parses [`to_spec_string`](Self::to_spec_string) output; the stencil
    /// must sum to zero and the normaliser must be nonzero.
    pub fn parse_spec(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidConfig(alloc::format!("filter `{s}`: {why}"));
        let mut parts = s.trim().splitn(3, ':');
        let name = parts
            .next()
            .and_then(FilterName::parse)
            .ok_or_else(|| bad("unknown name"))?;
        let normalizer: i32 = parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| bad("bad normalizer"))?;
        let values: Vec<i32> = parts
            .next()
            .ok_or_else(|| bad("missing stencil"))?
            .split(',')
            .map(|v| v.trim().parse::<i32>())
            .collect::<core::result::Result<_, _>>()
            .map_err(|_| bad("non-integer stencil value"))?;
        let stencil: [i32; TAPS] = values
            .try_into()
            .map_err(|_| bad("stencil must have 25 values"))?;
        let k = Self {
            name,
            stencil,
            normalizer,
        };
        if normalizer == 0 {
            return Err(bad("normalizer is zero"));
        }
        if !k.is_zero_sum() {
            return Err(bad("stencil does not sum to zero"));
        }
        Ok(k)
    }
}

/// Which filter combination feeds the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HpfSelector {
    /// SQUARE5x5, EDGE3x3 and SQUARE3x3.
    Hpf3,
    /// SQUARE5x5 only.
    Hpf1,
    /// No high-pass filter; a 5x5 stride-2 average pool takes its place.
    Hpf0,
}

impl HpfSelector {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            3 => Some(Self::Hpf3),
            1 => Some(Self::Hpf1),
            0 => Some(Self::Hpf0),
            _ => None,
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Self::Hpf3 => 3,
            Self::Hpf1 => 1,
            Self::Hpf0 => 0,
        }
    }

    /// Feature maps emitted by the filter layer.
    pub fn output_channels(self) -> usize {
        match self {
            Self::Hpf3 => 3,
            Self::Hpf1 | Self::Hpf0 => 1,
        }
    }
}

pub fn kernel_bank(selector: HpfSelector) -> Vec<FilterKernel> {
    match selector {
        HpfSelector::Hpf3 => alloc::vec![
            FilterKernel::SQUARE5X5,
            FilterKernel::EDGE3X3,
            FilterKernel::SQUARE3X3
        ],
        HpfSelector::Hpf1 => alloc::vec![FilterKernel::SQUARE5X5],
        HpfSelector::Hpf0 => Vec::new(),
    }
}

pub const FILTER_STRIDE: usize = 2;
pub const FILTER_PAD: usize = 2;

/// Pooling used in place of the filters for [`HpfSelector::Hpf0`].
pub const HPF0_POOL: PoolSpec = PoolSpec {
    kernel: KERNEL_SIZE,
    stride: FILTER_STRIDE,
    pad: FILTER_PAD,
    include_pad: false,
};

/// Spatial size after the filter layer: `floor((size + 4 - 5) / 2) + 1`.
pub fn filter_output_dim(size: usize) -> Result<usize> {
    output_dim("rows", size, KERNEL_SIZE, FILTER_STRIDE, FILTER_PAD)
}

/// The frozen first layer. Never receives gradients.
#[derive(Clone, Debug, PartialEq)]
pub enum FilterLayer<T> {
    /// `C x 1 x 5 x 5` weights, stride 2, zero padding 2, no bias.
    HighPass { weight: Tensor<T> },
    AvgPool,
}

impl<T: Scalar> FilterLayer<T> {
    pub fn new(selector: HpfSelector, kernels: &[FilterKernel]) -> Result<Self> {
        if selector == HpfSelector::Hpf0 {
            return Ok(Self::AvgPool);
        }
        if kernels.len() != selector.output_channels() {
            return Err(Error::InvalidConfig(alloc::format!(
                "{} filters for a {}-channel filter layer",
                kernels.len(),
                selector.output_channels()
            )));
        }
        let data = kernels
            .iter()
            .flat_map(|k| k.weights())
            .map(T::from_f64)
            .collect();
        let weight = Tensor::from_vec(
            Shape::new(kernels.len(), 1, KERNEL_SIZE, KERNEL_SIZE),
            data,
        )?;
        Ok(Self::HighPass { weight })
    }

    pub fn output_channels(&self) -> usize {
        match self {
            Self::HighPass { weight } => weight.shape().n,
            Self::AvgPool => 1,
        }
    }

    pub fn cast<U: Scalar>(&self) -> FilterLayer<U> {
        match self {
            Self::HighPass { weight } => FilterLayer::HighPass {
                weight: weight.cast(),
            },
            Self::AvgPool => FilterLayer::AvgPool,
        }
    }

    /// Maps an `n x 1 x h x w` grayscale batch to `n x C x h' x w'`
    /// residuals, `h' = floor((h - 1) / 2) + 1`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.c != 1 {
            return Err(Error::Dimension {
                axis: "channels",
                expected: 1,
                actual: s.c,
            });
        }
        if s.h < KERNEL_SIZE || s.w < KERNEL_SIZE {
            return Err(Error::ImageTooSmall {
                width: s.w,
                height: s.h,
                patch: KERNEL_SIZE,
            });
        }
        match self {
            Self::AvgPool => avg_pool2d(x, &HPF0_POOL),
            Self::HighPass { weight } => highpass(x, weight),
        }
    }
}

/// Stride-2, pad-2 correlation written as `sum w_i * (x_i - x_centre)`.
/// Equal to the plain correlation because each kernel sums to zero, and a
/// constant window yields exactly 0 regardless of rounding.
fn highpass<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    let channels = weight.shape().n;
    let oh = filter_output_dim(s.h)?;
    let ow = output_dim("cols", s.w, KERNEL_SIZE, FILTER_STRIDE, FILTER_PAD)?;
    let taps: Vec<Vec<(isize, isize, T)>> = (0..channels)
        .map(|c| {
            weight.sample(c)
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != T::ZERO)
                .map(|(i, &w)| {
                    let dy = (i / KERNEL_SIZE) as isize - FILTER_PAD as isize;
                    let dx = (i % KERNEL_SIZE) as isize - FILTER_PAD as isize;
                    (dy, dx, w)
                })
                .collect()
        })
        .collect();

    let mut out = Tensor::zeros(Shape::new(s.n, channels, oh, ow));
    let (h, w) = (s.h as isize, s.w as isize);
    for n in 0..s.n {
        let img = x.sample(n);
        let dst = out.sample_mut(n);
        for (c, taps) in taps.iter().enumerate() {
            let plane = &mut dst[c * oh * ow..(c + 1) * oh * ow];
            for oy in 0..oh {
                let cy = (oy * FILTER_STRIDE) as isize;
                for ox in 0..ow {
                    let cx = (ox * FILTER_STRIDE) as isize;
                    let centre = img[(cy * w + cx) as usize];
                    let mut acc = T::ZERO;
                    for &(dy, dx, wt) in taps {
                        let (iy, ix) = (cy + dy, cx + dx);
                        let v = if iy < 0 || ix < 0 || iy >= h || ix >= w {
                            T::ZERO
                        } else {
                            img[(iy * w + ix) as usize]
                        };
                        acc += wt * (v - centre);
                    }
                    plane[oy * ow + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Standard bank for `selector`, applied to an `n x 1 x h x w` batch.
pub fn hpf_layer<T: Scalar>(patch: &Tensor<T>, selector: HpfSelector) -> Result<Tensor<T>> {
    FilterLayer::new(selector, &kernel_bank(selector))?.forward(patch)
}

/// Population moments of a residual tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualStats {
    pub mean: f64,
    pub variance: f64,
    /// Mean squared value per channel.
    pub energy: Vec<f64>,
}

pub fn residual_stats<T: Scalar>(residual: &Tensor<T>) -> ResidualStats {
    let s = residual.shape();
    let count = residual.len().max(1) as f64;
    let mean = residual.data().iter().map(|v| v.to_f64()).sum::<f64>() / count;
    let variance = residual
        .data()
        .iter()
        .map(|v| {
            let d = v.to_f64() - mean;
            d * d
        })
        .sum::<f64>()
        / count;
    let per_channel = (s.n * s.plane_len()).max(1) as f64;
    let mut energy = alloc::vec![0.0; s.c];
    for (i, plane) in residual.data().chunks(s.plane_len().max(1)).enumerate() {
        energy[i % s.c.max(1)] += plane.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>();
    }
    for e in &mut energy {
        *e /= per_channel;
    }
    ResidualStats {
        mean,
        variance,
        energy,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{conv2d_forward, ConvSpec};
    use alloc::vec;

    #[test]
    fn bank_sizes() {
        assert_eq!(kernel_bank(HpfSelector::Hpf3).len(), 3);
        assert_eq!(kernel_bank(HpfSelector::Hpf1), vec![FilterKernel::SQUARE5X5]);
        assert!(kernel_bank(HpfSelector::Hpf0).is_empty());
        for k in kernel_bank(HpfSelector::Hpf3) {
            assert!(k.is_zero_sum(), "{:?}", k.name);
            let w: f64 = k.weights().iter().sum();
            assert!(w.abs() < 1e-15);
        }
    }

    #[test]
    fn embedded_kernels_have_zero_ring() {
        assert!(FilterKernel::EDGE3X3.outer_ring_is_zero());
        assert!(FilterKernel::SQUARE3X3.outer_ring_is_zero());
        assert!(!FilterKernel::SQUARE5X5.outer_ring_is_zero());
    }

    #[test]
    fn canonical_output_size() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 650, 650));
        assert_eq!(hpf_layer(&x, HpfSelector::Hpf3).unwrap().shape(), Shape::new(1, 3, 325, 325));
        assert_eq!(hpf_layer(&x, HpfSelector::Hpf1).unwrap().shape(), Shape::new(1, 1, 325, 325));
        assert_eq!(hpf_layer(&x, HpfSelector::Hpf0).unwrap().shape(), Shape::new(1, 1, 325, 325));
    }

    #[test]
    fn constant_patch_interior_is_exactly_zero() {
        for c in [0.0f32, 1.0, 37.3, 254.999, 1e-3] {
            let x = Tensor::full(Shape::new(1, 1, 20, 20), c);
            let y = hpf_layer(&x, HpfSelector::Hpf3).unwrap();
            // windows centred at 2*o touch padding when 2*o < 2 or 2*o + 2 > 19
            for ch in 0..3 {
                for oy in 1..9 {
                    for ox in 1..9 {
                        assert_eq!(y[(0, ch, oy, ox)], 0.0, "c={c} at {oy},{ox}");
                    }
                }
            }
        }
    }

    #[test]
    fn hpf0_preserves_constants() {
        let x = Tensor::full(Shape::new(2, 1, 13, 11), 91.5f64);
        let y = hpf_layer(&x, HpfSelector::Hpf0).unwrap();
        assert!(y.data().iter().all(|&v| v == 91.5));
    }

    #[test]
    fn matches_plain_convolution() {
        let x = Tensor::<f64>::from_vec(
            Shape::new(2, 1, 9, 12),
            (0..216).map(|i| ((i * 37) % 101) as f64 * 0.7).collect(),
        )
        .unwrap();
        let layer = FilterLayer::new(HpfSelector::Hpf3, &kernel_bank(HpfSelector::Hpf3)).unwrap();
        let FilterLayer::HighPass { weight } = &layer else {
            unreachable!()
        };
        let reference =
            conv2d_forward(&x, weight, None, &ConvSpec::square(5, 2, 2, 1, 3)).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), reference.shape());
        for (a, b) in y.data().iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_tiny_patch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 9));
        assert!(matches!(
            hpf_layer(&x, HpfSelector::Hpf1),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn residual_moments() {
        let z = Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2));
        assert_eq!(
            residual_stats(&z),
            ResidualStats {
                mean: 0.0,
                variance: 0.0,
                energy: vec![0.0; 3]
            }
        );
        let r = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, -1.0]).unwrap();
        let st = residual_stats(&r);
        assert_eq!((st.mean, st.variance), (0.0, 1.0));
    }

    #[test]
    fn spec_string_round_trips_and_validates() {
        for k in kernel_bank(HpfSelector::Hpf3) {
            assert_eq!(FilterKernel::parse_spec(&k.to_spec_string()).unwrap(), k);
        }
        let mut bad = FilterKernel::SQUARE3X3;
        bad.stencil[0] = 1;
        assert!(FilterKernel::parse_spec(&bad.to_spec_string()).is_err());
    }
}
