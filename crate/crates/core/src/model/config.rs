use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::filters::{filter_output_dim, kernel_bank, FilterKernel, HpfSelector};
use crate::ops::{output_dim, ConvSpec, PoolSpec};
use crate::{Error, Result, Shape};

pub const BLOCKS: usize = 5;

/// Architecture hyper-parameters. Everything else is derived.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub selector: HpfSelector,
    /// Side of the square grayscale input patch.
    pub input_size: usize,
    pub conv_kernels: [usize; BLOCKS],
    pub channels: [usize; BLOCKS],
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub pool_include_pad: bool,
    pub num_classes: usize,
    /// Replaces the standard bank for the selector when set.
    pub custom_kernels: Option<Vec<FilterKernel>>,
}

/// Output of one planned layer (batch dimension 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub shape: Shape,
}

/// Resolved geometry of the whole network.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Plan {
    pub filter_channels: usize,
    pub filter_size: usize,
    pub blocks: Vec<(ConvSpec, PoolSpec, usize)>,
}

/// Padding for a block pool: the smallest `pad < kernel` whose output
/// reaches `max(1, floor(input / stride))`. For kernel 5 / stride 2 this is
/// 1 on odd inputs and 2 on even ones, giving 325 -> 162 -> 81 -> 40 -> 20.
pub fn block_pool(input: usize, kernel: usize, stride: usize, include_pad: bool) -> Result<PoolSpec> {
    if stride == 0 {
        return Err(Error::InvalidConfig("pool stride must be positive".into()));
    }
    let target = (input / stride).max(1);
    (0..kernel)
        .find(|&pad| {
            output_dim("rows", input, kernel, stride, pad).is_ok_and(|o| o >= target)
        })
        .map(|pad| PoolSpec::new(kernel, stride, pad, include_pad))
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "pool kernel {kernel} cannot reduce a {input}x{input} map"
            ))
        })
}

impl ModelConfig {
    pub fn canonical(selector: HpfSelector) -> Self {
        Self::with_input_size(selector, 650)
    }

    /// Canonical layer widths at a different patch size.
    pub fn with_input_size(selector: HpfSelector, input_size: usize) -> Self {
        Self {
            selector,
            input_size,
            conv_kernels: [5, 5, 3, 3, 1],
            channels: [8, 16, 32, 64, 128],
            pool_kernel: 5,
            pool_stride: 2,
            pool_include_pad: false,
            num_classes: 2,
            custom_kernels: None,
        }
    }

    pub fn kernels(&self) -> Vec<FilterKernel> {
        self.custom_kernels
            .clone()
            .unwrap_or_else(|| kernel_bank(self.selector))
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    pub(crate) fn plan(&self) -> Result<Plan> {
        let bad = |m: String| Error::InvalidConfig(m);
        if self.num_classes < 2 {
            return Err(bad(format!("{} classes", self.num_classes)));
        }
        if let Some(k) = self.conv_kernels.iter().find(|k| **k % 2 == 0) {
            return Err(bad(format!("conv kernel {k} must be odd to keep the map size")));
        }
        if self.channels.contains(&0) {
            return Err(bad("zero-width block".into()));
        }
        let kernels = self.kernels();
        if self.selector != HpfSelector::Hpf0 && kernels.len() != self.selector.output_channels() {
            return Err(bad(format!(
                "selector needs {} filters, got {}",
                self.selector.output_channels(),
                kernels.len()
            )));
        }
        if let Some(k) = kernels.iter().find(|k| !k.is_zero_sum() || k.normalizer == 0) {
            return Err(bad(format!("filter {} is not a zero-sum stencil", k.name.as_str())));
        }
        if self.input_size < crate::filters::KERNEL_SIZE {
            return Err(bad(format!("input {} smaller than the filter", self.input_size)));
        }

        let filter_channels = self.selector.output_channels();
        let filter_size = filter_output_dim(self.input_size)?;
        let mut size = filter_size;
        let mut in_c = filter_channels;
        let mut blocks = Vec::with_capacity(BLOCKS);
        for b in 0..BLOCKS {
            let conv = ConvSpec::same(self.conv_kernels[b], in_c, self.channels[b]);
            let (h, _) = conv.output_hw(size, size)?;
            let pool = if b + 1 == BLOCKS {
                PoolSpec::global(h)
            } else {
                block_pool(h, self.pool_kernel, self.pool_stride, self.pool_include_pad)?
            };
            let out = pool.output_shape(Shape::new(1, 1, h, h))?.h;
            blocks.push((conv, pool, h));
            size = out;
            in_c = self.channels[b];
        }
        if size != 1 {
            return Err(bad(format!("plan ends at {size}x{size}, not 1x1")));
        }
        Ok(Plan {
            filter_channels,
            filter_size,
            blocks,
        })
    }

    /// Layer-by-layer output shapes.
    pub fn shape_plan(&self) -> Result<Vec<LayerShape>> {
        let plan = self.plan()?;
        let mut out = Vec::with_capacity(BLOCKS + 3);
        let mut push = |name: String, c, h| {
            out.push(LayerShape {
                name,
                shape: Shape::new(1, c, h, h),
            })
        };
        push("filter".into(), plan.filter_channels, plan.filter_size);
        for (b, (conv, pool, conv_h)) in plan.blocks.iter().enumerate() {
            let size = output_dim("rows", *conv_h, pool.kernel, pool.stride, pool.pad)?;
            if b + 1 == BLOCKS {
                push(format!("block{}.conv", b + 1), conv.out_channels, *conv_h);
                push(format!("block{}.pool", b + 1), conv.out_channels, size);
            } else {
                push(format!("block{}", b + 1), conv.out_channels, size);
            }
        }
        push("fc".into(), self.num_classes, 1);
        Ok(out)
    }

    /// Spatial side after the filter layer and after each block.
    pub fn spatial_sizes(&self) -> Result<Vec<usize>> {
        let plan = self.plan()?;
        let mut sizes = alloc::vec![plan.filter_size];
        for (_, pool, h) in &plan.blocks {
            sizes.push(output_dim("rows", *h, pool.kernel, pool.stride, pool.pad)?);
        }
        Ok(sizes)
    }

    /// Trainable parameter count:
    /// `sum_b (c_b * c_{b-1} * k_b^2 + 3 c_b) + c_5 * classes + classes`,
    /// where `c_0` is the filter-layer width and `3 c_b` covers conv bias,
    /// BN scale and BN shift.
    pub fn parameter_count(&self) -> usize {
        let mut prev = self.selector.output_channels();
        let mut total = 0;
        for b in 0..BLOCKS {
            let (c, k) = (self.channels[b], self.conv_kernels[b]);
            total += c * prev * k * k + 3 * c;
            prev = c;
        }
        total + prev * self.num_classes + self.num_classes
    }
}
