//! Rasters, grayscale conversion, patch grids and dataset splits.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Shape, Tensor};

/// Class of an image or patch. The discriminant is the network's class id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Computer-generated graphics.
    Cg = 0,
    /// Natural (camera) image.
    Ni = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Cg, Label::Ni];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Self::Cg),
            1 => Ok(Self::Ni),
            _ => Err(Error::InvalidLabel(i)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cg => "cg",
            Self::Ni => "ni",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cg" => Some(Self::Cg),
            "ni" => Some(Self::Ni),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Validation];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
            Self::Validation => "validation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Some(Self::Train),
            "test" => Some(Self::Test),
            "validation" | "val" => Some(Self::Validation),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 8-bit interleaved RGB raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Dimension {
                axis: "pixels",
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Replicates a gray plane into all three channels.
    pub fn from_gray(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        Self::new(width, height, gray.iter().flat_map(|&v| [v, v, v]).collect())
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Single-channel real raster, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension {
                axis: "pixels",
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Copies the `size x size` window with top-left corner `(row, col)`.
    pub fn copy_window(&self, row: usize, col: usize, size: usize, out: &mut [f32]) {
        for (r, dst) in out.chunks_exact_mut(size).take(size).enumerate() {
            let start = (row + r) * self.width + col;
            dst.copy_from_slice(&self.data[start..start + size]);
        }
    }
}

pub const LUMA_R: f64 = 0.299;
pub const LUMA_G: f64 = 0.587;
pub const LUMA_B: f64 = 0.114;

/// BT.601 luma, unrounded.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let data = rgb
        .data
        .chunks_exact(3)
        .map(|p| (LUMA_R * p[0] as f64 + LUMA_G * p[1] as f64 + LUMA_B * p[2] as f64) as f32)
        .collect();
    GrayImage {
        width: rgb.width,
        height: rgb.height,
        data,
    }
}

/// Patch size and per-class clipping strides.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub patch_size: usize,
    pub stride_ni: usize,
    pub stride_cg: usize,
}

impl PatchSpec {
    /// 650x650 patches; NI tiles without overlap, CG every 65 pixels.
    pub const CANONICAL: Self = Self {
        patch_size: 650,
        stride_ni: 650,
        stride_cg: 65,
    };

    pub fn stride_for(&self, label: Label) -> usize {
        match label {
            Label::Ni => self.stride_ni,
            Label::Cg => self.stride_cg,
        }
    }

    /// Same stride for both classes (the inference grid).
    pub fn uniform(patch_size: usize, stride: usize) -> Self {
        Self {
            patch_size,
            stride_ni: stride,
            stride_cg: stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for stride in [self.stride_ni, self.stride_cg] {
            if stride == 0 || stride > self.patch_size {
                return Err(Error::InvalidConfig(alloc::format!(
                    "stride {stride} must lie in [1, {}]",
                    self.patch_size
                )));
            }
        }
        Ok(())
    }
}

/// Offsets `0, s, 2s, ...` with `offset + patch <= dim`.
pub fn axis_offsets(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    if dim < patch || stride == 0 {
        return Vec::new();
    }
    (0..=(dim - patch) / stride).map(|i| i * stride).collect()
}

/// Row-major `(row, col)` top-left offsets for an image of `label`.
pub fn patch_grid(
    width: usize,
    height: usize,
    spec: &PatchSpec,
    label: Label,
) -> Result<Vec<(usize, usize)>> {
    spec.validate()?;
    let p = spec.patch_size;
    if width < p || height < p {
        return Err(Error::ImageTooSmall {
            width,
            height,
            patch: p,
        });
    }
    let s = spec.stride_for(label);
    let cols = axis_offsets(width, p, s);
    Ok(axis_offsets(height, p, s)
        .into_iter()
        .flat_map(|r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

/// One clipped patch and, once scored, its class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub image_id: String,
    pub row: usize,
    pub col: usize,
    pub label: Label,
    /// `(p_cg, p_ni)`.
    pub probs: Option<(f64, f64)>,
}

impl PatchRecord {
    /// Argmax of the probabilities; an exact tie goes to CG.
    pub fn predicted(&self) -> Option<Label> {
        self.probs
            .map(|(cg, ni)| if ni > cg { Label::Ni } else { Label::Cg })
    }
}

/// Cuts `1 x 1 x p x p` tensors at `offsets`; every patch inherits `label`.
pub fn clip_patches(
    gray: &GrayImage,
    offsets: &[(usize, usize)],
    patch_size: usize,
    image_id: &str,
    label: Label,
) -> Result<(Vec<Tensor<f32>>, Vec<PatchRecord>)> {
    let mut tensors = Vec::with_capacity(offsets.len());
    let mut records = Vec::with_capacity(offsets.len());
    for &(row, col) in offsets {
        if row + patch_size > gray.height || col + patch_size > gray.width {
            return Err(Error::ImageTooSmall {
                width: gray.width,
                height: gray.height,
                patch: patch_size,
            });
        }
        let mut t = Tensor::zeros(Shape::new(1, 1, patch_size, patch_size));
        gray.copy_window(row, col, patch_size, t.data_mut());
        tensors.push(t);
        records.push(PatchRecord {
            image_id: image_id.into(),
            row,
            col,
            label,
            probs: None,
        });
    }
    Ok((tensors, records))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRef {
    pub image: usize,
    pub row: usize,
    pub col: usize,
    pub label: Label,
}

/// In-memory patch stream: grayscale images plus the ordered list of
/// windows cut from them. Patches are materialised only when batched.
#[derive(Clone, Debug, Default)]
pub struct PatchSet {
    patch_size: usize,
    images: Vec<(String, GrayImage)>,
    patches: Vec<PatchRef>,
}

impl PatchSet {
    pub fn new(patch_size: usize) -> Self {
        Self {
            patch_size,
            images: Vec::new(),
            patches: Vec::new(),
        }
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    /// Appends every grid window of `gray` at `stride`. Returns the count.
    pub fn add_image(
        &mut self,
        id: &str,
        gray: GrayImage,
        label: Label,
        stride: usize,
    ) -> Result<usize> {
        let spec = PatchSpec::uniform(self.patch_size, stride);
        let grid = patch_grid(gray.width, gray.height, &spec, label)?;
        let image = self.images.len();
        self.patches.extend(grid.iter().map(|&(row, col)| PatchRef {
            image,
            row,
            col,
            label,
        }));
        self.images.push((id.into(), gray));
        Ok(grid.len())
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[PatchRef] {
        &self.patches
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    pub fn image_id(&self, image: usize) -> &str {
        &self.images[image].0
    }

    pub fn count_by_label(&self, label: Label) -> usize {
        self.patches.iter().filter(|p| p.label == label).count()
    }

    pub fn record(&self, i: usize) -> PatchRecord {
        let p = self.patches[i];
        PatchRecord {
            image_id: self.images[p.image].0.clone(),
            row: p.row,
            col: p.col,
            label: p.label,
            probs: None,
        }
    }

    /// Stacks the patches at `indices` into an `n x 1 x p x p` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let p = self.patch_size;
        let mut t = Tensor::zeros(Shape::new(indices.len(), 1, p, p));
        let mut labels = Vec::with_capacity(indices.len());
        for (slot, &i) in indices.iter().enumerate() {
            let pr = self.patches[i];
            self.images[pr.image]
                .1
                .copy_window(pr.row, pr.col, p, t.sample_mut(slot));
            labels.push(pr.label.index());
        }
        (t, labels)
    }
}

/// A labelled dataset image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageEntry {
    pub id: String,
    pub path: String,
    pub label: Label,
    pub split: Split,
    pub width: usize,
    pub height: usize,
    pub quality_factor: Option<u8>,
}

/// Dataset description.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub name: String,
    pub patch_spec: PatchSpec,
    pub entries: Vec<ImageEntry>,
    pub seed: u64,
    pub provenance: Vec<String>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ImageEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, label: Label, split: Split) -> usize {
        self.entries
            .iter()
            .filter(|e| e.label == label && e.split == split)
            .count()
    }
}

/// Fractions of each class assigned to train / test / validation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub validation: f64,
}

impl SplitRatios {
    /// 900 / 800 / 100 out of 1800.
    pub const CANONICAL: Self = Self {
        train: 900.0 / 1800.0,
        test: 800.0 / 1800.0,
        validation: 100.0 / 1800.0,
    };

    pub fn new(train: f64, test: f64, validation: f64) -> Result<Self> {
        let r = Self {
            train,
            test,
            validation,
        };
        let ok = [train, test, validation].iter().all(|v| *v >= 0.0 && v.is_finite())
            && (train + test + validation - 1.0).abs() < 1e-9;
        if !ok {
            return Err(Error::InvalidConfig(alloc::format!(
                "split ratios {train}/{test}/{validation} must be nonnegative and sum to 1"
            )));
        }
        Ok(r)
    }

    /// `(train, test, validation)` counts for a class of `n` images.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let round = |v: f64| libm::round(v) as usize;
        let train = round(n as f64 * self.train).min(n);
        let test = round(n as f64 * self.test).min(n - train);
        (train, test, n - train - test)
    }
}

/// Shuffles each class with `seed` and assigns splits by `ratios`.
/// The `split` field of the input entries is ignored. Output keeps input
/// order, grouped CG first.
pub fn build_manifest(
    name: &str,
    patch_spec: PatchSpec,
    mut images: Vec<ImageEntry>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Manifest> {
    patch_spec.validate()?;
    let mut entries = Vec::with_capacity(images.len());
    images.sort_by_key(|e| e.label);
    for label in Label::ALL {
        let mut class: Vec<ImageEntry> = images.iter().filter(|e| e.label == label).cloned().collect();
        if class.is_empty() {
            return Err(Error::EmptyClass(label));
        }
        let mut order: Vec<usize> = (0..class.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label.index() as u64);
        order.shuffle(&mut rng);
        let (train, test, _) = ratios.counts(class.len());
        for (rank, &i) in order.iter().enumerate() {
            class[i].split = if rank < train {
                Split::Train
            } else if rank < train + test {
                Split::Test
            } else {
                Split::Validation
            };
        }
        entries.extend(class);
    }
    Ok(Manifest {
        name: name.into(),
        patch_spec,
        entries,
        seed,
        provenance: Vec::new(),
    })
}
