//! TOML run configuration shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use cgni_core::imaging::SplitRatios;
use cgni_core::synthetic::SynthConfig;
use cgni_core::{FilterKernel, HpfSelector, ModelConfig, PatchSpec, Split, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::io::write_atomic;
use crate::{Error, Result};

pub const EFFECTIVE_CONFIG: &str = "effective-config.toml";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub synth: SynthSection,
    pub eval: EvalSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    pub patch_size: usize,
    pub stride_ni: usize,
    pub stride_cg: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        let c = PatchSpec::CANONICAL;
        Self {
            manifest: None,
            patch_size: c.patch_size,
            stride_ni: c.stride_ni,
            stride_cg: c.stride_cg,
        }
    }
}

impl DataSection {
    pub fn patch_spec(&self) -> Result<PatchSpec> {
        let spec = PatchSpec {
            patch_size: self.patch_size,
            stride_ni: self.stride_ni,
            stride_cg: self.stride_cg,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Number of high-pass filters: 3, 1, or 0 for the average-pool path.
    pub hpf: u32,
    pub conv_kernels: [usize; 5],
    pub channels: [usize; 5],
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub pool_include_pad: bool,
    /// Optional stencil overrides, `NAME:normalizer:v0,v1,...,v24`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub stencils: Vec<String>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = ModelConfig::canonical(HpfSelector::Hpf3);
        Self {
            hpf: 3,
            conv_kernels: c.conv_kernels,
            channels: c.channels,
            pool_kernel: c.pool_kernel,
            pool_stride: c.pool_stride,
            pool_include_pad: c.pool_include_pad,
            stencils: Vec::new(),
        }
    }
}

impl ModelSection {
    pub fn selector(&self) -> Result<HpfSelector> {
        HpfSelector::from_count(self.hpf)
            .ok_or_else(|| Error::Usage(format!("hpf must be 0, 1 or 3, got {}", self.hpf)))
    }

    pub fn model_config(&self, input_size: usize) -> Result<ModelConfig> {
        let custom_kernels = if self.stencils.is_empty() {
            None
        } else {
            Some(
                self.stencils
                    .iter()
                    .map(|s| FilterKernel::parse_spec(s))
                    .collect::<cgni_core::Result<Vec<_>>>()?,
            )
        };
        let cfg = ModelConfig {
            selector: self.selector()?,
            input_size,
            conv_kernels: self.conv_kernels,
            channels: self.channels,
            pool_kernel: self.pool_kernel,
            pool_stride: self.pool_stride,
            pool_include_pad: self.pool_include_pad,
            num_classes: 2,
            custom_kernels,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub base_lr: f64,
    pub lr_gamma: f64,
    pub lr_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub checkpoint_epochs: Vec<u32>,
    pub seed: u64,
    pub shuffle: bool,
    /// Checkpoint and log file prefix.
    pub run_name: String,
    pub eval_batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            base_lr: t.base_lr,
            lr_gamma: t.lr_gamma,
            lr_power: t.lr_power,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            checkpoint_epochs: t.checkpoint_epochs,
            seed: t.seed,
            shuffle: t.shuffle,
            run_name: "model".into(),
            eval_batch_size: 64,
        }
    }
}

impl TrainSection {
    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            base_lr: self.base_lr,
            lr_gamma: self.lr_gamma,
            lr_power: self.lr_power,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            checkpoint_epochs: self.checkpoint_epochs.clone(),
            seed: self.seed,
            shuffle: self.shuffle,
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub name: String,
    pub image_size: usize,
    pub n_per_class: usize,
    pub prnu_strength: f64,
    pub read_noise_sigma: f64,
    pub octaves: usize,
    pub polygons: usize,
    pub camera_count: usize,
    pub seed: u64,
    /// Train / test / validation fractions per class.
    pub ratios: [f64; 3],
    /// JPEG qualities for derived NI manifests.
    pub qfs: Vec<u8>,
    /// Splits whose NI images the derived manifests re-encode.
    pub qf_splits: Vec<String>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            name: "synthetic".into(),
            image_size: s.image_size,
            n_per_class: s.n_per_class,
            prnu_strength: s.prnu_strength,
            read_noise_sigma: s.read_noise_sigma,
            octaves: s.octaves,
            polygons: s.polygons,
            camera_count: s.camera_count,
            seed: s.seed,
            ratios: [0.5, 0.4, 0.1],
            qfs: Vec::new(),
            qf_splits: vec!["test".into()],
        }
    }
}

impl SynthSection {
    pub fn synth_config(&self) -> Result<SynthConfig> {
        let s = SynthConfig {
            image_size: self.image_size,
            n_per_class: self.n_per_class,
            prnu_strength: self.prnu_strength,
            read_noise_sigma: self.read_noise_sigma,
            octaves: self.octaves,
            polygons: self.polygons,
            camera_count: self.camera_count,
            seed: self.seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn split_ratios(&self) -> Result<SplitRatios> {
        let [a, b, c] = self.ratios;
        Ok(SplitRatios::new(a, b, c)?)
    }

    pub fn qf_splits(&self) -> Result<Vec<Split>> {
        self.qf_splits
            .iter()
            .map(|s| Split::parse(s).ok_or_else(|| Error::Usage(format!("unknown split {s:?}"))))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Inference stride; defaults to the patch size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// Clip CG test images at the training CG stride.
    pub dense_cg: bool,
    pub batch_size: usize,
    /// Checkpoint epochs reported per condition; defaults to the training
    /// checkpoint epochs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<Vec<u32>>,
    pub split: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionSection>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            stride: None,
            dense_cg: false,
            batch_size: 64,
            epochs: None,
            split: "test".into(),
            conditions: Vec::new(),
        }
    }
}

/// One report row: checkpoints `{run}-epoch{N}.cgni` scored on `manifest`
/// (or the data manifest when absent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSection {
    pub name: String,
    pub run: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Writes the configuration actually used into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(EFFECTIVE_CONFIG);
        write_atomic(&path, self.to_toml().as_bytes())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_canonical() {
        let c = RunConfig::default();
        assert_eq!(c.data.patch_spec().unwrap(), PatchSpec::CANONICAL);
        assert_eq!(c.model.model_config(650).unwrap(), ModelConfig::canonical(HpfSelector::Hpf3));
        assert_eq!(c.train.train_config().unwrap(), TrainConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.eval.conditions.push(ConditionSection {
            name: "HPFx3".into(),
            run: "runs/hpf3".into(),
            manifest: None,
        });
        c.synth.qfs = vec![95, 75];
        assert_eq!(RunConfig::from_toml(&c.to_toml(), Path::new("c")).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[train]\nepochz = 3\n", Path::new("c.toml")).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        assert!(RunConfig::from_toml("[nope]\n", Path::new("c")).is_err());
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_toml("[model]\nhpf = 0\n", Path::new("c")).unwrap();
        assert_eq!(c.model.selector().unwrap(), HpfSelector::Hpf0);
        assert_eq!(c.model.channels, [8, 16, 32, 64, 128]);
        let bad = RunConfig::from_toml("[model]\nhpf = 2\n", Path::new("c")).unwrap();
        assert!(bad.model.selector().is_err());
    }
}
