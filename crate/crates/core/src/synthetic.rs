//! Pseudo-natural images carrying a multiplicative sensor pattern and read
//! noise, and noise-free pseudo-CG images drawn from the same content family.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::imaging::{Label, RgbImage};
use crate::{Error, Result};

pub const LUMA_MIN: f64 = 30.0;
pub const LUMA_MAX: f64 = 220.0;

const CONTENT_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const WAVES_PER_OCTAVE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub image_size: usize,
    pub n_per_class: usize,
    /// Multiplicative pattern strength `k`.
    pub prnu_strength: f64,
    /// Additive read noise standard deviation, in gray levels.
    pub read_noise_sigma: f64,
    /// Number of frequency octaves in the smooth luminance field.
    pub octaves: usize,
    /// Flat convex polygons painted over the field.
    pub polygons: usize,
    /// Distinct sensor patterns cycled through the natural class.
    pub camera_count: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            n_per_class: 100,
            prnu_strength: 0.02,
            read_noise_sigma: 2.0,
            octaves: 4,
            polygons: 3,
            camera_count: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.prnu_strength >= 0.0) || !self.prnu_strength.is_finite() {
            return bad("prnu strength must be a finite value >= 0");
        }
        if !(self.read_noise_sigma >= 0.0) || !self.read_noise_sigma.is_finite() {
            return bad("read noise sigma must be a finite value >= 0");
        }
        if self.image_size < 8 {
            return bad("image size must be at least 8");
        }
        if self.camera_count == 0 {
            return bad("camera count must be at least 1");
        }
        Ok(())
    }

    /// Checks that generated images can hold one `patch`-sized window.
    pub fn check_patch(&self, patch: usize) -> Result<()> {
        if self.image_size < patch {
            return Err(Error::ImageTooSmall {
                width: self.image_size,
                height: self.image_size,
                patch,
            });
        }
        Ok(())
    }

    /// Sensor pattern seed for a camera.
    pub fn camera_seed(&self, camera: usize) -> u64 {
        derive_seed(self.seed, 2, camera as u64)
    }

    /// Content seed for the `index`-th image of a class.
    pub fn content_seed(&self, label: Label, index: usize) -> u64 {
        derive_seed(self.seed, label.index() as u64, index as u64)
    }
}

fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Zero-mean, unit-variance white Gaussian field of `size x size` values.
pub fn gen_prnu(seed: u64, size: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size * size).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Convex polygon with a constant fill.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    /// Counter-clockwise vertices `(x, y)`.
    pub vertices: Vec<(f64, f64)>,
    pub fill: f64,
}

impl Polygon {
    /// Pixel centres on the boundary count as inside.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let (ax, ay) = self.vertices[i];
            let (bx, by) = self.vertices[(i + 1) % n];
            (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
        })
    }

    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let (cx, cy) = (rng.random_range(0.0..size), rng.random_range(0.0..size));
        let radius = rng.random_range(size / 10.0..size / 4.0);
        let sides = rng.random_range(3..=7);
        let mut angles: Vec<f64> = (0..sides).map(|_| rng.random_range(0.0..TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let vertices = angles
            .iter()
            .map(|&a| (cx + radius * libm::cos(a), cy + radius * libm::sin(a)))
            .collect();
        // Integer fills stay flat through rounding.
        let fill = rng.random_range(LUMA_MIN as u32..=LUMA_MAX as u32) as f64;
        Self { vertices, fill }
    }
}

/// Noise-free luminance `L` with values in `[30, 220]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Content {
    pub size: usize,
    pub luminance: Vec<f64>,
    /// Painted in order; later polygons cover earlier ones.
    pub polygons: Vec<Polygon>,
}

impl Content {
    pub fn generate(content_seed: u64, cfg: &SynthConfig) -> Self {
        let n = cfg.image_size;
        let mut rng = ChaCha8Rng::seed_from_u64(content_seed);
        rng.set_stream(CONTENT_STREAM);

        // (amplitude, kx, ky, phase) with frequencies in cycles per image.
        let mut waves = Vec::with_capacity(cfg.octaves * WAVES_PER_OCTAVE);
        for o in 0..cfg.octaves {
            let base = (1u64 << o) as f64;
            for _ in 0..WAVES_PER_OCTAVE {
                let f = base * rng.random_range(0.5..1.5);
                let theta = rng.random_range(0.0..TAU);
                let phase = rng.random_range(0.0..TAU);
                waves.push((1.0 / base, f * libm::cos(theta), f * libm::sin(theta), phase));
            }
        }
        let mut field = vec![0.0; n * n];
        for (i, v) in field.iter_mut().enumerate() {
            let (x, y) = ((i % n) as f64 / n as f64, (i / n) as f64 / n as f64);
            *v = waves
                .iter()
                .map(|&(a, kx, ky, ph)| a * libm::cos(TAU * (kx * x + ky * y) + ph))
                .sum();
        }
        let (lo, hi) = field
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let span = hi - lo;
        for v in &mut field {
            *v = if span > 0.0 {
                LUMA_MIN + (*v - lo) / span * (LUMA_MAX - LUMA_MIN)
            } else {
                (LUMA_MIN + LUMA_MAX) / 2.0
            };
        }

        let polygons: Vec<Polygon> = (0..cfg.polygons)
            .map(|_| Polygon::random(&mut rng, n as f64))
            .collect();
        for poly in &polygons {
            for (i, v) in field.iter_mut().enumerate() {
                if poly.contains((i % n) as f64 + 0.5, (i / n) as f64 + 0.5) {
                    *v = poly.fill;
                }
            }
        }
        Self {
            size: n,
            luminance: field,
            polygons,
        }
    }
}

fn quantize(v: f64) -> u8 {
    libm::round(v).clamp(0.0, 255.0) as u8
}

/// `clip(round(L * (1 + k K) + N(0, sigma^2)))` as a gray plane. `prnu`
/// must hold `size * size` values.
pub fn render_natural(content: &Content, prnu: &[f64], content_seed: u64, cfg: &SynthConfig) -> Vec<u8> {
    debug_assert_eq!(prnu.len(), content.luminance.len());
    let mut rng = ChaCha8Rng::seed_from_u64(content_seed);
    rng.set_stream(NOISE_STREAM);
    content
        .luminance
        .iter()
        .zip(prnu)
        .map(|(&l, &k)| {
            let n: f64 = StandardNormal.sample(&mut rng);
            quantize(l * (1.0 + cfg.prnu_strength * k) + cfg.read_noise_sigma * n)
        })
        .collect()
}

pub fn render_cg(content: &Content) -> Vec<u8> {
    content.luminance.iter().map(|&l| quantize(l)).collect()
}

/// Pseudo-natural image from `camera`, replicated to RGB.
pub fn synth_natural(content_seed: u64, camera: usize, cfg: &SynthConfig) -> RgbImage {
    let content = Content::generate(content_seed, cfg);
    let prnu = gen_prnu(cfg.camera_seed(camera), cfg.image_size);
    let gray = render_natural(&content, &prnu, content_seed, cfg);
    RgbImage::from_gray(cfg.image_size, cfg.image_size, &gray).expect("square plane")
}

/// Pseudo-CG image: the quantized content with no sensor terms.
pub fn synth_cg(content_seed: u64, cfg: &SynthConfig) -> RgbImage {
    let gray = render_cg(&Content::generate(content_seed, cfg));
    RgbImage::from_gray(cfg.image_size, cfg.image_size, &gray).expect("square plane")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::{hpf_layer, residual_stats, HpfSelector};
    use crate::{Shape, Tensor};

    fn small() -> SynthConfig {
        SynthConfig {
            image_size: 64,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn prnu_moments_and_independence() {
        let size = 256;
        let a = gen_prnu(1, size);
        let b = gen_prnu(2, size);
        let n = (size * size) as f64;
        let mean = a.iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 / size as f64);
        let var = a.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.02);
        assert_eq!(a, gen_prnu(1, size));
        let r = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n;
        assert!(r.abs() < 0.05);
    }

    #[test]
    fn noise_free_limit_is_quantized_content() {
        let cfg = SynthConfig {
            prnu_strength: 0.0,
            read_noise_sigma: 0.0,
            ..small()
        };
        assert_eq!(synth_natural(9, 0, &cfg), synth_cg(9, &cfg));
    }

    #[test]
    fn luminance_range() {
        let c = Content::generate(3, &small());
        assert!(c.luminance.iter().all(|v| (LUMA_MIN..=LUMA_MAX).contains(v)));
    }

    #[test]
    fn deterministic() {
        let cfg = small();
        assert_eq!(synth_natural(4, 1, &cfg), synth_natural(4, 1, &cfg));
        assert_eq!(synth_cg(4, &cfg), synth_cg(4, &cfg));
        assert_ne!(synth_natural(4, 1, &cfg), synth_natural(4, 2, &cfg));
    }

    #[test]
    fn twin_differs_only_by_noise() {
        let cfg = small();
        let content = Content::generate(5, &cfg);
        let prnu = gen_prnu(cfg.camera_seed(0), cfg.image_size);
        let ni = render_natural(&content, &prnu, 5, &cfg);
        let cg = render_cg(&content);
        // |L k K + n| exceeds 8 sigma-equivalents with negligible probability.
        let bound = |i: usize| {
            8.0 * (cfg.read_noise_sigma + cfg.prnu_strength * content.luminance[i]) + 1.0
        };
        let differs = ni.iter().zip(&cg).filter(|(a, b)| a != b).count();
        assert!(differs > ni.len() / 2);
        for (i, (&a, &b)) in ni.iter().zip(&cg).enumerate() {
            assert!(((a as f64) - (b as f64)).abs() <= bound(i));
        }
    }

    #[test]
    fn flat_polygon_interior_has_zero_residual() {
        let cfg = SynthConfig {
            polygons: 6,
            ..small()
        };
        let n = cfg.image_size;
        let gray = render_cg(&Content::generate(11, &cfg));
        let x = Tensor::from_vec(
            Shape::new(1, 1, n, n),
            gray.iter().map(|&v| v as f64).collect(),
        )
        .unwrap();
        let r = hpf_layer(&x, HpfSelector::Hpf3).unwrap();
        let oh = r.shape().h;
        let mut flat_windows = 0;
        for oy in 1..oh - 1 {
            for ox in 1..oh - 1 {
                let (cy, cx) = (2 * oy, 2 * ox);
                let v = gray[cy * n + cx];
                let flat = (cy - 2..=cy + 2)
                    .all(|y| (cx - 2..=cx + 2).all(|x| gray[y * n + x] == v));
                if flat {
                    flat_windows += 1;
                    for c in 0..3 {
                        assert_eq!(r[(0, c, oy, ox)], 0.0);
                    }
                }
            }
        }
        assert!(flat_windows > 0);
    }

    #[test]
    fn natural_residual_exceeds_cg() {
        let cfg = small();
        let n = cfg.image_size;
        let residual_var = |g: Vec<u8>| {
            let x = Tensor::from_vec(Shape::new(1, 1, n, n), g.iter().map(|&v| v as f64).collect())
                .unwrap();
            residual_stats(&hpf_layer(&x, HpfSelector::Hpf3).unwrap()).variance
        };
        let content = Content::generate(21, &cfg);
        let prnu = gen_prnu(cfg.camera_seed(0), n);
        assert!(
            residual_var(render_natural(&content, &prnu, 21, &cfg)) > residual_var(render_cg(&content))
        );
    }

    #[test]
    fn seeds_differ_by_class() {
        let cfg = SynthConfig::default();
        assert_ne!(cfg.content_seed(Label::Cg, 0), cfg.content_seed(Label::Ni, 0));
        assert_ne!(cfg.content_seed(Label::Cg, 0), cfg.content_seed(Label::Cg, 1));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            SynthConfig { prnu_strength: -0.1, ..SynthConfig::default() },
            SynthConfig { read_noise_sigma: f64::NAN, ..SynthConfig::default() },
            SynthConfig { camera_count: 0, ..SynthConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
        assert!(SynthConfig::default().check_patch(300).is_err());
    }
}
