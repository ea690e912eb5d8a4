//! Writes a synthetic CG / NI dataset to disk.

use std::path::{Path, PathBuf};

use cgni_core::imaging::{build_manifest, SplitRatios};
use cgni_core::synthetic::{gen_prnu, render_cg, render_natural, Content, SynthConfig};
use cgni_core::{ImageEntry, Label, Manifest, PatchSpec, RgbImage, Split};
use log::info;
use rayon::prelude::*;

use crate::io::save_png;
use crate::manifest::{derive_qf_manifest, write_manifest};
use crate::Result;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub synth: SynthConfig,
    pub ratios: SplitRatios,
    pub patch_spec: PatchSpec,
    /// A derived manifest is written for each quality.
    pub qfs: Vec<u8>,
    pub qf_splits: Vec<Split>,
}

pub fn qf_manifest_file(quality: u8) -> String {
    format!("manifest-qf{quality}.jsonl")
}

/// Renders `n_per_class` images per class into `out/cg` and `out/ni`,
/// splits them, and writes `manifest.jsonl` plus one
/// `manifest-qf{Q}.jsonl` per configured JPEG quality.
pub fn gen_dataset(spec: &DatasetSpec, out: &Path) -> Result<Manifest> {
    let cfg = &spec.synth;
    cfg.validate()?;
    cfg.check_patch(spec.patch_spec.patch_size)?;
    spec.patch_spec.validate()?;

    let patterns: Vec<Vec<f64>> = (0..cfg.camera_count)
        .into_par_iter()
        .map(|c| gen_prnu(cfg.camera_seed(c), cfg.image_size))
        .collect();
    let jobs: Vec<(Label, usize)> = Label::ALL
        .iter()
        .flat_map(|&l| (0..cfg.n_per_class).map(move |i| (l, i)))
        .collect();
    let images = jobs
        .par_iter()
        .map(|&(label, i)| {
            let seed = cfg.content_seed(label, i);
            let content = Content::generate(seed, cfg);
            let gray = match label {
                Label::Cg => render_cg(&content),
                Label::Ni => render_natural(&content, &patterns[i % cfg.camera_count], seed, cfg),
            };
            let id = format!("{}-{i:05}", label.as_str());
            let rel = PathBuf::from(label.as_str()).join(format!("{id}.png"));
            save_png(&out.join(&rel), &RgbImage::from_gray(cfg.image_size, cfg.image_size, &gray)?)?;
            Ok(ImageEntry {
                id,
                path: rel.to_string_lossy().into_owned(),
                label,
                split: Split::Train,
                width: cfg.image_size,
                height: cfg.image_size,
                quality_factor: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = build_manifest(&spec.name, spec.patch_spec, images, spec.ratios, cfg.seed)?;
    manifest.provenance.push(format!(
        "synthetic: size {}, k {}, sigma {}, octaves {}, polygons {}, cameras {}, seed {}",
        cfg.image_size,
        cfg.prnu_strength,
        cfg.read_noise_sigma,
        cfg.octaves,
        cfg.polygons,
        cfg.camera_count,
        cfg.seed
    ));
    let manifest_path = out.join(MANIFEST_FILE);
    write_manifest(&manifest_path, &manifest)?;
    info!("wrote {} images and {}", manifest.entries.len(), manifest_path.display());

    for &q in &spec.qfs {
        let derived_path = out.join(qf_manifest_file(q));
        let derived = derive_qf_manifest(
            &manifest,
            &manifest_path,
            q,
            &spec.qf_splits,
            &out.join(format!("ni-qf{q}")),
            &derived_path,
        )?;
        write_manifest(&derived_path, &derived)?;
        info!("wrote {}", derived_path.display());
    }
    Ok(manifest)
}
