//! Line-delimited JSON manifests.
//!
//! The first line is a header object `{"dataset": {...}}`; every further
//! line is one image entry. Relative image paths are resolved against the
//! manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use cgni_core::imaging::{build_manifest, SplitRatios};
use cgni_core::{ImageEntry, Label, Manifest, PatchSpec, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{image_dimensions, reencode_jpeg, write_atomic};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dataset: DatasetHeader,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    name: String,
    patch_size: usize,
    stride_ni: usize,
    stride_cg: usize,
    seed: u64,
    #[serde(default)]
    provenance: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryLine {
    id: String,
    path: String,
    label: String,
    split: String,
    width: usize,
    height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    qf: Option<u8>,
}

pub fn to_jsonl(manifest: &Manifest) -> String {
    let spec = manifest.patch_spec;
    let header = Header {
        dataset: DatasetHeader {
            name: manifest.name.clone(),
            patch_size: spec.patch_size,
            stride_ni: spec.stride_ni,
            stride_cg: spec.stride_cg,
            seed: manifest.seed,
            provenance: manifest.provenance.clone(),
        },
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    for e in &manifest.entries {
        let line = EntryLine {
            id: e.id.clone(),
            path: e.path.clone(),
            label: e.label.as_str().into(),
            split: e.split.as_str().into(),
            width: e.width,
            height: e.height,
            qf: e.quality_factor,
        };
        out.push_str(&serde_json::to_string(&line).expect("entry serialises"));
        out.push('\n');
    }
    out
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(path, to_jsonl(manifest).as_bytes())
}

/// Parses manifest text. `path` only labels errors.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let err = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (n, first) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| err(n, e.to_string()))?;
    let d = header.dataset;
    let patch_spec = PatchSpec {
        patch_size: d.patch_size,
        stride_ni: d.stride_ni,
        stride_cg: d.stride_cg,
    };
    patch_spec.validate().map_err(|e| err(n, e.to_string()))?;
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (n, line) in lines {
        let e: EntryLine = serde_json::from_str(line).map_err(|e| err(n, e.to_string()))?;
        let label = Label::parse(&e.label).ok_or_else(|| err(n, format!("unknown label {:?}", e.label)))?;
        let split = Split::parse(&e.split).ok_or_else(|| err(n, format!("unknown split {:?}", e.split)))?;
        if e.width == 0 || e.height == 0 {
            return Err(err(n, format!("image {} has zero size", e.id)));
        }
        if !seen.insert(e.id.clone()) {
            return Err(err(n, format!("duplicate image id {}", e.id)));
        }
        entries.push(ImageEntry {
            id: e.id,
            path: e.path,
            label,
            split,
            width: e.width,
            height: e.height,
            quality_factor: e.qf,
        });
    }
    Ok(Manifest {
        name: d.name,
        patch_spec,
        entries,
        seed: d.seed,
        provenance: d.provenance,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    parse_manifest(&text, path)
}

/// Absolute location of an entry's image.
pub fn resolve(manifest_path: &Path, entry: &ImageEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

/// Lists the PNG / JPEG files of one class directory, sorted by name.
pub fn scan_class_dir(dir: &Path, label: Label) -> Result<Vec<ImageEntry>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .map(|e| e.map(|e| e.path()).map_err(Error::io(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    files.sort();
    files
        .into_par_iter()
        .map(|path| {
            let (width, height) = image_dimensions(&path)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            Ok(ImageEntry {
                id: format!("{}-{stem}", label.as_str()),
                path: path.to_string_lossy().into_owned(),
                label,
                split: Split::Train,
                width,
                height,
                quality_factor: None,
            })
        })
        .collect()
}

/// Manifest over a CG directory and an NI directory.
pub fn manifest_from_dirs(
    name: &str,
    cg_dir: &Path,
    ni_dir: &Path,
    patch_spec: PatchSpec,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Manifest> {
    let mut images = scan_class_dir(cg_dir, Label::Cg)?;
    images.extend(scan_class_dir(ni_dir, Label::Ni)?);
    let mut m = build_manifest(name, patch_spec, images, ratios, seed)?;
    m.provenance.push(format!(
        "cg from {}, ni from {}",
        cg_dir.display(),
        ni_dir.display()
    ));
    Ok(m)
}

/// Copy of `manifest` whose NI images in `splits` are re-encoded as JPEG at
/// `quality` under `out_dir`. CG entries are untouched. Entry paths of the
/// result are absolute or relative to `out_dir`'s parent, matching where
/// the derived manifest is expected to be written.
pub fn derive_qf_manifest(
    manifest: &Manifest,
    manifest_path: &Path,
    quality: u8,
    splits: &[Split],
    out_dir: &Path,
    derived_manifest_path: &Path,
) -> Result<Manifest> {
    let base = derived_manifest_path.parent().unwrap_or(Path::new("."));
    let entries = manifest
        .entries
        .par_iter()
        .map(|e| {
            let src = resolve(manifest_path, e);
            if e.label != Label::Ni || !splits.contains(&e.split) {
                let mut kept = e.clone();
                kept.path = relative_to(&src, base);
                return Ok(kept);
            }
            let dst = out_dir.join(format!("{}.jpg", e.id));
            reencode_jpeg(&src, quality, &dst)?;
            Ok(ImageEntry {
                path: relative_to(&dst, base),
                quality_factor: Some(quality),
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut provenance = manifest.provenance.clone();
    let names: Vec<&str> = splits.iter().map(|s| s.as_str()).collect();
    provenance.push(format!("ni {} re-encoded as JPEG quality {quality}", names.join("+")));
    Ok(Manifest {
        name: format!("{}-qf{quality}", manifest.name),
        entries,
        provenance,
        ..manifest.clone()
    })
}

/// `path` relative to `base` when it lies under it, else unchanged.
pub fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        let entry = |id: &str, label, split, qf| ImageEntry {
            id: id.into(),
            path: format!("imgs/{id}.png"),
            label,
            split,
            width: 256,
            height: 200,
            quality_factor: qf,
        };
        Manifest {
            name: "demo".into(),
            patch_spec: PatchSpec::uniform(64, 32),
            entries: vec![
                entry("a", Label::Cg, Split::Train, None),
                entry("b", Label::Ni, Split::Validation, Some(95)),
            ],
            seed: 3,
            provenance: vec!["unit test".into()],
        }
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let text = to_jsonl(&m);
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().contains("\"qf\":95"));
        assert_eq!(parse_manifest(&text, Path::new("m.jsonl")).unwrap(), m);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = to_jsonl(&sample()).replace("\"ni\"", "\"xx\"");
        let err = parse_manifest(&text, Path::new("m.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("m.jsonl:3:"), "{err}");
        let dup = to_jsonl(&sample()).replace("\"id\":\"b\"", "\"id\":\"a\"");
        assert!(parse_manifest(&dup, Path::new("m")).is_err());
        let extra = to_jsonl(&sample()).replace("\"width\"", "\"colour\":1,\"width\"");
        assert!(parse_manifest(&extra, Path::new("m")).is_err());
    }

    #[test]
    fn relative_paths_resolve_against_manifest() {
        let m = sample();
        assert_eq!(
            resolve(Path::new("/data/set/m.jsonl"), &m.entries[0]),
            Path::new("/data/set/imgs/a.png")
        );
    }
}
