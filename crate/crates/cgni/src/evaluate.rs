//! Split evaluation, per-image verdicts and experiment reports.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use cgni_core::imaging::PatchSet;
use cgni_core::inference::{score_image, verdicts_by_image};
use cgni_core::training::evaluate_patches;
use cgni_core::{ImageVerdict, Label, Manifest, Network, PatchRecord, PatchSpec, Split};
use log::warn;

use crate::checkpoint::{checkpoint_path, load_checkpoint};
use crate::dataset::load_split;
use crate::io::{load_gray, write_atomic};
use crate::manifest::read_manifest;
use crate::{Error, Result};

/// How test images are cut into patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Grid stride; `None` tiles at the patch size.
    pub stride: Option<usize>,
    /// Use the manifest's (training) CG stride for CG images.
    pub dense_cg: bool,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            stride: None,
            dense_cg: false,
            batch_size: 64,
        }
    }
}

impl EvalOptions {
    pub fn patch_spec(&self, manifest: &Manifest) -> PatchSpec {
        let p = manifest.patch_spec.patch_size;
        let mut spec = PatchSpec::uniform(p, self.stride.unwrap_or(p));
        if self.dense_cg {
            spec.stride_cg = manifest.patch_spec.stride_cg;
        }
        spec
    }
}

/// Patch records of one image at a uniform stride.
pub fn classify_image(
    network: &Network<f32>,
    path: &Path,
    stride: Option<usize>,
    batch_size: usize,
) -> Result<Vec<PatchRecord>> {
    let gray = load_gray(path)?;
    let p = network.config().input_size;
    let id = path.to_string_lossy();
    score_image(network, &gray, &id, Label::Cg, stride.unwrap_or(p), batch_size).map_err(|e| match e {
        cgni_core::Error::ImageTooSmall { width, height, patch } => Error::Usage(format!(
            "{}: unsupported size {width}x{height}, both sides must be at least {patch}",
            path.display()
        )),
        e => e.into(),
    })
}

#[derive(Clone, Debug)]
pub struct SplitEvaluation {
    pub patch_accuracy: f64,
    pub image_accuracy: f64,
    pub records: Vec<PatchRecord>,
    /// Verdict and true label per image.
    pub verdicts: Vec<(ImageVerdict, Label)>,
}

/// Scores a loaded split and votes per image.
pub fn evaluate_set(network: &Network<f32>, set: &PatchSet, batch_size: usize) -> Result<SplitEvaluation> {
    let (patch_accuracy, records) = evaluate_patches(network, set, batch_size)?;
    let verdicts: Vec<(ImageVerdict, Label)> = verdicts_by_image(&records)?
        .into_iter()
        .zip(records.chunk_by(|a, b| a.image_id == b.image_id))
        .map(|(v, group)| (v, group[0].label))
        .collect();
    let correct = verdicts.iter().filter(|(v, truth)| v.label == *truth).count();
    Ok(SplitEvaluation {
        patch_accuracy,
        image_accuracy: correct as f64 / verdicts.len() as f64,
        records,
        verdicts,
    })
}

pub fn evaluate_split(
    network: &Network<f32>,
    manifest: &Manifest,
    manifest_path: &Path,
    split: Split,
    options: &EvalOptions,
) -> Result<SplitEvaluation> {
    let (set, _) = load_split(manifest, manifest_path, split, &options.patch_spec(manifest))?;
    evaluate_set(network, &set, options.batch_size)
}

/// One verdict CSV row: a verdict, or the image path and failure reason.
pub type VerdictRow = std::result::Result<ImageVerdict, (String, String)>;

pub const VERDICT_HEADER: [&str; 9] = [
    "image_id", "label", "n_patches", "votes_cg", "votes_ni", "p_cg", "p_ni", "tie_broken", "error",
];

pub fn write_verdicts<W: Write>(out: W, rows: &[VerdictRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(VERDICT_HEADER)?;
    for row in rows {
        match row {
            Ok(v) => w.write_record([
                v.image_id.clone(),
                v.label.as_str().into(),
                v.n_patches.to_string(),
                v.votes_cg.to_string(),
                v.votes_ni.to_string(),
                v.mean_probs.0.to_string(),
                v.mean_probs.1.to_string(),
                v.tie_broken.to_string(),
                String::new(),
            ])?,
            Err((id, reason)) => {
                w.write_record([id.as_str(), "", "", "", "", "", "", "", reason.as_str()])?
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// A report row: checkpoints `{run}-epoch{N}.cgni` scored on a manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub name: String,
    pub run: PathBuf,
    pub manifest: PathBuf,
}

/// Accuracies per requested epoch; `None` where the checkpoint is missing.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub condition: String,
    pub patch_accuracy: Vec<Option<f64>>,
    pub image_accuracy: Vec<Option<f64>>,
}

/// Evaluates every condition at every epoch on `split` and writes a CSV
/// report with percent accuracies. Missing checkpoints leave empty cells
/// and a warning.
pub fn run_experiment(
    conditions: &[Condition],
    epochs: &[u32],
    split: Split,
    options: &EvalOptions,
    report: &Path,
) -> Result<Vec<ReportRow>> {
    let mut sets: HashMap<PathBuf, PatchSet> = HashMap::new();
    let mut rows = Vec::with_capacity(conditions.len());
    for cond in conditions {
        if !sets.contains_key(&cond.manifest) {
            let manifest = read_manifest(&cond.manifest)?;
            let (set, _) = load_split(&manifest, &cond.manifest, split, &options.patch_spec(&manifest))?;
            sets.insert(cond.manifest.clone(), set);
        }
        let set = &sets[&cond.manifest];
        let mut row = ReportRow {
            condition: cond.name.clone(),
            patch_accuracy: Vec::new(),
            image_accuracy: Vec::new(),
        };
        for &epoch in epochs {
            let path = checkpoint_path(&cond.run, epoch);
            if !path.exists() {
                warn!("{}: missing checkpoint {}", cond.name, path.display());
                row.patch_accuracy.push(None);
                row.image_accuracy.push(None);
                continue;
            }
            let net = load_checkpoint(&path)?.network;
            if net.config().input_size != set.patch_size() {
                return Err(Error::Usage(format!(
                    "{}: model input {} does not match patch size {}",
                    path.display(),
                    net.config().input_size,
                    set.patch_size()
                )));
            }
            let eval = evaluate_set(&net, set, options.batch_size)?;
            row.patch_accuracy.push(Some(eval.patch_accuracy));
            row.image_accuracy.push(Some(eval.image_accuracy));
        }
        rows.push(row);
    }
    write_atomic(report, report_csv(&rows, epochs).as_bytes())?;
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow], epochs: &[u32]) -> String {
    let mut header = vec!["condition".to_string()];
    header.extend(epochs.iter().map(|e| format!("patch_acc_{e}")));
    header.extend(epochs.iter().map(|e| format!("image_acc_{e}")));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let cell = |v: &Option<f64>| v.map(|a| format!("{:.2}", 100.0 * a)).unwrap_or_default();
        let mut rec = vec![r.condition.clone()];
        rec.extend(r.patch_accuracy.iter().map(cell));
        rec.extend(r.image_accuracy.iter().map(cell));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
