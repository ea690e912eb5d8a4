//! Full-image verdicts from patch scores.

use alloc::string::String;
use alloc::vec::Vec;

use crate::imaging::{patch_grid, GrayImage, Label, PatchRecord, PatchSpec};
use crate::{Error, Network, Result, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageVerdict {
    pub image_id: String,
    pub n_patches: usize,
    pub votes_cg: usize,
    pub votes_ni: usize,
    /// Mean `(p_cg, p_ni)` over the patches.
    pub mean_probs: (f64, f64),
    pub label: Label,
    /// The patch vote was tied and the probability sums decided.
    pub tie_broken: bool,
}

/// Majority vote over patch predictions.
///
/// The class with more argmax votes wins. On a tied vote the class with
/// the larger summed probability wins, and if those are exactly equal too
/// the image is called CG. Records without probabilities are rejected.
pub fn majority_vote(records: &[PatchRecord]) -> Result<ImageVerdict> {
    let first = records.first().ok_or(Error::Empty("patch records"))?;
    let (mut votes_cg, mut votes_ni) = (0, 0);
    let mut cg = Vec::with_capacity(records.len());
    let mut ni = Vec::with_capacity(records.len());
    for r in records {
        let (p_cg, p_ni) = r.probs.ok_or(Error::Empty("patch probabilities"))?;
        cg.push(p_cg);
        ni.push(p_ni);
        match r.predicted() {
            Some(Label::Ni) => votes_ni += 1,
            _ => votes_cg += 1,
        }
    }
    // Summing in sorted order keeps the result independent of record order.
    let sorted_sum = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>()
    };
    let (sum_cg, sum_ni) = (sorted_sum(cg), sorted_sum(ni));
    let tie_broken = votes_cg == votes_ni;
    let label = if votes_ni > votes_cg || (tie_broken && sum_ni > sum_cg) {
        Label::Ni
    } else {
        Label::Cg
    };
    let n = records.len() as f64;
    Ok(ImageVerdict {
        image_id: first.image_id.clone(),
        n_patches: records.len(),
        votes_cg,
        votes_ni,
        mean_probs: (sum_cg / n, sum_ni / n),
        label,
        tie_broken,
    })
}

/// Groups consecutive records by image id and votes each group.
pub fn verdicts_by_image(records: &[PatchRecord]) -> Result<Vec<ImageVerdict>> {
    records
        .chunk_by(|a, b| a.image_id == b.image_id)
        .map(majority_vote)
        .collect()
}

/// Scores every grid patch of one grayscale image. `stride` is shared by
/// both classes; `label` only fills the records' ground-truth field.
pub fn score_image(
    network: &Network<f32>,
    gray: &GrayImage,
    image_id: &str,
    label: Label,
    stride: usize,
    batch_size: usize,
) -> Result<Vec<PatchRecord>> {
    let p = network.config().input_size;
    let grid = patch_grid(gray.width, gray.height, &PatchSpec::uniform(p, stride), label)?;
    let mut records = Vec::with_capacity(grid.len());
    for chunk in grid.chunks(batch_size.max(1)) {
        let mut x = Tensor::zeros(Shape::new(chunk.len(), 1, p, p));
        for (slot, &(row, col)) in chunk.iter().enumerate() {
            gray.copy_window(row, col, p, x.sample_mut(slot));
        }
        let probs = network.predict(&x)?;
        for (&(row, col), pr) in chunk.iter().zip(probs.data().chunks_exact(2)) {
            records.push(PatchRecord {
                image_id: image_id.into(),
                row,
                col,
                label,
                probs: Some((pr[0] as f64, pr[1] as f64)),
            });
        }
    }
    Ok(records)
}
