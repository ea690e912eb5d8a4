//! Patch sets built from manifest splits.

use std::path::Path;

use cgni_core::imaging::PatchSet;
use cgni_core::{Label, Manifest, PatchSpec, Split};
use log::warn;
use rayon::prelude::*;

use crate::io::load_gray;
use crate::manifest::resolve;
use crate::Result;

/// Per-class counts for one loaded split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SplitStats {
    pub images: [usize; 2],
    pub patches: [usize; 2],
    pub skipped: [usize; 2],
}

/// Decodes every image of `split` and registers its grid windows, NI at
/// `spec.stride_ni` and CG at `spec.stride_cg`. Images smaller than a patch
/// are skipped with a warning. Patch order follows manifest order no matter
/// how decoding is scheduled.
pub fn load_split(
    manifest: &Manifest,
    manifest_path: &Path,
    split: Split,
    spec: &PatchSpec,
) -> Result<(PatchSet, SplitStats)> {
    spec.validate()?;
    let entries: Vec<_> = manifest.split(split).collect();
    let decoded = entries
        .par_iter()
        .map(|e| {
            if e.width < spec.patch_size || e.height < spec.patch_size {
                return Ok(None);
            }
            load_gray(&resolve(manifest_path, e)).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut set = PatchSet::new(spec.patch_size);
    let mut stats = SplitStats::default();
    for (e, gray) in entries.iter().zip(decoded) {
        let k = e.label.index();
        let Some(gray) = gray.filter(|g| g.width >= spec.patch_size && g.height >= spec.patch_size)
        else {
            warn!(
                "skipping {}: {}x{} is smaller than the {} pixel patch",
                e.id, e.width, e.height, spec.patch_size
            );
            stats.skipped[k] += 1;
            continue;
        };
        stats.patches[k] += set.add_image(&e.id, gray, e.label, spec.stride_for(e.label))?;
        stats.images[k] += 1;
    }
    Ok((set, stats))
}

impl SplitStats {
    pub fn images_of(&self, label: Label) -> usize {
        self.images[label.index()]
    }

    pub fn patches_of(&self, label: Label) -> usize {
        self.patches[label.index()]
    }

    pub fn skipped_of(&self, label: Label) -> usize {
        self.skipped[label.index()]
    }
}
