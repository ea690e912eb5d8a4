use std::fs;
use std::path::Path;

use cgni::checkpoint::{checkpoint_path, load_checkpoint};
use cgni::evaluate::{classify_image, evaluate_split, EvalOptions};
use cgni::io::{encode_jpeg, load_image, save_png};
use cgni::manifest::{manifest_from_dirs, read_manifest};
use cgni::synth::{gen_dataset, DatasetSpec, MANIFEST_FILE};
use cgni::train::{train, TrainJob};
use cgni_core::imaging::SplitRatios;
use cgni_core::synthetic::{synth_natural, SynthConfig};
use cgni_core::{HpfSelector, Label, ModelConfig, Network, PatchSpec, RgbImage, Split, TrainConfig};

fn small_spec(n: usize, size: usize) -> DatasetSpec {
    DatasetSpec {
        name: "tiny".into(),
        synth: SynthConfig {
            image_size: size,
            n_per_class: n,
            ..SynthConfig::default()
        },
        ratios: SplitRatios::new(0.5, 0.4, 0.1).unwrap(),
        patch_spec: PatchSpec {
            patch_size: 32,
            stride_ni: 32,
            stride_cg: 16,
        },
        qfs: vec![],
        qf_splits: vec![Split::Test],
    }
}

#[test]
fn synth_writes_files_manifest_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen_dataset(&small_spec(100, 32), dir.path()).unwrap();
    assert_eq!(m.entries.len(), 200);
    for label in Label::ALL {
        let files = fs::read_dir(dir.path().join(label.as_str())).unwrap().count();
        assert_eq!(files, 100);
        assert_eq!(
            [Split::Train, Split::Test, Split::Validation].map(|s| m.count(label, s)),
            [50, 40, 10]
        );
    }
    assert_eq!(read_manifest(&dir.path().join(MANIFEST_FILE)).unwrap(), m);
}

#[test]
fn synth_is_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut spec = small_spec(6, 48);
    spec.qfs = vec![80];
    gen_dataset(&spec, a.path()).unwrap();
    gen_dataset(&spec, b.path()).unwrap();
    for rel in ["cg/cg-00003.png", "ni/ni-00005.png", MANIFEST_FILE, "manifest-qf80.jsonl"] {
        assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn derived_manifest_reencodes_only_ni_in_requested_splits() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = small_spec(10, 32);
    spec.qfs = vec![75];
    let base = gen_dataset(&spec, dir.path()).unwrap();
    let derived = read_manifest(&dir.path().join("manifest-qf75.jsonl")).unwrap();
    assert_eq!(derived.entries.len(), base.entries.len());
    for (a, b) in base.entries.iter().zip(&derived.entries) {
        assert_eq!((&a.id, a.split, a.label), (&b.id, b.split, b.label));
        let reencoded = a.label == Label::Ni && a.split == Split::Test;
        assert_eq!(b.quality_factor, reencoded.then_some(75));
        assert_eq!(b.path.ends_with(".jpg"), reencoded);
    }
}

#[test]
fn lower_quality_is_smaller() {
    let cfg = SynthConfig::default();
    let img = synth_natural(cfg.content_seed(Label::Ni, 0), 0, &cfg);
    let q95 = encode_jpeg(&img, 95, Path::new("x")).unwrap();
    let q75 = encode_jpeg(&img, 75, Path::new("x")).unwrap();
    assert!(q75.len() < q95.len(), "{} vs {}", q75.len(), q95.len());
}

#[test]
fn manifest_from_directories_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(&small_spec(9, 32), dir.path()).unwrap();
    let build = |seed| {
        manifest_from_dirs(
            "dirs",
            &dir.path().join("cg"),
            &dir.path().join("ni"),
            PatchSpec::uniform(32, 32),
            SplitRatios::new(1.0, 0.0, 0.0).unwrap(),
            seed,
        )
        .unwrap()
    };
    let m = build(1);
    assert_eq!(m, build(1));
    assert!(m.entries.iter().all(|e| e.split == Split::Train));
    assert_eq!(m.entries.len(), 18);
    let empty = tempfile::tempdir().unwrap();
    assert!(manifest_from_dirs(
        "x",
        &dir.path().join("cg"),
        empty.path(),
        PatchSpec::uniform(32, 32),
        SplitRatios::CANONICAL,
        0
    )
    .is_err());
}

#[test]
fn classify_grid_counts_and_undersized_error() {
    let dir = tempfile::tempdir().unwrap();
    let net = Network::<f32>::new(ModelConfig::canonical(HpfSelector::Hpf1), 0).unwrap();
    let wide = dir.path().join("wide.png");
    let data = (0..1300 * 650 * 3).map(|i| (i % 251) as u8).collect();
    save_png(&wide, &RgbImage::new(1300, 650, data).unwrap()).unwrap();
    let recs = classify_image(&net, &wide, None, 4).unwrap();
    assert_eq!(recs.len(), 2);
    for r in &recs {
        let (a, b) = r.probs.unwrap();
        assert!((a + b - 1.0).abs() < 1e-6);
    }
    let small = dir.path().join("small.png");
    save_png(&small, &RgbImage::new(600, 700, vec![9; 600 * 700 * 3]).unwrap()).unwrap();
    let err = classify_image(&net, &small, None, 4).unwrap_err();
    assert!(err.to_string().contains("unsupported size"), "{err}");
}

fn job(dir: &Path, manifest: &Path, epochs: u32, ckpts: Vec<u32>, run: &str) -> TrainJob {
    TrainJob {
        manifest: read_manifest(manifest).unwrap(),
        manifest_path: manifest.to_path_buf(),
        model: ModelConfig {
            channels: [4, 8, 8, 8, 8],
            ..ModelConfig::with_input_size(HpfSelector::Hpf3, 32)
        },
        train: TrainConfig {
            batch_size: 16,
            epochs,
            checkpoint_epochs: ckpts,
            seed: 5,
            ..TrainConfig::default()
        },
        out_dir: dir.to_path_buf(),
        run_name: run.into(),
        resume: None,
        eval_batch_size: 32,
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = tempfile::tempdir().unwrap();
    gen_dataset(&small_spec(12, 64), data.path()).unwrap();
    let manifest = data.path().join(MANIFEST_FILE);
    let out = tempfile::tempdir().unwrap();

    let straight = train(&job(out.path(), &manifest, 3, vec![3], "straight")).unwrap();
    train(&job(out.path(), &manifest, 2, vec![2], "split")).unwrap();
    let mut resumed = job(out.path(), &manifest, 3, vec![3], "split");
    resumed.resume = Some(checkpoint_path(&out.path().join("split"), 2));
    let resumed = train(&resumed).unwrap();

    assert_eq!(straight.iteration, resumed.iteration);
    assert_eq!(straight.network, resumed.network);
    let a = fs::read(checkpoint_path(&out.path().join("straight"), 3)).unwrap();
    let b = fs::read(checkpoint_path(&out.path().join("split"), 3)).unwrap();
    assert_eq!(a, b);
    let loss = |run: &str| fs::read_to_string(out.path().join(format!("{run}-loss.csv"))).unwrap();
    assert_eq!(loss("straight"), loss("split"));

    // Checkpoint round trip keeps predictions bit-identical.
    let ckpt = load_checkpoint(&checkpoint_path(&out.path().join("split"), 3)).unwrap();
    let m = read_manifest(&manifest).unwrap();
    let opts = EvalOptions::default();
    let before = evaluate_split(&straight.network, &m, &manifest, Split::Test, &opts).unwrap();
    let after = evaluate_split(&ckpt.network, &m, &manifest, Split::Test, &opts).unwrap();
    assert_eq!(before.records, after.records);
}

#[test]
fn undersized_images_are_skipped_when_loading() {
    let data = tempfile::tempdir().unwrap();
    gen_dataset(&small_spec(4, 32), data.path()).unwrap();
    let path = data.path().join(MANIFEST_FILE);
    let mut m = read_manifest(&path).unwrap();
    m.patch_spec = PatchSpec::uniform(40, 40);
    let (set, stats) = cgni::dataset::load_split(&m, &path, Split::Train, &m.patch_spec).unwrap();
    assert!(set.is_empty());
    assert_eq!(stats.skipped_of(Label::Cg) + stats.skipped_of(Label::Ni), m.split(Split::Train).count());
    let img = load_image(&data.path().join("cg/cg-00000.png")).unwrap();
    assert_eq!((img.width, img.height), (32, 32));
}
