use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cgni::checkpoint::load_checkpoint;
use cgni::config::{ConditionSection, RunConfig};
use cgni::evaluate::{classify_image, run_experiment, write_verdicts, Condition, EvalOptions, VerdictRow};
use cgni::io::{create_dir, write_atomic};
use cgni::manifest::read_manifest;
use cgni::synth::{gen_dataset, DatasetSpec};
use cgni::train::{train, TrainJob};
use cgni::{Error, Result};
use cgni_core::filters::kernel_bank;
use cgni_core::imaging::patch_grid;
use cgni_core::{majority_vote, HpfSelector, Label, Split};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "cgni", version, about = "Computer-graphics vs natural-image classifier")]
struct Cli {
    /// Worker threads; 1 gives the determinism baseline.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more logging.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifests.
    Synth(SynthArgs),
    /// Compute patch grids and per-class counts for a manifest.
    Prepare(PrepareArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score checkpoints on a split and write a report.
    Eval(EvalArgs),
    /// Classify full-size images by patch majority vote.
    Classify(ClassifyArgs),
    /// Print the high-pass filter stencils.
    DumpKernels(DumpArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        self.config.as_deref().map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Images per class.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Image side in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// Patch size recorded in the manifest.
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    stride_ni: Option<usize>,
    #[arg(long)]
    stride_cg: Option<usize>,
    /// Also write an NI re-encoded manifest at this JPEG quality.
    #[arg(long = "qf")]
    qfs: Vec<u8>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PatchArgs {
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    stride_ni: Option<usize>,
    #[arg(long)]
    stride_cg: Option<usize>,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    patch: PatchArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of high-pass filters (3, 1, or 0 for average pooling).
    #[arg(long)]
    hpf: Option<u32>,
    #[arg(long)]
    epochs: Option<u32>,
    /// Comma-separated epochs at which to write checkpoints.
    #[arg(long, value_delimiter = ',')]
    checkpoint_epochs: Option<Vec<u32>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    run: Option<String>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// `NAME=RUN_PREFIX[@MANIFEST]`; checkpoints are `RUN_PREFIX-epochN.cgni`.
    #[arg(long = "condition")]
    conditions: Vec<String>,
    /// Comma-separated checkpoint epochs to report.
    #[arg(long, value_delimiter = ',')]
    epochs: Option<Vec<u32>>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    stride: Option<usize>,
    /// Clip CG images at the manifest's CG stride.
    #[arg(long)]
    dense_cg: bool,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grid stride; defaults to the patch size.
    #[arg(long)]
    stride: Option<usize>,
    /// Verdict CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long, default_value_t = 3)]
    hpf: u32,
    /// One-line `NAME:normalizer:values` form instead of a grid.
    #[arg(long)]
    spec: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Usage(_) | Error::Config { .. } => 2,
                _ => 1,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Classify(a) => classify(a),
        Command::DumpKernels(a) => dump_kernels(a),
    }
}

fn apply_patch_args(cfg: &mut RunConfig, p: &PatchArgs) {
    if let Some(v) = p.patch_size {
        cfg.data.patch_size = v;
    }
    if let Some(v) = p.stride_ni {
        cfg.data.stride_ni = v;
    }
    if let Some(v) = p.stride_cg {
        cfg.data.stride_cg = v;
    }
}

fn manifest_path(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.data.manifest.clone())
        .ok_or_else(|| Error::Usage("no manifest given (--manifest or [data] manifest)".into()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    let s = &mut cfg.synth;
    if let Some(v) = a.n {
        s.n_per_class = v;
    }
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.size {
        s.image_size = v;
    }
    if !a.qfs.is_empty() {
        s.qfs = a.qfs;
    }
    apply_patch_args(
        &mut cfg,
        &PatchArgs {
            patch_size: a.patch_size,
            stride_ni: a.stride_ni,
            stride_cg: a.stride_cg,
        },
    );
    let spec = DatasetSpec {
        name: cfg.synth.name.clone(),
        synth: cfg.synth.synth_config()?,
        ratios: cfg.synth.split_ratios()?,
        patch_spec: cfg.data.patch_spec()?,
        qfs: cfg.synth.qfs.clone(),
        qf_splits: cfg.synth.qf_splits()?,
    };
    create_dir(&a.out)?;
    cfg.data.manifest = Some(a.out.join(cgni::synth::MANIFEST_FILE));
    cfg.echo(&a.out)?;
    gen_dataset(&spec, &a.out)?;
    Ok(())
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    let mpath = manifest_path(&cfg, a.manifest)?;
    let manifest = read_manifest(&mpath)?;
    // Manifest strides apply unless overridden by flags or config.
    if a.config.config.is_none() {
        cfg.data.patch_size = manifest.patch_spec.patch_size;
        cfg.data.stride_ni = manifest.patch_spec.stride_ni;
        cfg.data.stride_cg = manifest.patch_spec.stride_cg;
    }
    apply_patch_args(&mut cfg, &a.patch);
    let spec = cfg.data.patch_spec()?;
    create_dir(&a.out)?;
    cfg.data.manifest = Some(mpath);
    cfg.echo(&a.out)?;
    info!("patch {} / stride ni {} / stride cg {}", spec.patch_size, spec.stride_ni, spec.stride_cg);

    let mut stats = csv::Writer::from_writer(Vec::new());
    stats
        .write_record(["split", "label", "images", "patches", "skipped"])
        .expect("in-memory write");
    for split in Split::ALL {
        let mut index = csv::Writer::from_writer(Vec::new());
        index.write_record(["image_id", "label", "row", "col"]).expect("in-memory write");
        let mut counts = [[0usize; 3]; 2];
        for e in manifest.split(split) {
            let k = e.label.index();
            match patch_grid(e.width, e.height, &spec, e.label) {
                Ok(grid) => {
                    counts[k][0] += 1;
                    counts[k][1] += grid.len();
                    for (r, c) in grid {
                        index
                            .write_record([e.id.clone(), e.label.as_str().into(), r.to_string(), c.to_string()])
                            .expect("in-memory write");
                    }
                }
                Err(err) => {
                    warn!("skipping {}: {err}", e.id);
                    counts[k][2] += 1;
                }
            }
        }
        for label in Label::ALL {
            let [images, patches, skipped] = counts[label.index()];
            stats
                .write_record([
                    split.as_str().to_string(),
                    label.as_str().into(),
                    images.to_string(),
                    patches.to_string(),
                    skipped.to_string(),
                ])
                .expect("in-memory write");
            info!("{} {}: {images} images, {patches} patches, {skipped} skipped", split.as_str(), label.as_str());
        }
        let bytes = index.into_inner().expect("in-memory flush");
        write_atomic(&a.out.join(format!("patches-{}.csv", split.as_str())), &bytes)?;
    }
    write_atomic(&a.out.join("patch-stats.csv"), &stats.into_inner().expect("in-memory flush"))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    let mpath = manifest_path(&cfg, a.manifest)?;
    let manifest = read_manifest(&mpath)?;
    if let Some(v) = a.hpf {
        cfg.model.hpf = v;
    }
    let t = &mut cfg.train;
    if let Some(v) = a.epochs {
        t.epochs = v;
        if a.checkpoint_epochs.is_none() {
            t.checkpoint_epochs.retain(|&e| e <= v);
            if !t.checkpoint_epochs.contains(&v) {
                t.checkpoint_epochs.push(v);
            }
        }
    }
    if let Some(v) = a.checkpoint_epochs {
        t.checkpoint_epochs = v;
    }
    if let Some(v) = a.seed {
        t.seed = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = a.run {
        t.run_name = v;
    }
    let p = manifest.patch_spec;
    cfg.data.patch_size = p.patch_size;
    cfg.data.stride_ni = p.stride_ni;
    cfg.data.stride_cg = p.stride_cg;
    cfg.data.manifest = Some(mpath.clone());

    let job = TrainJob {
        model: cfg.model.model_config(p.patch_size)?,
        train: cfg.train.train_config()?,
        manifest,
        manifest_path: mpath,
        out_dir: a.out.clone(),
        run_name: cfg.train.run_name.clone(),
        resume: a.resume,
        eval_batch_size: cfg.train.eval_batch_size,
    };
    create_dir(&a.out)?;
    cfg.echo(&a.out)?;
    let outcome = train(&job)?;
    for path in &outcome.checkpoints {
        println!("{}", path.display());
    }
    Ok(())
}

fn parse_condition(s: &str, default_manifest: Option<&Path>) -> Result<Condition> {
    let (name, rest) = s
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("condition {s:?} is not NAME=RUN[@MANIFEST]")))?;
    let (run, manifest) = match rest.split_once('@') {
        Some((r, m)) => (r, Some(PathBuf::from(m))),
        None => (rest, default_manifest.map(Path::to_path_buf)),
    };
    let manifest = manifest.ok_or_else(|| Error::Usage(format!("condition {name}: no manifest")))?;
    Ok(Condition {
        name: name.into(),
        run: run.into(),
        manifest,
    })
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(m) = a.manifest {
        cfg.data.manifest = Some(m);
    }
    let e = &mut cfg.eval;
    if let Some(v) = a.epochs {
        e.epochs = Some(v);
    }
    if let Some(v) = a.split {
        e.split = v;
    }
    if a.stride.is_some() {
        e.stride = a.stride;
    }
    e.dense_cg |= a.dense_cg;
    let default_manifest = cfg.data.manifest.clone();
    for c in &a.conditions {
        let parsed = parse_condition(c, default_manifest.as_deref())?;
        cfg.eval.conditions.push(ConditionSection {
            name: parsed.name,
            run: parsed.run,
            manifest: Some(parsed.manifest),
        });
    }
    if cfg.eval.conditions.is_empty() {
        return Err(Error::Usage("no conditions to evaluate".into()));
    }
    let conditions = cfg
        .eval
        .conditions
        .iter()
        .map(|c| {
            let manifest = c
                .manifest
                .clone()
                .or_else(|| default_manifest.clone())
                .ok_or_else(|| Error::Usage(format!("condition {}: no manifest", c.name)))?;
            Ok(Condition {
                name: c.name.clone(),
                run: c.run.clone(),
                manifest,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let split = Split::parse(&cfg.eval.split)
        .ok_or_else(|| Error::Usage(format!("unknown split {:?}", cfg.eval.split)))?;
    let epochs = cfg.eval.epochs.clone().unwrap_or_else(|| cfg.train.checkpoint_epochs.clone());
    let options = EvalOptions {
        stride: cfg.eval.stride,
        dense_cg: cfg.eval.dense_cg,
        batch_size: cfg.eval.batch_size,
    };
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
        cfg.echo(dir)?;
    }
    run_experiment(&conditions, &epochs, split, &options, &a.report)?;
    print!("{}", std::fs::read_to_string(&a.report).map_err(|e| Error::Io { path: a.report.clone(), source: e })?);
    Ok(())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let net = load_checkpoint(&a.checkpoint)?.network;
    let rows: Vec<VerdictRow> = a
        .images
        .iter()
        .map(|path| {
            let outcome = classify_image(&net, path, a.stride, 64).and_then(|records| Ok(majority_vote(&records)?));
            outcome.map_err(|e| {
                warn!("{e}");
                (path.to_string_lossy().into_owned(), e.to_string())
            })
        })
        .collect();
    let mut bytes = Vec::new();
    write_verdicts(&mut bytes, &rows).map_err(|e| Error::Usage(e.to_string()))?;
    match &a.out {
        Some(path) => write_atomic(path, &bytes)?,
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e })?,
    }
    if rows.iter().all(|r| r.is_err()) {
        return Err(Error::Usage("no image could be classified".into()));
    }
    Ok(())
}

fn dump_kernels(a: DumpArgs) -> Result<()> {
    let selector = HpfSelector::from_count(a.hpf)
        .ok_or_else(|| Error::Usage(format!("hpf must be 0, 1 or 3, got {}", a.hpf)))?;
    let bank = kernel_bank(selector);
    if bank.is_empty() {
        println!("average pooling, kernel 5, stride 2, pad 2 (no high-pass stencils)");
    }
    for k in bank {
        if a.spec {
            println!("{}", k.to_spec_string());
        } else {
            println!("{}", k.to_text());
        }
    }
    Ok(())
}
