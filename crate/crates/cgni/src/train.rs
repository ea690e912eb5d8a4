//! Epoch loop with checkpointing and CSV logs.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cgni_core::imaging::PatchSet;
use cgni_core::training::{evaluate_patches, make_batches};
use cgni_core::{Manifest, ModelCheckpoint, ModelConfig, Network, PatchSpec, Split, TrainConfig, Trainer};
use log::info;

use crate::checkpoint::{checkpoint_path, load_checkpoint, save_checkpoint};
use crate::dataset::load_split;
use crate::io::create_dir;
use crate::{Error, Result};

/// Everything one training run needs.
#[derive(Clone, Debug)]
pub struct TrainJob {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    pub run_name: String,
    /// Continue from this checkpoint instead of a fresh initialisation.
    pub resume: Option<PathBuf>,
    pub eval_batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub checkpoints: Vec<PathBuf>,
    pub iteration: u64,
    pub epochs: Vec<EpochSummary>,
}

impl TrainJob {
    pub fn prefix(&self) -> PathBuf {
        self.out_dir.join(&self.run_name)
    }

    pub fn loss_log(&self) -> PathBuf {
        self.out_dir.join(format!("{}-loss.csv", self.run_name))
    }

    pub fn val_log(&self) -> PathBuf {
        self.out_dir.join(format!("{}-val.csv", self.run_name))
    }
}

fn csv_writer(path: &Path, append: bool, header: &[&str]) -> Result<csv::Writer<File>> {
    let exists = append && path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(Error::io(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if !exists {
        w.write_record(header).map_err(Error::csv(path))?;
    }
    Ok(w)
}

/// Loads the training split at the manifest strides and the validation
/// split at the inference stride (one window per patch-sized tile).
pub fn load_training_data(job: &TrainJob) -> Result<(PatchSet, PatchSet)> {
    let spec = job.manifest.patch_spec;
    if spec.patch_size != job.model.input_size {
        return Err(Error::Usage(format!(
            "manifest patch size {} differs from model input size {}",
            spec.patch_size, job.model.input_size
        )));
    }
    let (train, ts) = load_split(&job.manifest, &job.manifest_path, Split::Train, &spec)?;
    let val_spec = PatchSpec::uniform(spec.patch_size, spec.patch_size);
    let (val, vs) = load_split(&job.manifest, &job.manifest_path, Split::Validation, &val_spec)?;
    info!(
        "train: {} cg / {} ni patches from {} images; validation: {} patches",
        ts.patches[0],
        ts.patches[1],
        ts.images[0] + ts.images[1],
        vs.patches[0] + vs.patches[1]
    );
    if train.is_empty() {
        return Err(cgni_core::Error::Empty("training split").into());
    }
    if val.is_empty() {
        return Err(cgni_core::Error::Empty("validation split").into());
    }
    Ok((train, val))
}

pub fn train(job: &TrainJob) -> Result<TrainOutcome> {
    let (train_set, val_set) = load_training_data(job)?;
    train_on(job, &train_set, &val_set)
}

/// Runs the epoch loop on already-loaded patch sets.
pub fn train_on(job: &TrainJob, train_set: &PatchSet, val_set: &PatchSet) -> Result<TrainOutcome> {
    job.train.validate()?;
    create_dir(&job.out_dir)?;
    let cfg = &job.train;

    let (mut trainer, first_epoch) = match &job.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.network.config() != &job.model {
                return Err(Error::Usage(format!(
                    "{}: checkpoint architecture differs from the configured model",
                    path.display()
                )));
            }
            info!("resuming from {} at epoch {}, iteration {}", path.display(), ckpt.epoch, ckpt.iteration);
            let epoch = ckpt.epoch;
            let t = Trainer::resume(ckpt.network, ckpt.velocity, ckpt.iteration, cfg.clone())?;
            (t, epoch + 1)
        }
        None => (
            Trainer::new(Network::new(job.model.clone(), cfg.seed)?, cfg.clone())?,
            1,
        ),
    };

    let appending = job.resume.is_some();
    let loss_path = job.loss_log();
    let val_path = job.val_log();
    let mut loss_log = csv_writer(&loss_path, appending, &["iter", "lr", "loss"])?;
    let mut val_log = csv_writer(&val_path, appending, &["epoch", "train_loss", "val_acc"])?;

    if train_set.len() % cfg.batch_size == 1 && cfg.batch_size > 1 {
        info!("the final single-patch batch of each epoch is dropped");
    }

    let mut checkpoints = Vec::new();
    let mut epochs = Vec::new();
    for epoch in first_epoch..=cfg.epochs {
        let started = Instant::now();
        let batches = make_batches(train_set.len(), cfg.batch_size, epoch, cfg.seed, cfg.shuffle)?;
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
        for idx in &batches {
            let (x, labels) = train_set.batch(idx);
            let s = trainer.step(&x, &labels)?;
            loss_log
                .write_record([s.iteration.to_string(), s.lr.to_string(), s.loss.to_string()])
                .map_err(Error::csv(&loss_path))?;
            loss_sum += s.loss;
            correct += s.correct;
            seen += s.batch;
        }
        loss_log.flush().map_err(Error::io(&loss_path))?;

        let (val_acc, _) = evaluate_patches(trainer.network(), val_set, job.eval_batch_size)?;
        let summary = EpochSummary {
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            train_acc: correct as f64 / seen.max(1) as f64,
            val_acc,
        };
        val_log
            .write_record([
                epoch.to_string(),
                summary.train_loss.to_string(),
                summary.val_acc.to_string(),
            ])
            .map_err(Error::csv(&val_path))?;
        val_log.flush().map_err(Error::io(&val_path))?;
        info!(
            "epoch {epoch}/{}: loss {:.5}, train acc {:.4}, val acc {:.4}, iteration {}, {:.1}s",
            cfg.epochs,
            summary.train_loss,
            summary.train_acc,
            summary.val_acc,
            trainer.iteration(),
            started.elapsed().as_secs_f64()
        );
        epochs.push(summary);

        if cfg.checkpoint_epochs.contains(&epoch) {
            let path = checkpoint_path(&job.prefix(), epoch);
            let mut ckpt = ModelCheckpoint::new(trainer.network().clone(), epoch, cfg.seed, trainer.iteration());
            ckpt.velocity = Some(trainer.velocity());
            save_checkpoint(&path, &ckpt)?;
            info!("wrote {}", path.display());
            checkpoints.push(path);
        }
    }
    let iteration = trainer.iteration();
    Ok(TrainOutcome {
        network: trainer.into_network(),
        checkpoints,
        iteration,
        epochs,
    })
}
