//! The group-masked pretraining loop.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_checkpoint, Checkpoint, HeadConfig, Provenance};
use crate::data::{augment, batch_indices, Batch, Dataset, ImageSample, SampleManifest, TaskKind};
use crate::error::{Error, Result};
use crate::gmml::{apply_corruption, CorruptionSpec};
use crate::nn::{cosine_lr, AdamW, AdamWConfig};
use crate::pretrain::decoder::DecoderConfig;
use crate::pretrain::loss::LossReduction;
use crate::pretrain::model::PretrainModel;
use crate::rng::{substream, tag};
use crate::scalar::Scalar;
use crate::vit::EncoderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub optimizer: AdamWConfig,
    /// Floor of the cosine learning-rate decay.
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub corruption: CorruptionSpec,
    pub seed: u64,
    pub loss_reduction: LossReduction,
    /// Random flip and crop before corruption.
    pub augment: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            optimizer: AdamWConfig::new(5e-4, 0.05),
            min_lr: 1e-6,
            epochs: 100,
            batch_size: 8,
            corruption: CorruptionSpec::default(),
            seed: 0,
            loss_reduction: LossReduction::MeanMasked,
            augment: true,
            checkpoint_every: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.optimizer.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.corruption.validate()
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size)
    }
}

/// Loads, augments and stacks the samples for one step.
pub(crate) fn prepare_batch<T: Scalar>(
    dataset: &Dataset,
    indices: &[usize],
    seed: u64,
    step: usize,
    do_augment: bool,
) -> Batch<T> {
    let owned: Vec<ImageSample> = indices
        .iter()
        .map(|&i| {
            let s = &dataset.samples[i];
            if do_augment {
                augment(s, &mut substream(seed, &[tag::AUGMENT, step as u64, i as u64]))
            } else {
                s.clone()
            }
        })
        .collect();
    let refs: Vec<&ImageSample> = owned.iter().collect();
    Batch::from_samples(&refs, indices.to_vec())
}

/// One optimization step on the samples `indices`. Returns the pre-update loss.
pub fn pretrain_step<T: Scalar>(
    model: &mut PretrainModel<T>,
    optimizer: &mut AdamW<T>,
    dataset: &Dataset,
    indices: &[usize],
    config: &PretrainConfig,
    step: usize,
    lr: f64,
) -> Result<T> {
    let clean = prepare_batch::<T>(dataset, indices, config.seed, step, config.augment);
    let mut rng = substream(config.seed, &[tag::CORRUPT, step as u64]);
    let corrupted = apply_corruption(&clean, model.encoder.config.patch_size, &config.corruption, &mut rng)?;
    model.store.zero_grad();
    let loss = model.loss_and_grad(
        &corrupted.images,
        &clean.images,
        &corrupted.masks,
        clean.len(),
        config.loss_reduction,
    )?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "pretraining loss at step index",
            index: step,
        });
    }
    optimizer.update(&mut model.store, lr);
    Ok(loss)
}

/// Where to write periodic checkpoints and what to resume from.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
}

fn snapshot<T: Scalar>(
    model: &PretrainModel<T>,
    optimizer: &AdamW<T>,
    config: &PretrainConfig,
    epochs: usize,
    history: &[f64],
) -> Checkpoint {
    Checkpoint::from_store(
        &model.encoder.config,
        Some(HeadConfig::Reconstruction(model.decoder.config.clone())),
        &model.store,
        Provenance {
            seed: config.seed,
            epochs_completed: epochs,
            steps_completed: history.len(),
            loss_history: history.to_vec(),
            training: serde_json::to_value(config).expect("config serializes"),
            ..Default::default()
        },
    )
    .with_optimizer(optimizer, &model.store)
}

/// Trains for `config.epochs` epochs and returns the final checkpoint, which
/// includes decoder weights, optimizer state and the per-step loss history.
pub fn run_pretraining<T: Scalar>(
    dataset: &Dataset,
    encoder: &EncoderConfig,
    decoder: &DecoderConfig,
    config: &PretrainConfig,
    options: &RunOptions,
) -> Result<Checkpoint> {
    config.validate()?;
    if dataset.size != encoder.image_size {
        return Err(Error::Shape(format!(
            "dataset working size {} differs from encoder image_size {}",
            dataset.size, encoder.image_size
        )));
    }
    let spec = &config.corruption;
    let alien = spec.mode.uses_alien() && spec.alien_fraction > 0.0;
    if alien && (dataset.len() < 2 || dataset.len() % config.batch_size == 1) {
        return Err(Error::Config(format!(
            "alien-patch corruption needs every batch to hold at least 2 samples; \
             {} samples with batch_size {} leave a single-sample batch",
            dataset.len(),
            config.batch_size
        )));
    }
    let mut model = PretrainModel::<T>::new(encoder, decoder, config.seed)?;
    let mut optimizer = AdamW::new(config.optimizer, &model.store);
    let mut history = Vec::new();
    let mut start_epoch = 0;
    if let Some(ck) = &options.resume {
        if ck.encoder != *encoder || ck.head != Some(HeadConfig::Reconstruction(decoder.clone())) {
            return Err(Error::CheckpointMismatch(
                "resume checkpoint was written for a different architecture".into(),
            ));
        }
        ck.load_into(&mut model.store, "")?;
        optimizer = ck.restore_optimizer(&model.store)?;
        optimizer.config = config.optimizer;
        history = ck.provenance.loss_history.clone();
        start_epoch = ck.provenance.epochs_completed;
    }
    let per_epoch = config.steps_per_epoch(dataset.len());
    let total = per_epoch * config.epochs;
    if history.len() != start_epoch * per_epoch {
        return Err(Error::CheckpointMismatch(format!(
            "resume checkpoint has {} steps, expected {} after {start_epoch} epochs",
            history.len(),
            start_epoch * per_epoch
        )));
    }
    for epoch in start_epoch..config.epochs {
        let mut shuffle = substream(config.seed, &[tag::SHUFFLE, epoch as u64]);
        for indices in batch_indices(dataset.len(), config.batch_size, true, &mut shuffle)? {
            let step = history.len();
            let lr = cosine_lr(config.optimizer.lr, config.min_lr, step, total);
            let loss = pretrain_step(&mut model, &mut optimizer, dataset, &indices, config, step, lr)?;
            history.push(loss.to_f64().expect("finite"));
        }
        let done = epoch + 1;
        if let Some(dir) = &options.checkpoint_dir {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.epochs {
                let ck = snapshot(&model, &optimizer, config, done, &history);
                save_checkpoint(&dir.join(format!("epoch_{done:04}.sscxr")), &ck)?;
            }
        }
    }
    Ok(snapshot(&model, &optimizer, config, config.epochs, &history))
}

/// [`run_pretraining`] over an unlabeled manifest.
pub fn run_pretraining_manifest<T: Scalar>(
    manifest: &SampleManifest,
    encoder: &EncoderConfig,
    decoder: &DecoderConfig,
    config: &PretrainConfig,
    options: &RunOptions,
) -> Result<Checkpoint> {
    if manifest.task != TaskKind::Unlabeled {
        return Err(Error::Config(format!(
            "pretraining expects an unlabeled manifest, got {:?} data",
            manifest.task
        )));
    }
    let dataset = Dataset::load(manifest, encoder.image_size)?;
    run_pretraining::<T>(&dataset, encoder, decoder, config, options)
}

/// Writes `step,loss` rows, steps counted from 1.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
