//! Classification on the final class-token feature.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, HeadConfig, Provenance};
use crate::data::{batch_indices, Dataset, TaskKind};
use crate::error::{Error, Result};
use crate::nn::activation::softmax_in_place;
use crate::nn::{cosine_lr, AdamW, AdamWConfig, Init, Linear, ParamStore};
use crate::pretrain::trainer::prepare_batch;
use crate::rng::{substream, tag};
use crate::scalar::{lit, Scalar};
use crate::vit::{Capture, Encoder, EncoderConfig, ENCODER_PREFIX};

pub const HEAD_PREFIX: &str = "head.";

/// Where the encoder weights of a fine-tuned model came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderInit {
    Scratch,
    FromCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClsHeadConfig {
    pub num_classes: usize,
    pub init: EncoderInit,
}

/// Encoder plus a linear head on the class token.
#[derive(Debug, Clone)]
pub struct ClsModel<T> {
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub head: Linear,
    pub config: ClsHeadConfig,
}

/// Builds a classifier. Encoder weights come from `pretrained` when given,
/// otherwise from `seed`; the head is always fresh and drawn from `seed`.
pub fn attach_cls_head<T: Scalar>(
    encoder: &EncoderConfig,
    pretrained: Option<&Checkpoint>,
    num_classes: usize,
    seed: u64,
) -> Result<ClsModel<T>> {
    if !encoder.use_class_token {
        return Err(Error::Config("classification needs use_class_token = true".into()));
    }
    if num_classes < 2 {
        return Err(Error::Config(format!("num_classes must be at least 2, got {num_classes}")));
    }
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, encoder, seed)?;
    let head = Linear::new(
        &mut store,
        "head",
        encoder.embed_dim,
        num_classes,
        Init::TruncNormal(0.02),
        true,
        seed,
    );
    if let Some(ck) = pretrained {
        if ck.encoder != *encoder {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint encoder {:?} differs from requested {:?}",
                ck.encoder, encoder
            )));
        }
        ck.load_into(&mut store, ENCODER_PREFIX)?;
    }
    Ok(ClsModel {
        store,
        encoder: enc,
        head,
        config: ClsHeadConfig {
            num_classes,
            init: if pretrained.is_some() {
                EncoderInit::FromCheckpoint
            } else {
                EncoderInit::Scratch
            },
        },
    })
}

struct ClsForward<T> {
    features: Vec<T>,
    probs: Vec<T>,
}

impl<T: Scalar> ClsModel<T> {
    /// Rebuilds a fine-tuned classifier saved with [`ClsModel::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let Some(HeadConfig::Classification(head)) = &ck.head else {
            return Err(Error::CheckpointMismatch("not a classification checkpoint".into()));
        };
        let mut model = attach_cls_head(&ck.encoder, None, head.num_classes, ck.provenance.seed)?;
        ck.load_into(&mut model.store, "")?;
        model.config = head.clone();
        Ok(model)
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn class_features(&self, tokens: &crate::vit::TokenSequence<T>) -> Vec<T> {
        (0..tokens.batch).flat_map(|n| tokens.token(n, 0).to_vec()).collect()
    }

    /// `batch x num_classes` logits.
    pub fn logits(&self, images: &[T], batch: usize) -> Result<Vec<T>> {
        let out = self.encoder.forward(&self.store, images, batch, &Capture::default())?;
        Ok(self.head.forward(&self.store, &self.class_features(&out.tokens), batch))
    }

    /// Softmax probabilities, `batch x num_classes`.
    pub fn predict_proba(&self, images: &[T], batch: usize) -> Result<Vec<T>> {
        let mut logits = self.logits(images, batch)?;
        for row in logits.chunks_exact_mut(self.num_classes()) {
            softmax_in_place(row);
        }
        Ok(logits)
    }

    fn forward_probs(&self, features: Vec<T>, batch: usize) -> ClsForward<T> {
        let mut probs = self.head.forward(&self.store, &features, batch);
        for row in probs.chunks_exact_mut(self.num_classes()) {
            softmax_in_place(row);
        }
        ClsForward { features, probs }
    }

    /// Weighted cross-entropy, normalized by the total weight of the batch.
    /// Accumulates gradients and returns the loss.
    pub fn loss_and_grad(&mut self, images: &[T], labels: &[usize], class_weights: Option<&[f64]>) -> Result<T> {
        let batch = labels.len();
        let c = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Label {
                label: bad,
                num_classes: c,
            });
        }
        let encoder_trainable = self
            .store
            .iter()
            .any(|p| p.trainable && p.name.starts_with(ENCODER_PREFIX));
        let (out, cache) = self
            .encoder
            .forward_train(&self.store, images, batch, &Capture::default())?;
        let fwd = self.forward_probs(self.class_features(&out.tokens), batch);
        let weights: Vec<T> = labels
            .iter()
            .map(|&l| lit(class_weights.map_or(1.0, |w| w[l])))
            .collect();
        let total = weights.iter().fold(T::zero(), |a, &w| a + w);
        let mut loss = T::zero();
        let mut dlogits = fwd.probs.clone();
        for (n, &y) in labels.iter().enumerate() {
            let p = fwd.probs[n * c + y].max(T::min_positive_value());
            loss += -weights[n] * p.ln();
            dlogits[n * c + y] -= T::one();
            for v in &mut dlogits[n * c..(n + 1) * c] {
                *v = *v * weights[n] / total;
            }
        }
        let loss = loss / total;
        let dfeat = self
            .head
            .backward(&mut self.store, &fwd.features, &dlogits, batch, encoder_trainable);
        if let Some(dfeat) = dfeat {
            let cfg = &self.encoder.config;
            let len = cfg.seq_len();
            let d = cfg.embed_dim;
            let mut d_tokens = vec![T::zero(); batch * len * d];
            for n in 0..batch {
                d_tokens[n * len * d..n * len * d + d].copy_from_slice(&dfeat[n * d..(n + 1) * d]);
            }
            self.encoder.backward(&mut self.store, &cache, Some(&d_tokens), &[]);
        }
        Ok(loss)
    }

    pub fn checkpoint(&self, provenance: Provenance) -> Checkpoint {
        Checkpoint::from_store(
            &self.encoder.config,
            Some(HeadConfig::Classification(self.config.clone())),
            &self.store,
            provenance,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneClsConfig {
    pub optimizer: AdamWConfig,
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Freeze the encoder and train only the head.
    pub linear_probe: bool,
    /// Weight each class by `N / (C * n_c)`.
    pub class_weights: bool,
    pub augment: bool,
}

impl Default for FinetuneClsConfig {
    fn default() -> Self {
        FinetuneClsConfig {
            optimizer: AdamWConfig::new(5e-4, 0.05),
            min_lr: 1e-6,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            linear_probe: false,
            class_weights: false,
            augment: false,
        }
    }
}

impl FinetuneClsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr >= 0.0) || self.optimizer.weight_decay < 0.0 {
            return Err(Error::Config("learning_rate and weight_decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of [`finetune_cls`].
#[derive(Debug, Clone)]
pub struct ClsTrainReport {
    /// Weights with the lowest end-of-epoch training loss.
    pub best: Checkpoint,
    pub best_epoch: usize,
    /// Pre-update loss of every step.
    pub step_losses: Vec<f64>,
    /// Full-pass training loss after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Full-pass training accuracy (percent) after each epoch.
    pub epoch_accuracy: Vec<f64>,
    /// Steps taken when training accuracy first reached 100%.
    pub steps_to_full_accuracy: Option<usize>,
    /// Accuracy (percent) of the model before any update.
    pub initial_accuracy: f64,
}

/// Inverse-frequency weights `N / (C * n_c)`; absent classes get weight 0.
pub fn inverse_frequency_weights(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
        .iter()
        .map(|&n| {
            if n == 0 {
                0.0
            } else {
                labels.len() as f64 / (num_classes * n) as f64
            }
        })
        .collect()
}

fn dataset_labels(dataset: &Dataset, num_classes: usize) -> Result<Vec<usize>> {
    if dataset.task != TaskKind::Classification {
        return Err(Error::Config("classification fine-tuning needs a labeled manifest".into()));
    }
    let labels: Vec<usize> = dataset
        .samples
        .iter()
        .map(|s| s.label.expect("classification samples carry labels"))
        .collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Label {
            label: bad,
            num_classes,
        });
    }
    Ok(labels)
}

/// Loss and accuracy (percent) over the whole dataset, in chunks of `batch`.
pub fn evaluate_cls<T: Scalar>(model: &ClsModel<T>, dataset: &Dataset, batch: usize) -> Result<(f64, f64)> {
    let c = model.num_classes();
    let labels = dataset_labels(dataset, c)?;
    let mut loss = 0.0;
    let mut correct = 0;
    let order: Vec<usize> = (0..dataset.len()).collect();
    for idx in order.chunks(batch.max(1)) {
        let b = dataset.batch::<T>(idx);
        let probs = model.predict_proba(&b.images, idx.len())?;
        for (k, &i) in idx.iter().enumerate() {
            let row = &probs[k * c..(k + 1) * c];
            let p = row[labels[i]].to_f64().unwrap_or(0.0).max(f64::MIN_POSITIVE);
            loss -= p.ln();
            if argmax(row) == labels[i] {
                correct += 1;
            }
        }
    }
    let n = dataset.len() as f64;
    Ok((loss / n, 100.0 * correct as f64 / n))
}

/// Index of the largest value; the first wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Full fine-tuning (or linear probing) with cross-entropy and AdamW.
pub fn finetune_cls<T: Scalar>(
    dataset: &Dataset,
    model: &mut ClsModel<T>,
    config: &FinetuneClsConfig,
) -> Result<ClsTrainReport> {
    config.validate()?;
    let c = model.num_classes();
    let labels = dataset_labels(dataset, c)?;
    if dataset.size != model.encoder.config.image_size {
        return Err(Error::Shape(format!(
            "dataset working size {} differs from encoder image_size {}",
            dataset.size, model.encoder.config.image_size
        )));
    }
    let weights = config.class_weights.then(|| inverse_frequency_weights(&labels, c));
    model.store.set_trainable(ENCODER_PREFIX, !config.linear_probe);
    let mut optimizer = AdamW::new(config.optimizer, &model.store);
    let per_epoch = dataset.len().div_ceil(config.batch_size);
    let total = per_epoch * config.epochs;
    let eval_batch = config.batch_size.max(16);
    let (_, initial_accuracy) = evaluate_cls(model, dataset, eval_batch)?;
    let mut step_losses = Vec::with_capacity(total);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_accuracy = Vec::with_capacity(config.epochs);
    let mut steps_to_full = (initial_accuracy == 100.0).then_some(0);
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;
    for epoch in 0..config.epochs {
        let mut shuffle = substream(config.seed, &[tag::SHUFFLE, epoch as u64]);
        for idx in batch_indices(dataset.len(), config.batch_size, true, &mut shuffle)? {
            let step = step_losses.len();
            let batch = prepare_batch::<T>(dataset, &idx, config.seed, step, config.augment);
            let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            model.store.zero_grad();
            let loss = model.loss_and_grad(&batch.images, &ys, weights.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: "classification loss at step index",
                    index: step,
                });
            }
            let lr = cosine_lr(config.optimizer.lr, config.min_lr, step, total);
            optimizer.update(&mut model.store, lr);
            step_losses.push(loss.to_f64().expect("finite"));
        }
        let (loss, acc) = evaluate_cls(model, dataset, eval_batch)?;
        epoch_losses.push(loss);
        epoch_accuracy.push(acc);
        if acc == 100.0 && steps_to_full.is_none() {
            steps_to_full = Some(step_losses.len());
        }
        if best.as_ref().is_none_or(|(l, _, _)| loss < *l) {
            best = Some((loss, epoch + 1, model.store.snapshot()));
        }
    }
    let (_, best_epoch, weights_best) = best.expect("at least one epoch");
    let last = model.store.snapshot();
    model.store.restore(&weights_best);
    let ck = model.checkpoint(Provenance {
        seed: config.seed,
        epochs_completed: config.epochs,
        steps_completed: step_losses.len(),
        loss_history: step_losses.clone(),
        training: serde_json::to_value(config).expect("config serializes"),
        ..Default::default()
    });
    model.store.restore(&last);
    Ok(ClsTrainReport {
        best: ck,
        best_epoch,
        step_losses,
        epoch_losses,
        epoch_accuracy,
        steps_to_full_accuracy: steps_to_full,
        initial_accuracy,
    })
}

/// One row of a prediction export.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image: String,
    pub label: Option<usize>,
    pub probs: Vec<f64>,
}

/// Predicted probabilities for every sample of `dataset`.
pub fn predict_dataset<T: Scalar>(
    model: &ClsModel<T>,
    dataset: &Dataset,
    names: &[String],
    batch: usize,
) -> Result<Vec<Prediction>> {
    let c = model.num_classes();
    let mut out = Vec::with_capacity(dataset.len());
    let order: Vec<usize> = (0..dataset.len()).collect();
    for idx in order.chunks(batch.max(1)) {
        let b = dataset.batch::<T>(idx);
        let probs = model.predict_proba(&b.images, idx.len())?;
        for (k, &i) in idx.iter().enumerate() {
            out.push(Prediction {
                image: names[i].clone(),
                label: dataset.samples[i].label,
                probs: probs[k * c..(k + 1) * c]
                    .iter()
                    .map(|v| v.to_f64().unwrap_or(f64::NAN))
                    .collect(),
            });
        }
    }
    Ok(out)
}

/// CSV with columns `path,label,prob_0..prob_{C-1}`.
pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let c = predictions.first().map_or(0, |p| p.probs.len());
    let mut header = vec!["path".to_string(), "label".to_string()];
    header.extend((0..c).map(|k| format!("prob_{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for p in predictions {
        let mut row = vec![p.image.clone(), p.label.map(|l| l.to_string()).unwrap_or_default()];
        row.extend(p.probs.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_predictions_csv`].
pub fn read_predictions_csv(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = |message: String| Error::ManifestRow {
            path: path.to_path_buf(),
            row: row + 2,
            message,
        };
        if rec.len() < 3 {
            return Err(bad("expected path, label and at least one probability".into()));
        }
        let label = match &rec[1] {
            "" => None,
            s => Some(s.parse().map_err(|_| bad(format!("bad label `{s}`")))?),
        };
        let probs = (2..rec.len())
            .map(|k| rec[k].parse::<f64>().map_err(|_| bad(format!("bad probability `{}`", &rec[k]))))
            .collect::<Result<Vec<_>>>()?;
        out.push(Prediction {
            image: rec[0].to_string(),
            label,
            probs,
        });
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            image_size: 16,
            patch_size: 8,
            embed_dim: 8,
            depth: 1,
            num_heads: 2,
            mlp_ratio: 2.0,
            use_class_token: true,
        }
    }

    #[test]
    fn logits_have_one_entry_per_class() {
        let m = attach_cls_head::<f32>(&tiny(), None, 2, 1).unwrap();
        assert_eq!(m.logits(&vec![0.5; 256], 1).unwrap().len(), 2);
    }

    #[test]
    fn zero_head_gives_uniform_probabilities() {
        let mut m = attach_cls_head::<f64>(&tiny(), None, 3, 1).unwrap();
        for p in m.store.iter_mut().filter(|p| p.name.starts_with(HEAD_PREFIX)) {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let p = m.predict_proba(&vec![0.3; 512], 2).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn scratch_and_pretrained_share_the_head() {
        let a = attach_cls_head::<f32>(&tiny(), None, 2, 5).unwrap();
        let mut store = ParamStore::<f32>::new();
        Encoder::new(&mut store, &tiny(), 99).unwrap();
        let ck = Checkpoint::from_store(&tiny(), None, &store, Provenance::default());
        let b = attach_cls_head::<f32>(&tiny(), Some(&ck), 2, 5).unwrap();
        for (pa, pb) in a.store.iter().zip(b.store.iter()) {
            if pa.name.starts_with(HEAD_PREFIX) {
                assert_eq!(pa.value, pb.value);
            }
        }
        let enc_a = a.store.by_name("encoder.pos_embed").unwrap();
        let enc_b = b.store.by_name("encoder.pos_embed").unwrap();
        assert_ne!(enc_a.value, enc_b.value);
    }

    #[test]
    fn rejects_encoder_without_class_token() {
        let mut cfg = tiny();
        cfg.use_class_token = false;
        assert!(attach_cls_head::<f32>(&cfg, None, 2, 1).is_err());
    }

    #[test]
    fn inverse_frequency() {
        assert_eq!(inverse_frequency_weights(&[0, 0, 0, 1], 2), vec![4.0 / 6.0, 2.0]);
    }
}
