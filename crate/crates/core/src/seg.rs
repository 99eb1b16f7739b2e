//! UNETR-style segmentation: a convolutional decoder over token grids tapped
//! at several encoder depths.
//!
//! Stage schedule, for patch size `p = 2^s`, grid `g = H / p` and taps
//! `t_1 < ... < t_m`:
//!
//! - stage 0 (the bottleneck) holds tap `t_m` as a `g x g x d` map;
//! - stage `k` in `1..=s` upsamples the previous stage with a 2x2 transposed
//!   convolution to `g * 2^k` pixels and `C_k = base_width * 2^(s - k)`
//!   channels, concatenates its skips, then applies conv3x3 + ReLU;
//! - tap `t_{m-k}` is a skip of stage `min(k, s)`, brought there by a chain of
//!   as many transposed convolutions (ReLU between them);
//! - the input image, after conv3x3 + ReLU to `C_s` channels, is a skip of
//!   stage `s`;
//! - a 1x1 convolution maps stage `s` to one logit per pixel.
//!
//! A tap equal to the encoder depth reads the final normalized tokens; other
//! taps read raw block outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, HeadConfig, Provenance};
use crate::cls::EncoderInit;
use crate::data::image_io::{save_gray_bytes, save_rgb_png};
use crate::data::{batch_indices, Dataset, TaskKind};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::activation::{relu, relu_backward, sigmoid, softplus};
use crate::nn::{cosine_lr, AdamW, AdamWConfig, Conv2d, ConvTranspose2x2, MapShape, ParamStore};
use crate::rng::{substream, tag};
use crate::scalar::{count, lit, Scalar};
use crate::vit::{Capture, Encoder, EncoderCache, EncoderConfig, ENCODER_PREFIX};

pub const SEG_PREFIX: &str = "seg.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegDecoderConfig {
    /// 1-based encoder blocks whose outputs feed the decoder.
    pub tap_layers: Vec<usize>,
    /// Channels of the last (full-resolution) stage; earlier stages double.
    pub base_width: usize,
    pub init: EncoderInit,
}

impl Default for SegDecoderConfig {
    fn default() -> Self {
        SegDecoderConfig::for_depth(12)
    }
}

/// One decoder stage of the schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub index: usize,
    /// Feature map side length.
    pub size: usize,
    pub channels: usize,
    /// Taps fused at this stage (the bottleneck tap for stage 0).
    pub taps: Vec<usize>,
    pub image_skip: bool,
}

impl SegDecoderConfig {
    /// Four evenly spaced taps ending at the last block (3, 6, 9, 12 for depth 12).
    pub fn for_depth(depth: usize) -> Self {
        let mut taps: Vec<usize> = (1..=4).map(|k| (k * depth / 4).max(1)).collect();
        taps.dedup();
        SegDecoderConfig {
            tap_layers: taps,
            base_width: 16,
            init: EncoderInit::Scratch,
        }
    }

    pub fn validate(&self, encoder: &EncoderConfig) -> Result<()> {
        let p = encoder.patch_size;
        if p < 2 || !p.is_power_of_two() {
            return Err(Error::Config(format!(
                "segmentation needs a power-of-two patch_size of at least 2, got {p}"
            )));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be positive".into()));
        }
        if self.tap_layers.is_empty() {
            return Err(Error::Config("tap_layers must not be empty".into()));
        }
        if self.tap_layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("tap_layers must be strictly increasing".into()));
        }
        if let Some(&t) = self.tap_layers.iter().find(|&&t| t == 0 || t > encoder.depth) {
            return Err(Error::Config(format!(
                "tap layer {t} outside 1..={}",
                encoder.depth
            )));
        }
        Ok(())
    }

    /// Number of upsampling stages, `log2(p)`.
    pub fn num_stages(encoder: &EncoderConfig) -> usize {
        encoder.patch_size.trailing_zeros() as usize
    }

    /// Channels of stage `k`: `d` for the bottleneck, then halving.
    pub fn stage_channels(&self, encoder: &EncoderConfig, k: usize) -> usize {
        if k == 0 {
            encoder.embed_dim
        } else {
            self.base_width << (Self::num_stages(encoder) - k)
        }
    }

    /// Stage that tap number `j` (0-based, ascending) is fused into.
    fn tap_stage(&self, encoder: &EncoderConfig, j: usize) -> usize {
        let m = self.tap_layers.len();
        (m - 1 - j).min(Self::num_stages(encoder))
    }

    pub fn schedule(&self, encoder: &EncoderConfig) -> Result<Vec<Stage>> {
        self.validate(encoder)?;
        let s = Self::num_stages(encoder);
        let g = encoder.grid();
        let mut stages: Vec<Stage> = (0..=s)
            .map(|k| Stage {
                index: k,
                size: g << k,
                channels: self.stage_channels(encoder, k),
                taps: Vec::new(),
                image_skip: k == s,
            })
            .collect();
        for (j, &t) in self.tap_layers.iter().enumerate() {
            stages[self.tap_stage(encoder, j)].taps.push(t);
        }
        Ok(stages)
    }
}

#[derive(Debug, Clone)]
struct SkipChain {
    tap: usize,
    stage: usize,
    deconvs: Vec<ConvTranspose2x2>,
}

/// Encoder plus convolutional decoder.
#[derive(Debug, Clone)]
pub struct SegModel<T> {
    pub store: ParamStore<T>,
    pub encoder: Encoder,
    pub config: SegDecoderConfig,
    stages: Vec<Stage>,
    ups: Vec<ConvTranspose2x2>,
    fuses: Vec<Conv2d>,
    chains: Vec<SkipChain>,
    image_skip: Conv2d,
    head: Conv2d,
}

struct ChainCache<T> {
    inputs: Vec<(Vec<T>, MapShape)>,
    /// Post-activation outputs of every deconv except the last.
    hidden: Vec<Vec<T>>,
}

struct StageCache<T> {
    up_input: (Vec<T>, MapShape),
    concat_shape: MapShape,
    col: Vec<T>,
    out: Vec<T>,
}

pub struct SegCache<T> {
    encoder: EncoderCache<T>,
    chains: Vec<ChainCache<T>>,
    image_col: Vec<T>,
    image_out: Vec<T>,
    stages: Vec<StageCache<T>>,
    head_col: Vec<T>,
    batch: usize,
}

fn concat<T: Scalar>(parts: &[(&[T], usize)], pixels: usize) -> Vec<T> {
    let total: usize = parts.iter().map(|p| p.1).sum();
    let mut out = Vec::with_capacity(pixels * total);
    for px in 0..pixels {
        for (data, c) in parts {
            out.extend_from_slice(&data[px * c..(px + 1) * c]);
        }
    }
    out
}

fn split<T: Scalar>(data: &[T], widths: &[usize], pixels: usize) -> Vec<Vec<T>> {
    let total: usize = widths.iter().sum();
    let mut out: Vec<Vec<T>> = widths.iter().map(|&c| Vec::with_capacity(pixels * c)).collect();
    for px in 0..pixels {
        let mut off = px * total;
        for (o, &c) in out.iter_mut().zip(widths) {
            o.extend_from_slice(&data[off..off + c]);
            off += c;
        }
    }
    out
}

/// Builds a segmentation model. Encoder weights come from `pretrained` when
/// given; decoder weights are always fresh.
pub fn attach_seg_decoder<T: Scalar>(
    encoder: &EncoderConfig,
    pretrained: Option<&Checkpoint>,
    config: &SegDecoderConfig,
    seed: u64,
) -> Result<SegModel<T>> {
    let stages = config.schedule(encoder)?;
    let s = stages.len() - 1;
    let mut store = ParamStore::new();
    let enc = Encoder::new(&mut store, encoder, seed)?;
    let p = SEG_PREFIX;
    let ch = |k: usize| config.stage_channels(encoder, k);
    let ups = (1..=s)
        .map(|k| ConvTranspose2x2::new(&mut store, &format!("{p}up{k}"), ch(k - 1), ch(k), seed))
        .collect();
    let chains: Vec<SkipChain> = config
        .tap_layers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j + 1 < config.tap_layers.len())
        .map(|(j, &t)| {
            let stage = config.tap_stage(encoder, j);
            SkipChain {
                tap: t,
                stage,
                deconvs: (1..=stage)
                    .map(|i| ConvTranspose2x2::new(&mut store, &format!("{p}skip{t}.{i}"), ch(i - 1), ch(i), seed))
                    .collect(),
            }
        })
        .collect();
    let image_skip = Conv2d::new(&mut store, &format!("{p}image_skip"), 1, ch(s), 3, seed);
    let fuses = (1..=s)
        .map(|k| {
            let skips: usize = chains.iter().filter(|c| c.stage == k).count() * ch(k);
            let img = if k == s { ch(s) } else { 0 };
            Conv2d::new(&mut store, &format!("{p}fuse{k}"), ch(k) + skips + img, ch(k), 3, seed)
        })
        .collect();
    let head = Conv2d::new(&mut store, &format!("{p}head"), ch(s), 1, 1, seed);
    if let Some(ck) = pretrained {
        if ck.encoder != *encoder {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint encoder {:?} differs from requested {:?}",
                ck.encoder, encoder
            )));
        }
        ck.load_into(&mut store, ENCODER_PREFIX)?;
    }
    let mut config = config.clone();
    config.init = if pretrained.is_some() {
        EncoderInit::FromCheckpoint
    } else {
        EncoderInit::Scratch
    };
    Ok(SegModel {
        store,
        encoder: enc,
        config,
        stages,
        ups,
        fuses,
        chains,
        image_skip,
        head,
    })
}

impl<T: Scalar> SegModel<T> {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let Some(HeadConfig::Segmentation(cfg)) = &ck.head else {
            return Err(Error::CheckpointMismatch("not a segmentation checkpoint".into()));
        };
        let mut model = attach_seg_decoder(&ck.encoder, None, cfg, ck.provenance.seed)?;
        ck.load_into(&mut model.store, "")?;
        model.config = cfg.clone();
        Ok(model)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn checkpoint(&self, provenance: Provenance) -> Checkpoint {
        Checkpoint::from_store(
            &self.encoder.config,
            Some(HeadConfig::Segmentation(self.config.clone())),
            &self.store,
            provenance,
        )
    }

    fn capture(&self) -> Capture {
        let depth = self.encoder.config.depth;
        Capture {
            taps: self.config.tap_layers.iter().copied().filter(|&t| t != depth).collect(),
            attention: false,
        }
    }

    /// Grid map (`batch x g x g x d`) of tap `t`.
    fn tap_map(&self, tokens: &crate::vit::TokenSequence<T>, taps: &[(usize, Vec<T>)], t: usize) -> Vec<T> {
        let seq = if t == self.encoder.config.depth {
            tokens.clone()
        } else {
            let data = taps.iter().find(|(l, _)| *l == t).expect("captured tap").1.clone();
            crate::vit::TokenSequence { data, ..tokens.clone() }
        };
        seq.patch_tokens()
    }

    /// Per-pixel logits, `batch x H x W`, with an optional cache for backward.
    fn run(&self, images: &[T], batch: usize, train: bool) -> Result<(Vec<T>, Option<SegCache<T>>)> {
        let cfg = &self.encoder.config;
        let (out, enc_cache) = if train {
            let (o, c) = self.encoder.forward_train(&self.store, images, batch, &self.capture())?;
            (o, Some(c))
        } else {
            (self.encoder.forward(&self.store, images, batch, &self.capture())?, None)
        };
        let g = cfg.grid();
        let s = self.stages.len() - 1;
        let grid_shape = MapShape::new(batch, g, g, cfg.embed_dim);
        let mut chain_caches = Vec::with_capacity(self.chains.len());
        let mut skips: Vec<(usize, Vec<T>)> = Vec::new();
        for chain in &self.chains {
            let mut x = self.tap_map(&out.tokens, &out.taps, chain.tap);
            let mut shape = grid_shape;
            let mut cc = ChainCache {
                inputs: Vec::new(),
                hidden: Vec::new(),
            };
            for (i, dc) in chain.deconvs.iter().enumerate() {
                let y = dc.forward(&self.store, &x, shape);
                let next = dc.output_shape(shape);
                if train {
                    cc.inputs.push((std::mem::take(&mut x), shape));
                }
                x = if i + 1 < chain.deconvs.len() {
                    let r = relu(&y);
                    if train {
                        cc.hidden.push(r.clone());
                    }
                    r
                } else {
                    y
                };
                shape = next;
            }
            skips.push((chain.stage, x));
            chain_caches.push(cc);
        }
        let full = MapShape::new(batch, cfg.image_size, cfg.image_size, 1);
        let (img_pre, image_col) = self.image_skip.forward(&self.store, images, full);
        let image_out = relu(&img_pre);
        let deepest = *self.config.tap_layers.last().expect("validated");
        let mut h = self.tap_map(&out.tokens, &out.taps, deepest);
        let mut shape = grid_shape;
        let mut stage_caches = Vec::with_capacity(s);
        for k in 1..=s {
            let up = self.ups[k - 1].forward(&self.store, &h, shape);
            let up_shape = self.ups[k - 1].output_shape(shape);
            let mut parts: Vec<(&[T], usize)> = vec![(&up, up_shape.channels)];
            for (_, m) in skips.iter().filter(|(st, _)| *st == k) {
                parts.push((m, up_shape.channels));
            }
            if k == s {
                parts.push((&image_out, self.image_skip.out_ch));
            }
            let cat_c: usize = parts.iter().map(|p| p.1).sum();
            let cat = concat(&parts, up_shape.pixels());
            let cat_shape = MapShape::new(batch, up_shape.height, up_shape.width, cat_c);
            let (pre, col) = self.fuses[k - 1].forward(&self.store, &cat, cat_shape);
            let act = relu(&pre);
            let prev = std::mem::replace(&mut h, act);
            if train {
                stage_caches.push(StageCache {
                    up_input: (prev, shape),
                    concat_shape: cat_shape,
                    col,
                    out: h.clone(),
                });
            }
            shape = MapShape::new(batch, up_shape.height, up_shape.width, self.fuses[k - 1].out_ch);
        }
        let (logits, head_col) = self.head.forward(&self.store, &h, shape);
        let cache = enc_cache.map(|encoder| SegCache {
            encoder,
            chains: chain_caches,
            image_col,
            image_out,
            stages: stage_caches,
            head_col,
            batch,
        });
        Ok((logits, cache))
    }

    pub fn logits(&self, images: &[T], batch: usize) -> Result<Vec<T>> {
        Ok(self.run(images, batch, false)?.0)
    }

    /// Foreground probabilities, `batch x H x W`, in (0, 1).
    pub fn seg_forward(&self, images: &[T], batch: usize) -> Result<Vec<T>> {
        Ok(self.logits(images, batch)?.into_iter().map(sigmoid).collect())
    }

    fn backward(&mut self, cache: &SegCache<T>, d_logits: &[T]) {
        let cfg = self.encoder.config.clone();
        let s = self.stages.len() - 1;
        let batch = cache.batch;
        let size = cfg.image_size;
        let last_shape = MapShape::new(batch, size, size, self.head.in_ch);
        let mut dh = self
            .head
            .backward(&mut self.store, &cache.head_col, d_logits, last_shape, true)
            .expect("dx");
        let mut d_skips: Vec<Option<Vec<T>>> = vec![None; self.chains.len()];
        let mut d_image_out: Option<Vec<T>> = None;
        for k in (1..=s).rev() {
            let sc = &cache.stages[k - 1];
            let dpre = relu_backward(&sc.out, &dh);
            let dcat = self.fuses[k - 1]
                .backward(&mut self.store, &sc.col, &dpre, sc.concat_shape, true)
                .expect("dx");
            let c = self.ups[k - 1].out_ch;
            let mut widths = vec![c];
            let stage_chains: Vec<usize> = (0..self.chains.len()).filter(|&i| self.chains[i].stage == k).collect();
            widths.extend(stage_chains.iter().map(|_| c));
            if k == s {
                widths.push(self.image_skip.out_ch);
            }
            let mut parts = split(&dcat, &widths, sc.concat_shape.pixels()).into_iter();
            let dup = parts.next().expect("up part");
            for &i in &stage_chains {
                d_skips[i] = parts.next();
            }
            if k == s {
                d_image_out = parts.next();
            }
            let (x, shape) = &sc.up_input;
            dh = self.ups[k - 1]
                .backward(&mut self.store, x, &dup, *shape, true)
                .expect("dx");
        }
        let full = MapShape::new(batch, size, size, 1);
        let d_img_pre = relu_backward(&cache.image_out, &d_image_out.expect("image skip"));
        self.image_skip
            .backward(&mut self.store, &cache.image_col, &d_img_pre, full, false);
        // Gradients w.r.t. the tapped grid maps.
        let mut d_grids: Vec<(usize, Vec<T>)> = vec![(*self.config.tap_layers.last().expect("tap"), dh)];
        for (i, chain) in self.chains.clone().iter().enumerate() {
            let cc = &cache.chains[i];
            let mut d = d_skips[i].take().expect("skip gradient");
            for j in (0..chain.deconvs.len()).rev() {
                if j + 1 < chain.deconvs.len() {
                    d = relu_backward(&cc.hidden[j], &d);
                }
                let (x, shape) = &cc.inputs[j];
                d = chain.deconvs[j]
                    .backward(&mut self.store, x, &d, *shape, true)
                    .expect("dx");
            }
            d_grids.push((chain.tap, d));
        }
        let len = cfg.seq_len();
        let dim = cfg.embed_dim;
        let n = cfg.num_patches();
        let off = usize::from(cfg.use_class_token);
        let to_seq = |grid: &[T]| {
            let mut full = vec![T::zero(); batch * len * dim];
            for b in 0..batch {
                full[(b * len + off) * dim..(b + 1) * len * dim]
                    .copy_from_slice(&grid[b * n * dim..(b + 1) * n * dim]);
            }
            full
        };
        let mut d_tokens = None;
        let mut d_taps = Vec::new();
        for (t, grid) in d_grids {
            if t == cfg.depth {
                d_tokens = Some(to_seq(&grid));
            } else {
                d_taps.push((t, to_seq(&grid)));
            }
        }
        if self.store.iter().any(|p| p.trainable && p.name.starts_with(ENCODER_PREFIX)) {
            self.encoder
                .backward(&mut self.store, &cache.encoder, d_tokens.as_deref(), &d_taps);
        }
    }

    /// BCE + (1 - soft Dice); accumulates gradients, returns the loss.
    pub fn loss_and_grad(&mut self, images: &[T], masks: &[T], batch: usize) -> Result<T> {
        if masks.len() != images.len() {
            return Err(Error::Shape(format!(
                "{} mask values for {} pixels",
                masks.len(),
                images.len()
            )));
        }
        let (logits, cache) = self.run(images, batch, true)?;
        let (loss, d_logits) = seg_loss(&logits, masks, batch);
        self.backward(&cache.expect("train cache"), &d_logits);
        Ok(loss)
    }
}

/// Smoothing constant of the soft Dice term.
pub const DICE_SMOOTH: f64 = 1.0;

/// Mean BCE over pixels plus one minus the mean per-sample soft Dice.
/// Returns the loss and its gradient w.r.t. the logits.
pub fn seg_loss<T: Scalar>(logits: &[T], masks: &[T], batch: usize) -> (T, Vec<T>) {
    let total = logits.len();
    let per = total / batch;
    let nt: T = count(total);
    let eps: T = lit(DICE_SMOOTH);
    let two: T = lit(2.0);
    let mut bce = T::zero();
    let mut grad = vec![T::zero(); total];
    let probs: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
    for i in 0..total {
        let (z, y) = (logits[i], masks[i]);
        // log(1 + e^z) - y z
        bce += softplus(z) - y * z;
        grad[i] = (probs[i] - y) / nt;
    }
    let mut dice_sum = T::zero();
    let bt: T = count(batch);
    for b in 0..batch {
        let r = b * per..(b + 1) * per;
        let inter = probs[r.clone()].iter().zip(&masks[r.clone()]).fold(T::zero(), |a, (&p, &g)| a + p * g);
        let sum = probs[r.clone()].iter().fold(T::zero(), |a, &p| a + p)
            + masks[r.clone()].iter().fold(T::zero(), |a, &g| a + g);
        let num = two * inter + eps;
        let den = sum + eps;
        dice_sum += num / den;
        for i in r {
            let dd_dp = (two * masks[i] * den - num) / (den * den);
            grad[i] -= dd_dp * probs[i] * (T::one() - probs[i]) / bt;
        }
    }
    (bce / nt + T::one() - dice_sum / bt, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSegConfig {
    pub optimizer: AdamWConfig,
    pub min_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FinetuneSegConfig {
    fn default() -> Self {
        FinetuneSegConfig {
            optimizer: AdamWConfig::new(5e-4, 1e-5),
            min_lr: 1e-6,
            epochs: 400,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl FinetuneSegConfig {
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

#[derive(Debug, Clone)]
pub struct SegTrainReport {
    /// Weights with the lowest end-of-epoch training loss.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    /// Mean Dice over the training set at threshold 0.5 after each epoch.
    pub epoch_dice: Vec<f64>,
    pub initial_dice: f64,
}

fn check_seg_dataset(dataset: &Dataset, encoder: &EncoderConfig) -> Result<()> {
    if dataset.task != TaskKind::Segmentation {
        return Err(Error::Config("segmentation needs a mask-bearing manifest".into()));
    }
    if dataset.size != encoder.image_size {
        return Err(Error::Shape(format!(
            "dataset working size {} differs from encoder image_size {}",
            dataset.size, encoder.image_size
        )));
    }
    for (i, s) in dataset.samples.iter().enumerate() {
        match &s.mask {
            Some(m) if m.len() == s.pixels.len() => {}
            _ => return Err(Error::Shape(format!("sample {i}: mask does not match image size"))),
        }
    }
    Ok(())
}

/// Binarizes probabilities at 0.5 (inclusive).
pub fn binarize<T: Scalar>(probs: &[T]) -> Vec<u8> {
    let half: T = lit(0.5);
    probs.iter().map(|&p| u8::from(p >= half)).collect()
}

/// Predicted binary masks for every sample, in dataset order.
pub fn predict_masks<T: Scalar>(model: &SegModel<T>, dataset: &Dataset, batch: usize) -> Result<Vec<Vec<u8>>> {
    let px = dataset.size * dataset.size;
    let order: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::with_capacity(dataset.len());
    for idx in order.chunks(batch.max(1)) {
        let b = dataset.batch::<T>(idx);
        let probs = model.seg_forward(&b.images, idx.len())?;
        out.extend(probs.chunks_exact(px).map(binarize));
    }
    Ok(out)
}

/// Loss and mean thresholded Dice over the dataset.
pub fn evaluate_seg<T: Scalar>(model: &SegModel<T>, dataset: &Dataset, batch: usize) -> Result<(f64, f64)> {
    check_seg_dataset(dataset, &model.encoder.config)?;
    let px = dataset.size * dataset.size;
    let order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss = 0.0;
    let mut dice = 0.0;
    for idx in order.chunks(batch.max(1)) {
        let b = dataset.batch::<T>(idx);
        let logits = model.logits(&b.images, idx.len())?;
        let masks = b.masks.as_ref().expect("checked");
        loss += seg_loss(&logits, masks, idx.len()).0.to_f64().unwrap_or(f64::NAN) * idx.len() as f64;
        for (k, &i) in idx.iter().enumerate() {
            let probs: Vec<T> = logits[k * px..(k + 1) * px].iter().map(|&z| sigmoid(z)).collect();
            let gt = dataset.samples[i].mask.as_ref().expect("checked");
            dice += metrics::dice(&binarize(&probs), gt)?;
        }
    }
    let n = dataset.len() as f64;
    Ok((loss / n, dice / n))
}

pub fn finetune_seg<T: Scalar>(
    dataset: &Dataset,
    model: &mut SegModel<T>,
    config: &FinetuneSegConfig,
) -> Result<SegTrainReport> {
    config.validate()?;
    check_seg_dataset(dataset, &model.encoder.config)?;
    let mut optimizer = AdamW::new(config.optimizer, &model.store);
    let per_epoch = dataset.len().div_ceil(config.batch_size);
    let total = per_epoch * config.epochs;
    let eval_batch = config.batch_size;
    let (_, initial_dice) = evaluate_seg(model, dataset, eval_batch)?;
    let mut step_losses = Vec::with_capacity(total);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut epoch_dice = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Vec<T>>)> = None;
    for epoch in 0..config.epochs {
        let mut shuffle = substream(config.seed, &[tag::SHUFFLE, epoch as u64]);
        for idx in batch_indices(dataset.len(), config.batch_size, true, &mut shuffle)? {
            let step = step_losses.len();
            let b = dataset.batch::<T>(&idx);
            model.store.zero_grad();
            let loss = model.loss_and_grad(&b.images, b.masks.as_ref().expect("checked"), idx.len())?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: "segmentation loss at step index",
                    index: step,
                });
            }
            let lr = cosine_lr(config.optimizer.lr, config.min_lr, step, total);
            optimizer.update(&mut model.store, lr);
            step_losses.push(loss.to_f64().expect("finite"));
        }
        let (loss, dice) = evaluate_seg(model, dataset, eval_batch)?;
        epoch_losses.push(loss);
        epoch_dice.push(dice);
        if best.as_ref().is_none_or(|(l, _, _)| loss < *l) {
            best = Some((loss, epoch + 1, model.store.snapshot()));
        }
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch");
    let last = model.store.snapshot();
    model.store.restore(&weights);
    let ck = model.checkpoint(Provenance {
        seed: config.seed,
        epochs_completed: config.epochs,
        steps_completed: step_losses.len(),
        loss_history: step_losses.clone(),
        training: serde_json::to_value(config).expect("config serializes"),
        ..Default::default()
    });
    model.store.restore(&last);
    Ok(SegTrainReport {
        best: ck,
        best_epoch,
        step_losses,
        epoch_losses,
        epoch_dice,
        initial_dice,
    })
}

/// Writes a binary mask as a 0/255 grayscale PNG.
pub fn save_mask_png(path: &Path, mask: &[u8], size: usize) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m != 0 { 255 } else { 0 }).collect();
    save_gray_bytes(path, &bytes, size, size)
}

/// Input in gray with the predicted mask boundary drawn in red.
pub fn save_overlay_png(path: &Path, image: &[f32], mask: &[u8], size: usize) -> Result<()> {
    let boundary = metrics::boundary(mask, size, size);
    let mut rgb = Vec::with_capacity(size * size * 3);
    for (i, &v) in image.iter().enumerate() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        if boundary[i] {
            rgb.extend_from_slice(&[255, 0, 0]);
        } else {
            rgb.extend_from_slice(&[g, g, g]);
        }
    }
    save_rgb_png(path, &rgb, size, size)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> EncoderConfig {
        EncoderConfig {
            image_size: 16,
            patch_size: 4,
            embed_dim: 8,
            depth: 4,
            num_heads: 2,
            mlp_ratio: 2.0,
            use_class_token: true,
        }
    }

    #[test]
    fn default_taps() {
        assert_eq!(SegDecoderConfig::default().tap_layers, vec![3, 6, 9, 12]);
        assert_eq!(SegDecoderConfig::for_depth(4).tap_layers, vec![1, 2, 3, 4]);
    }

    #[test]
    fn schedule_for_p4_depth4() {
        let cfg = SegDecoderConfig {
            tap_layers: vec![1, 2, 3, 4],
            base_width: 4,
            init: EncoderInit::Scratch,
        };
        let st = cfg.schedule(&toy()).unwrap();
        let sizes: Vec<usize> = st.iter().map(|s| s.size).collect();
        let chans: Vec<usize> = st.iter().map(|s| s.channels).collect();
        assert_eq!(sizes, vec![4, 8, 16]);
        assert_eq!(chans, vec![8, 8, 4]);
        assert_eq!(st[0].taps, vec![4]);
        assert_eq!(st[1].taps, vec![3]);
        assert_eq!(st[2].taps, vec![1, 2]);
        assert!(st[2].image_skip);
    }

    #[test]
    fn output_shape_and_range() {
        let cfg = SegDecoderConfig::for_depth(4);
        let m = attach_seg_decoder::<f32>(&toy(), None, &cfg, 3).unwrap();
        let img: Vec<f32> = (0..2 * 256).map(|i| (i % 7) as f32 / 7.0).collect();
        let p = m.seg_forward(&img, 2).unwrap();
        assert_eq!(p.len(), 512);
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_decoder_gives_half() {
        let cfg = SegDecoderConfig::for_depth(4);
        let mut m = attach_seg_decoder::<f64>(&toy(), None, &cfg, 3).unwrap();
        for p in m.store.iter_mut().filter(|p| p.name.starts_with(SEG_PREFIX)) {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
        let p = m.seg_forward(&vec![0.4; 256], 1).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_bad_configs() {
        let mut e = toy();
        e.patch_size = 8;
        e.image_size = 24;
        let mut c = SegDecoderConfig::for_depth(4);
        assert!(c.schedule(&EncoderConfig { patch_size: 3, image_size: 9, ..toy() }).is_err());
        c.tap_layers = vec![2, 1];
        assert!(c.schedule(&e).is_err());
        c.tap_layers = vec![5];
        assert!(c.schedule(&toy()).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let z = [0.3f64, -1.2, 2.0, 0.1, -0.4, 0.9, 1.5, -2.2];
        let y = [1.0f64, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let (_, g) = seg_loss(&z, &y, 2);
        for i in 0..z.len() {
            let h = 1e-6;
            let mut zp = z;
            zp[i] += h;
            let mut zm = z;
            zm[i] -= h;
            let num = (seg_loss(&zp, &y, 2).0 - seg_loss(&zm, &y, 2).0) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-7, "{i}: {num} vs {}", g[i]);
        }
    }
}
