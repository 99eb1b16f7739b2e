//! `sscxr`: synthetic data, group-masked pretraining, fine-tuning,
//! evaluation and attention heatmaps for chest X-ray style images.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on invalid input or
//! configuration.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use sscxr_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, HeadConfig, LoadOptions};
use sscxr_core::cls::{
    attach_cls_head, finetune_cls, predict_dataset, write_predictions_csv, ClsModel, EncoderInit,
    FinetuneClsConfig,
};
use sscxr_core::data::image_io::{load_image, save_gray_png, save_rgb_png};
use sscxr_core::data::{load_manifest, synth_dataset, Dataset, SynthKind, TaskKind};
use sscxr_core::heatmap::{overlay, AttentionModel, HeatmapMode};
use sscxr_core::metrics::{cls_report, seg_report, MetricReport};
use sscxr_core::pretrain::{run_pretraining_manifest, write_loss_csv, PretrainConfig, RunOptions};
use sscxr_core::seg::{
    attach_seg_decoder, finetune_seg, predict_masks, save_mask_png, save_overlay_png, FinetuneSegConfig,
    SegDecoderConfig, SegModel,
};
use sscxr_core::vit::EncoderConfig;
use sscxr_core::Real;

use config::{RunConfig, ENCODER_KEYS, EVAL_KEYS, FINETUNE_KEYS, HEATMAP_KEYS, PRETRAIN_KEYS};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<sscxr_core::Error> for CliError {
    fn from(e: sscxr_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sscxr", version, about = "Self-supervised vision transformers for chest X-rays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Task {
    Cls,
    Seg,
}

impl Task {
    fn as_str(self) -> &'static str {
        match self {
            Task::Cls => "cls",
            Task::Seg => "seg",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Recon,
    Cls2,
    SegShapes,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Group-masked autoencoder pretraining on an unlabeled manifest.
    Pretrain {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Continue from a checkpoint written by an earlier pretrain run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Fine-tune a classifier or segmenter, from scratch or a checkpoint.
    Finetune {
        #[arg(long, value_enum)]
        task: Option<Task>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// `scratch` or the path of a pretrained checkpoint.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Train only the classification head.
        #[arg(long)]
        linear_probe: bool,
        /// Write predicted masks and overlays for the training set.
        #[arg(long)]
        overlays: bool,
    },
    /// Evaluate a fine-tuned checkpoint on one or more cohorts.
    Eval {
        #[arg(long, value_enum)]
        task: Option<Task>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "manifest")]
        manifests: Vec<PathBuf>,
        /// Report tag per manifest; defaults to the manifest file stem.
        #[arg(long = "cohort")]
        cohorts: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Attention heatmaps overlaid on the input images.
    Heatmap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Raw attention of this 1-based layer instead of rollout.
        #[arg(long, requires = "head")]
        layer: Option<usize>,
        /// 1-based head used with `--layer`.
        #[arg(long, requires = "layer")]
        head: Option<usize>,
        images: Vec<PathBuf>,
    },
    /// Write a synthetic dataset and its manifest.
    Synth {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Pretrain {
            config,
            manifest,
            out,
            seed,
            epochs,
            batch_size,
            lr,
            resume,
        } => {
            let mut cfg = RunConfig::new(&[config::train_keys(), ENCODER_KEYS, PRETRAIN_KEYS]).load(config.as_deref())?;
            cfg.set("manifest", manifest.map(path_value));
            cfg.set("out_dir", out.map(path_value));
            cfg.set("seed", seed.map(|v| v as i64));
            cfg.set("epochs", epochs.map(|v| v as i64));
            cfg.set("batch_size", batch_size.map(|v| v as i64));
            cfg.set("learning_rate", lr);
            cfg.set("resume", resume.map(path_value));
            cmd_pretrain(cfg)
        }
        Command::Finetune {
            task,
            config,
            manifest,
            init,
            out,
            seed,
            epochs,
            batch_size,
            lr,
            linear_probe,
            overlays,
        } => {
            let mut cfg = RunConfig::new(&[config::train_keys(), ENCODER_KEYS, FINETUNE_KEYS]).load(config.as_deref())?;
            cfg.set("task", task.map(|t| t.as_str()));
            cfg.set("manifest", manifest.map(path_value));
            cfg.set("init", init);
            cfg.set("out_dir", out.map(path_value));
            cfg.set("seed", seed.map(|v| v as i64));
            cfg.set("epochs", epochs.map(|v| v as i64));
            cfg.set("batch_size", batch_size.map(|v| v as i64));
            cfg.set("learning_rate", lr);
            cfg.set("linear_probe", linear_probe.then_some(true));
            cfg.set("overlays", overlays.then_some(true));
            cmd_finetune(cfg)
        }
        Command::Eval {
            task,
            config,
            checkpoint,
            manifests,
            cohorts,
            out,
            batch_size,
        } => {
            let mut cfg = RunConfig::new(&[EVAL_KEYS]).load(config.as_deref())?;
            cfg.set("task", task.map(|t| t.as_str()));
            cfg.set("checkpoint", checkpoint.map(path_value));
            cfg.set("out_dir", out.map(path_value));
            cfg.set("batch_size", batch_size.map(|v| v as i64));
            if !manifests.is_empty() {
                cfg.set("manifests", Some(manifests.into_iter().map(path_value).collect::<Vec<_>>()));
            }
            if !cohorts.is_empty() {
                cfg.set("cohorts", Some(cohorts));
            }
            cmd_eval(cfg)
        }
        Command::Heatmap {
            config,
            checkpoint,
            manifest,
            out,
            layer,
            head,
            images,
        } => {
            let mut cfg = RunConfig::new(&[HEATMAP_KEYS]).load(config.as_deref())?;
            cfg.set("checkpoint", checkpoint.map(path_value));
            cfg.set("manifest", manifest.map(path_value));
            cfg.set("out_dir", out.map(path_value));
            cfg.set("layer", layer.map(|v| v as i64));
            cfg.set("head", head.map(|v| v as i64));
            if !images.is_empty() {
                cfg.set("images", Some(images.into_iter().map(path_value).collect::<Vec<_>>()));
            }
            cmd_heatmap(cfg)
        }
        Command::Synth {
            kind,
            count,
            out,
            size,
            seed,
        } => {
            let kind = match kind {
                Kind::Recon => SynthKind::Recon,
                Kind::Cls2 => SynthKind::Cls2,
                Kind::SegShapes => SynthKind::SegShapes,
            };
            let written = synth_dataset(kind, count, size, seed, &out)?;
            println!("wrote {} images to {}", count, written.manifest_path.display());
            Ok(())
        }
    }
}

fn path_value(p: PathBuf) -> String {
    p.to_string_lossy().into_owned()
}

fn runtime(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.path("out_dir")?;
    std::fs::create_dir_all(&dir).map_err(|e| runtime(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| runtime(path, e))
}

fn cmd_pretrain(mut cfg: RunConfig) -> CliResult<()> {
    let manifest = load_manifest(&cfg.path("manifest")?)?;
    let out = cfg.path("out_dir")?;
    let encoder = cfg.encoder()?;
    let decoder = cfg.decoder()?;
    let d = PretrainConfig::default();
    let (optimizer, min_lr) = cfg.optimizer(d.optimizer.lr, d.optimizer.weight_decay)?;
    let config = PretrainConfig {
        optimizer,
        min_lr,
        epochs: cfg.usize("epochs", d.epochs)?,
        batch_size: cfg.usize("batch_size", d.batch_size)?,
        corruption: cfg.corruption()?,
        seed: cfg.u64("seed", d.seed)?,
        loss_reduction: cfg.loss_reduction()?,
        augment: cfg.bool("augment", d.augment)?,
        checkpoint_every: cfg.usize("checkpoint_every", d.checkpoint_every)?,
    };
    config.validate()?;
    let resume = match cfg.optional_string("resume")? {
        Some(p) => Some(load_checkpoint(Path::new(&p), &LoadOptions::default())?),
        None => None,
    };
    let out = {
        std::fs::create_dir_all(&out).map_err(|e| runtime(&out, e))?;
        out
    };
    cfg.write_resolved(&out)?;
    let options = RunOptions {
        checkpoint_dir: (config.checkpoint_every > 0).then(|| out.join("checkpoints")),
        resume,
    };
    let ck = run_pretraining_manifest::<Real>(&manifest, &encoder, &decoder, &config, &options)?;
    save_checkpoint(&out.join("checkpoint.sscxr"), &ck)?;
    write_loss_csv(&out.join("loss.csv"), &ck.provenance.loss_history)?;
    let h = &ck.provenance.loss_history;
    if let (Some(first), Some(last)) = (h.first(), h.last()) {
        println!("pretrain: {} steps, loss {first:.5} -> {last:.5}", h.len());
    }
    println!("checkpoint: {}", out.join("checkpoint.sscxr").display());
    Ok(())
}

/// Encoder settings from the config file, or those of the init checkpoint.
/// Explicit settings that disagree with the checkpoint are rejected.
fn resolve_encoder(cfg: &mut RunConfig, pretrained: Option<&Checkpoint>) -> CliResult<EncoderConfig> {
    let Some(ck) = pretrained else {
        return cfg.encoder();
    };
    let given: Vec<&str> = ENCODER_KEYS.iter().copied().filter(|k| cfg.table.contains_key(*k)).collect();
    let enc = ck.encoder.clone();
    let table = toml::Value::try_from(&enc).map_err(|e| CliError::Runtime(e.to_string()))?;
    for key in given {
        if cfg.table.get(key) != table.get(key) {
            return Err(CliError::Validation(format!(
                "`{key}` = {} conflicts with the init checkpoint ({})",
                cfg.table[key],
                table.get(key).map(|v| v.to_string()).unwrap_or_default()
            )));
        }
    }
    for key in ENCODER_KEYS {
        if let Some(v) = table.get(*key) {
            cfg.table.insert(key.to_string(), v.clone());
        }
    }
    Ok(enc)
}

fn cmd_finetune(mut cfg: RunConfig) -> CliResult<()> {
    let task: Task = match cfg.string("task", "cls")?.as_str() {
        "cls" => Task::Cls,
        "seg" => Task::Seg,
        other => return Err(CliError::Validation(format!("unknown task `{other}`, expected cls or seg"))),
    };
    let manifest = load_manifest(&cfg.path("manifest")?)?;
    let init = cfg.string("init", "scratch")?;
    let pretrained = match init.as_str() {
        "scratch" => None,
        path => Some(load_checkpoint(
            Path::new(path),
            &LoadOptions {
                encoder_only: true,
                ..Default::default()
            },
        )?),
    };
    let encoder = resolve_encoder(&mut cfg, pretrained.as_ref())?;
    let seed = cfg.u64("seed", 0)?;
    let batch_size = cfg.usize("batch_size", 8)?;
    let out = create_out_dir(&cfg)?;
    let dataset_for = |task_kind: TaskKind| -> CliResult<Dataset> {
        if manifest.task != task_kind {
            return Err(CliError::Validation(format!(
                "{} fine-tuning needs a {task_kind} manifest, got {}",
                task.as_str(),
                manifest.task
            )));
        }
        Ok(Dataset::load(&manifest, encoder.image_size)?)
    };
    match task {
        Task::Cls => {
            let d = FinetuneClsConfig::default();
            let (optimizer, min_lr) = cfg.optimizer(d.optimizer.lr, d.optimizer.weight_decay)?;
            let num_classes = cfg.usize("num_classes", manifest.num_classes().unwrap_or(2))?;
            let config = FinetuneClsConfig {
                optimizer,
                min_lr,
                epochs: cfg.usize("epochs", d.epochs)?,
                batch_size,
                seed,
                linear_probe: cfg.bool("linear_probe", d.linear_probe)?,
                class_weights: cfg.bool("class_weights", d.class_weights)?,
                augment: cfg.bool("augment", d.augment)?,
            };
            config.validate()?;
            cfg.write_resolved(&out)?;
            let dataset = dataset_for(TaskKind::Classification)?;
            let mut model = attach_cls_head::<Real>(&encoder, pretrained.as_ref(), num_classes, seed)?;
            let report = finetune_cls(&dataset, &mut model, &config)?;
            save_checkpoint(&out.join("checkpoint.sscxr"), &report.best)?;
            write_loss_csv(&out.join("train_log.csv"), &report.step_losses)?;
            write_epoch_log(&out.join("epoch_log.csv"), "accuracy", &report.epoch_losses, &report.epoch_accuracy)?;
            let acc = report.epoch_accuracy[report.best_epoch - 1];
            println!(
                "finetune cls: {} steps, best epoch {} train loss {:.5} train ACC {acc:.2}",
                report.step_losses.len(),
                report.best_epoch,
                report.epoch_losses[report.best_epoch - 1]
            );
            match report.steps_to_full_accuracy {
                Some(s) => println!("train ACC first reached 100 after {s} steps"),
                None => println!("train ACC never reached 100"),
            }
        }
        Task::Seg => {
            let d = FinetuneSegConfig::default();
            let (optimizer, min_lr) = cfg.optimizer(d.optimizer.lr, d.optimizer.weight_decay)?;
            let dd = SegDecoderConfig::for_depth(encoder.depth);
            let decoder = SegDecoderConfig {
                tap_layers: cfg.usize_list("tap_layers", &dd.tap_layers)?,
                base_width: cfg.usize("base_width", dd.base_width)?,
                init: if pretrained.is_some() {
                    EncoderInit::FromCheckpoint
                } else {
                    EncoderInit::Scratch
                },
            };
            let config = FinetuneSegConfig {
                optimizer,
                min_lr,
                epochs: cfg.usize("epochs", d.epochs)?,
                batch_size,
                seed,
            };
            config.validate()?;
            let overlays = cfg.bool("overlays", false)?;
            cfg.write_resolved(&out)?;
            let dataset = dataset_for(TaskKind::Segmentation)?;
            let mut model = attach_seg_decoder::<Real>(&encoder, pretrained.as_ref(), &decoder, seed)?;
            let report = finetune_seg(&dataset, &mut model, &config)?;
            save_checkpoint(&out.join("checkpoint.sscxr"), &report.best)?;
            write_loss_csv(&out.join("train_log.csv"), &report.step_losses)?;
            write_epoch_log(&out.join("epoch_log.csv"), "dice", &report.epoch_losses, &report.epoch_dice)?;
            println!(
                "finetune seg: {} steps, best epoch {} train loss {:.5} train Dice {:.4}",
                report.step_losses.len(),
                report.best_epoch,
                report.epoch_losses[report.best_epoch - 1],
                report.epoch_dice[report.best_epoch - 1]
            );
            if overlays {
                let best = SegModel::<Real>::from_checkpoint(&report.best)?;
                let dir = out.join("overlays");
                std::fs::create_dir_all(&dir).map_err(|e| runtime(&dir, e))?;
                let masks = predict_masks(&best, &dataset, batch_size)?;
                for (i, (mask, sample)) in masks.iter().zip(&dataset.samples).enumerate() {
                    let stem = entry_stem(&manifest.entries[i].image);
                    save_mask_png(&dir.join(format!("{stem}_mask.png")), mask, dataset.size)?;
                    save_overlay_png(&dir.join(format!("{stem}_overlay.png")), &sample.pixels, mask, dataset.size)?;
                }
                println!("overlays: {}", dir.display());
            }
        }
    }
    println!("checkpoint: {}", out.join("checkpoint.sscxr").display());
    Ok(())
}

fn write_epoch_log(path: &Path, metric: &str, losses: &[f64], values: &[f64]) -> CliResult<()> {
    let mut text = format!("epoch,loss,{metric}\n");
    for (i, (l, v)) in losses.iter().zip(values).enumerate() {
        text.push_str(&format!("{},{l},{v}\n", i + 1));
    }
    write_text(path, &text)
}

fn entry_stem(image: &str) -> String {
    Path::new(image)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| image.to_string())
}

fn cmd_eval(mut cfg: RunConfig) -> CliResult<()> {
    let ck_path = cfg.path("checkpoint")?;
    let ck = load_checkpoint(&ck_path, &LoadOptions::default())?;
    let task = match (&ck.head, cfg.optional_string("task")?.as_deref()) {
        (Some(HeadConfig::Classification(_)), None | Some("cls")) => Task::Cls,
        (Some(HeadConfig::Segmentation(_)), None | Some("seg")) => Task::Seg,
        (head, asked) => {
            return Err(CliError::Validation(format!(
                "checkpoint holds a {} model, which cannot be evaluated as `{}`",
                head.as_ref().map(|h| h.task_name()).unwrap_or("bare encoder"),
                asked.unwrap_or("cls or seg")
            )))
        }
    };
    cfg.set("task", Some(task.as_str()));
    let manifests = cfg.string_list("manifests")?;
    if manifests.is_empty() {
        return Err(CliError::Validation("at least one --manifest is required".into()));
    }
    let mut cohorts = cfg.string_list("cohorts")?;
    if cohorts.is_empty() {
        cohorts = manifests.iter().map(|m| entry_stem(m)).collect();
    }
    if cohorts.len() != manifests.len() {
        return Err(CliError::Validation(format!(
            "{} cohort tags given for {} manifests",
            cohorts.len(),
            manifests.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = cohorts.iter().find(|c| !seen.insert(c.as_str())) {
        return Err(CliError::Validation(format!("cohort tag `{dup}` used twice")));
    }
    let batch = cfg.usize("batch_size", 16)?.max(1);
    let out = create_out_dir(&cfg)?;
    cfg.write_resolved(&out)?;
    let size = ck.encoder.image_size;
    for (manifest_path, cohort) in manifests.iter().zip(&cohorts) {
        let manifest = load_manifest(Path::new(manifest_path))?;
        let names: Vec<String> = manifest.entries.iter().map(|e| e.image.clone()).collect();
        let dataset = Dataset::load(&manifest, size)?;
        let report: MetricReport = match task {
            Task::Cls => {
                let model = ClsModel::<Real>::from_checkpoint(&ck)?;
                let preds = predict_dataset(&model, &dataset, &names, batch)?;
                write_predictions_csv(&out.join(format!("{cohort}_predictions.csv")), &preds)?;
                cls_report(&preds, cohort)?
            }
            Task::Seg => {
                if manifest.task != TaskKind::Segmentation {
                    return Err(CliError::Validation(format!("{manifest_path}: segmentation eval needs masks")));
                }
                let model = SegModel::<Real>::from_checkpoint(&ck)?;
                let preds = predict_masks(&model, &dataset, batch)?;
                let gts: Vec<Vec<u8>> = dataset
                    .samples
                    .iter()
                    .map(|s| s.mask.clone().expect("segmentation samples carry masks"))
                    .collect();
                let dir = out.join(format!("{cohort}_masks"));
                std::fs::create_dir_all(&dir).map_err(|e| runtime(&dir, e))?;
                for (name, mask) in names.iter().zip(&preds) {
                    save_mask_png(&dir.join(format!("{}_mask.png", entry_stem(name))), mask, size)?;
                }
                seg_report(&preds, &gts, size, cohort)?
            }
        };
        report.write(
            &out.join(format!("{cohort}_report.json")),
            &out.join(format!("{cohort}_report.csv")),
        )?;
        println!("{cohort}: {}", summary_line(&report, task));
    }
    Ok(())
}

fn summary_line(report: &MetricReport, task: Task) -> String {
    let keys: &[&str] = match task {
        Task::Cls => &["acc", "tpr", "fpr", "fnr", "auc_roc", "auc_pr"],
        Task::Seg => &["dice", "iou", "hd95"],
    };
    keys.iter()
        .map(|k| match report.get(k) {
            Some(v) => format!("{k}={v:.4}"),
            None => format!("{k}=n/a"),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_heatmap(mut cfg: RunConfig) -> CliResult<()> {
    let ck = load_checkpoint(
        &cfg.path("checkpoint")?,
        &LoadOptions {
            encoder_only: true,
            ..Default::default()
        },
    )?;
    let model = AttentionModel::from_checkpoint(&ck)?;
    let layer = cfg.table.get("layer").is_some().then(|| cfg.usize("layer", 0)).transpose()?;
    let head = cfg.table.get("head").is_some().then(|| cfg.usize("head", 0)).transpose()?;
    let mode = match (layer, head) {
        (None, None) => HeatmapMode::Rollout,
        (Some(l), Some(h)) if l >= 1 && h >= 1 => HeatmapMode::Raw { layer: l - 1, head: h - 1 },
        (Some(_), Some(_)) => return Err(CliError::Validation("`layer` and `head` are 1-based".into())),
        _ => return Err(CliError::Validation("`layer` and `head` must be given together".into())),
    };
    let mut images: Vec<PathBuf> = cfg.string_list("images")?.into_iter().map(PathBuf::from).collect();
    if let Some(m) = cfg.optional_string("manifest")? {
        let manifest = load_manifest(Path::new(&m))?;
        images.extend((0..manifest.len()).map(|i| manifest.image_path(i)));
    }
    if images.is_empty() {
        return Err(CliError::Validation("no images given (pass paths or --manifest)".into()));
    }
    let out = create_out_dir(&cfg)?;
    cfg.write_resolved(&out)?;
    let size = model.config().image_size;
    for path in &images {
        let sample = load_image(path, size)?;
        let heat = model.heatmap(&sample.pixels, mode)?;
        let stem = entry_stem(&path.to_string_lossy());
        save_gray_png(&out.join(format!("{stem}_heat.png")), &heat, size, size)?;
        save_rgb_png(&out.join(format!("{stem}_overlay.png")), &overlay(&sample.pixels, &heat), size, size)?;
    }
    println!("wrote {} heatmaps to {}", images.len(), out.display());
    Ok(())
}
