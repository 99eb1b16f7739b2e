//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. A FAIL is reported, not raised; the process only fails when a
//! check cannot run at all.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sscxr_core::checkpoint::Checkpoint;
use sscxr_core::cls::{attach_cls_head, finetune_cls, FinetuneClsConfig};
use sscxr_core::data::{synth_dataset, Batch, Dataset, SynthKind};
use sscxr_core::gmml::{apply_corruption, sample_group_mask, CorruptionMode, CorruptionSpec, PatchMask};
use sscxr_core::heatmap::rollout;
use sscxr_core::nn::{AdamWConfig, ParamStore};
use sscxr_core::pretrain::{masked_l1_loss, run_pretraining, DecoderConfig, LossReduction, PretrainConfig, RunOptions};
use sscxr_core::seg::{attach_seg_decoder, evaluate_seg, finetune_seg, FinetuneSegConfig, SegDecoderConfig, SegModel};
use sscxr_core::vit::{Capture, Encoder, EncoderConfig};

type Verdict = Result<String, String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: usize, name: &str, check: impl FnOnce() -> Verdict) {
        let t = Instant::now();
        let verdict = check();
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS {id:>2} {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                self.failures += 1;
                println!("FAIL {id:>2} {name} ({secs:.1}s): {detail}");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, size: usize) -> Batch<f32> {
    Batch {
        images: (0..n * size * size).map(|_| rng.random::<f32>()).collect(),
        height: size,
        width: size,
        labels: None,
        masks: None,
        sample_indices: (0..n).collect(),
    }
}

fn corruption_locality() -> Verdict {
    let mut meta = ChaCha8Rng::seed_from_u64(1);
    let modes = [
        CorruptionMode::NoiseOnly,
        CorruptionMode::AlienOnly,
        CorruptionMode::PerSampleChoice,
        CorruptionMode::BothDisjoint,
    ];
    let mut masked = 0usize;
    let mut total = 0usize;
    for case in 0..1000 {
        let p = [2, 4, 8][meta.random_range(0..3)];
        let size = p * meta.random_range(2..8);
        let n = meta.random_range(2..4);
        let batch = random_batch(&mut meta, n, size);
        let a0 = meta.random_range(1..=4);
        let spec = CorruptionSpec {
            noise_fraction: meta.random_range(0.0..=1.0),
            alien_fraction: meta.random_range(0.0..=1.0),
            mode: modes[meta.random_range(0..4)],
            group_aspect: (1.0 / 3.0, 3.0),
            group_area: (a0, a0 + meta.random_range(0..10)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(meta.random());
        let c = apply_corruption(&batch, p, &spec, &mut rng).map_err(|e| format!("case {case}: {e}"))?;
        for (i, &m) in c.masks.iter().enumerate() {
            total += 1;
            if m == 0.0 {
                ensure(c.images[i].to_bits() == batch.images[i].to_bits(), || {
                    format!("case {case}: unmasked pixel {i} changed")
                })?;
            } else {
                masked += 1;
            }
        }
    }
    Ok(format!(
        "1000 triples, {total} pixels, {:.1}% masked, every unmasked pixel bit-identical",
        100.0 * masked as f64 / total as f64
    ))
}

/// Cells of one block reached by a 4-neighbour flood fill restricted to it.
fn flood_fill_count(cells: &[(usize, usize)]) -> usize {
    let set: std::collections::HashSet<(usize, usize)> = cells.iter().copied().collect();
    let mut seen = std::collections::HashSet::new();
    let mut stack = vec![cells[0]];
    while let Some((i, j)) = stack.pop() {
        if !set.contains(&(i, j)) || !seen.insert((i, j)) {
            continue;
        }
        stack.push((i + 1, j));
        stack.push((i, j + 1));
        if i > 0 {
            stack.push((i - 1, j));
        }
        if j > 0 {
            stack.push((i, j - 1));
        }
    }
    seen.len()
}

fn mask_statistics() -> Verdict {
    let spec = CorruptionSpec {
        noise_fraction: 0.5,
        ..CorruptionSpec::default()
    };
    let hi = 0.5 + spec.max_block_area() as f64 / 256.0;
    let mut sum = 0.0;
    let mut blocks = 0usize;
    for seed in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: PatchMask = sample_group_mask(16, 16, 0.5, &spec, &mut rng);
        let cov = m.coverage();
        ensure((0.5..=hi).contains(&cov), || format!("seed {seed}: coverage {cov} outside [0.5, {hi}]"))?;
        sum += cov;
        for b in &m.blocks {
            let cells: Vec<(usize, usize)> = (b.top..b.top + b.height)
                .flat_map(|i| (b.left..b.left + b.width).map(move |j| (i, j)))
                .collect();
            ensure(flood_fill_count(&cells) == cells.len(), || format!("seed {seed}: block {b:?} not connected"))?;
            ensure(cells.iter().all(|&(i, j)| m.grid[i * 16 + j]), || {
                format!("seed {seed}: block {b:?} not marked on the grid")
            })?;
            blocks += 1;
        }
    }
    let mean = sum / 10_000.0;
    ensure((mean - 0.5).abs() <= 0.03, || format!("mean coverage {mean:.4} off target by more than 3pp"))?;
    Ok(format!("10000 seeds, mean coverage {mean:.4}, all in [0.5, {hi:.4}], {blocks} blocks connected"))
}

fn loss_contract() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let n = rng.random_range(1..200);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        let zero = vec![0.0; n];
        for r in [LossReduction::Sum, LossReduction::MeanMasked] {
            let l = |a: &[f64], b: &[f64], mm: &[f64]| masked_l1_loss(a, b, mm, r).map_err(|e| e.to_string());
            ensure(l(&x, &y, &zero)? == 0.0, || format!("case {case}: empty mask not zero"))?;
            ensure(l(&x, &x, &m)? == 0.0, || format!("case {case}: perfect reconstruction not zero"))?;
            let shifted: Vec<f64> = y
                .iter()
                .zip(&m)
                .map(|(&v, &mm)| if mm == 0.0 { v + rng.random_range(-3.0..3.0) } else { v })
                .collect();
            ensure(l(&x, &y, &m)? == l(&x, &shifted, &m)?, || format!("case {case}: off-mask change moved the loss"))?;
        }
        let mut bigger = m.clone();
        for v in bigger.iter_mut() {
            if rng.random_bool(0.3) {
                *v = 1.0;
            }
        }
        let small = masked_l1_loss(&x, &y, &m, LossReduction::Sum).map_err(|e| e.to_string())?;
        let large = masked_l1_loss(&x, &y, &bigger, LossReduction::Sum).map_err(|e| e.to_string())?;
        ensure(large >= small, || format!("case {case}: growing the mask lowered the summed loss"))?;
    }
    Ok("1000 instances: empty mask, perfect reconstruction, monotone mask, off-mask invariance".into())
}

fn gradient_check() -> Verdict {
    let r = common::gradcheck::check_pretraining_gradients();
    ensure(r.min_residual > 1e-3, || format!("residual {} too close to the kink", r.min_residual))?;
    ensure(r.worst <= 1e-3, || format!("relative error {:.3e} at {}", r.worst, r.detail))?;
    Ok(format!("{} entries, worst relative error {:.2e}", r.checked, r.worst))
}

struct Fixtures {
    root: tempfile::TempDir,
    tiny: EncoderConfig,
}

impl Fixtures {
    fn dataset(&self, kind: SynthKind, seed: u64) -> Result<(Dataset, PathBuf), String> {
        let dir = self.root.path().join(format!("{kind}_{seed}"));
        let out = synth_dataset(kind, 16, 64, seed, &dir).map_err(|e| e.to_string())?;
        let ds = Dataset::load(&out.manifest, 64).map_err(|e| e.to_string())?;
        Ok((ds, out.manifest_path))
    }
}

fn overfit_cls_config(seed: u64) -> FinetuneClsConfig {
    // Full-batch steps on the 16 training images.
    FinetuneClsConfig {
        optimizer: AdamWConfig::new(2e-3, 0.05),
        epochs: 200,
        batch_size: 16,
        seed,
        ..Default::default()
    }
}

fn pretraining_overfit(fx: &Fixtures, keep: &mut Option<Checkpoint>) -> Verdict {
    let (ds, _) = fx.dataset(SynthKind::Recon, 7)?;
    let cfg = PretrainConfig {
        epochs: 150,
        batch_size: 8,
        seed: 1,
        ..Default::default()
    };
    let dec = DecoderConfig::default();
    let run = || run_pretraining::<f32>(&ds, &fx.tiny, &dec, &cfg, &RunOptions::default()).map_err(|e| e.to_string());
    let a = run()?;
    let b = run()?;
    let h = &a.provenance.loss_history;
    ensure(h.len() == 300, || format!("{} steps instead of 300", h.len()))?;
    let deterministic = a.to_bytes() == b.to_bytes();
    let first = h[0];
    let tail = h[h.len() - 10..].iter().sum::<f64>() / 10.0;
    let ratio = tail / first;
    *keep = Some(a);
    let detail = format!(
        "step-1 loss {first:.4}, mean of steps 291-300 {tail:.4}, ratio {ratio:.3} (need <= 0.5), repeat identical: {deterministic}"
    );
    if ratio <= 0.5 && deterministic {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sscxr"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "sscxr {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn write_tiny_config(path: &Path, extra: &str) -> Result<(), String> {
    let text = format!("image_size = 64\npatch_size = 8\nembed_dim = 64\ndepth = 4\nnum_heads = 4\n{extra}");
    std::fs::write(path, text).map_err(|e| e.to_string())
}

fn report_field(path: &Path, key: &str) -> Result<f64, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    v[key].as_f64().ok_or_else(|| format!("{} has no numeric `{key}`", path.display()))
}

fn classification_overfit(fx: &Fixtures) -> Verdict {
    let (_, manifest) = fx.dataset(SynthKind::Cls2, 2)?;
    let dir = fx.root.path().join("c6");
    let cfg = dir.with_extension("toml");
    write_tiny_config(&cfg, "learning_rate = 0.002\nbatch_size = 16\nepochs = 200\nseed = 1\n")?;
    let (cfg, manifest) = (cfg.to_string_lossy().into_owned(), manifest.to_string_lossy().into_owned());
    let ft = dir.join("ft");
    let ev = dir.join("eval");
    run_cli(&["finetune", "--task", "cls", "--config", &cfg, "--manifest", &manifest, "--out", &ft.to_string_lossy()])?;
    let log = std::fs::read_to_string(ft.join("epoch_log.csv")).map_err(|e| e.to_string())?;
    // One full-batch step per epoch, so the epoch number is the step count.
    let first_full = log
        .lines()
        .skip(1)
        .find(|l| l.rsplit(',').next().and_then(|a| a.parse::<f64>().ok()) == Some(100.0))
        .and_then(|l| l.split(',').next().map(str::to_owned));
    let ck = ft.join("checkpoint.sscxr");
    run_cli(&[
        "eval",
        "--checkpoint",
        &ck.to_string_lossy(),
        "--manifest",
        &manifest,
        "--cohort",
        "train",
        "--out",
        &ev.to_string_lossy(),
    ])?;
    let rep = ev.join("train_report.json");
    let (acc, tpr, fpr, auc) = (
        report_field(&rep, "acc")?,
        report_field(&rep, "tpr")?,
        report_field(&rep, "fpr")?,
        report_field(&rep, "auc_roc")?,
    );
    let detail = format!(
        "100% train ACC first at step {}; eval on train: ACC {acc} TPR {tpr} FPR {fpr} AUC-ROC {auc}",
        first_full.as_deref().unwrap_or("never")
    );
    if first_full.is_some() && acc == 100.0 && tpr == 1.0 && fpr == 0.0 && auc == 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}

fn transfer_signal(fx: &Fixtures, pretrained: Option<&Checkpoint>) -> Verdict {
    let pretrained = pretrained.ok_or("criterion 5 produced no checkpoint")?;
    let (ds, _) = fx.dataset(SynthKind::Cls2, 2)?;
    let steps = |init: Option<&Checkpoint>| -> Result<Vec<usize>, String> {
        (1..=5u64)
            .map(|seed| {
                let mut model = attach_cls_head::<f32>(&fx.tiny, init, 2, seed).map_err(|e| e.to_string())?;
                let report = finetune_cls(&ds, &mut model, &overfit_cls_config(seed)).map_err(|e| e.to_string())?;
                // Never reaching 100% counts as the worst possible outcome.
                Ok(report.steps_to_full_accuracy.unwrap_or(usize::MAX))
            })
            .collect()
    };
    let scratch = steps(None)?;
    let from_ck = steps(Some(pretrained))?;
    let show = |v: &[usize]| {
        v.iter()
            .map(|&s| if s == usize::MAX { "never".to_string() } else { s.to_string() })
            .collect::<Vec<_>>()
            .join(",")
    };
    let (ms, mp) = (median(scratch.clone()), median(from_ck.clone()));
    let detail = format!(
        "steps to 100% over seeds 1-5: pretrained [{}] median {}, scratch [{}] median {}",
        show(&from_ck),
        show(&[mp]),
        show(&scratch),
        show(&[ms])
    );
    if mp <= ms && mp != usize::MAX {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Library Dice next to a mean of independently thresholded probability maps.
fn dice_cross_check(model: &SegModel<f32>, ds: &Dataset, batch: usize) -> Result<(f64, f64), String> {
    let (_, lib) = evaluate_seg(model, ds, batch).map_err(|e| e.to_string())?;
    let px = ds.size * ds.size;
    let mut own = 0.0;
    let order: Vec<usize> = (0..ds.len()).collect();
    for idx in order.chunks(batch) {
        let b = ds.batch::<f32>(idx);
        let probs = model.seg_forward(&b.images, idx.len()).map_err(|e| e.to_string())?;
        for (k, &i) in idx.iter().enumerate() {
            let gt = ds.samples[i].mask.as_ref().ok_or("missing mask")?;
            let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
            for (p, &g) in probs[k * px..(k + 1) * px].iter().zip(gt) {
                let on = *p >= 0.5;
                np += usize::from(on);
                ng += usize::from(g == 1);
                inter += usize::from(on && g == 1);
            }
            own += if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 };
        }
    }
    Ok((lib, own / ds.len() as f64))
}

fn segmentation_overfit(fx: &Fixtures) -> Verdict {
    let (ds, _) = fx.dataset(SynthKind::SegShapes, 3)?;
    let cfg = FinetuneSegConfig {
        epochs: 250,
        batch_size: 8,
        seed: 1,
        ..Default::default()
    };
    let mut model = attach_seg_decoder::<f32>(&fx.tiny, None, &SegDecoderConfig::for_depth(4), 1).map_err(|e| e.to_string())?;
    // The untrained model gives a non-trivial Dice to compare.
    let (lib0, own0) = dice_cross_check(&model, &ds, cfg.batch_size)?;
    let report = finetune_seg(&ds, &mut model, &cfg).map_err(|e| e.to_string())?;
    let per_epoch = ds.len().div_ceil(cfg.batch_size);
    let reached = report.epoch_dice.iter().position(|&d| d >= 0.95).map(|e| (e + 1) * per_epoch);
    let (lib1, own1) = dice_cross_check(&model, &ds, cfg.batch_size)?;
    let detail = format!(
        "Dice >= 0.95 first after {} steps (final {:.4}); library vs thresholded Dice: untrained {lib0} vs {own0}, trained {lib1} vs {own1}",
        reached.map(|s| s.to_string()).unwrap_or("never".into()),
        report.epoch_dice.last().copied().unwrap_or(0.0)
    );
    if reached.is_some_and(|s| s <= 500) && lib0 == own0 && lib1 == own1 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_oracles() -> Verdict {
    common::metric_oracle::check_all(1000, 77)?;
    Ok("1000 random instances: rates, Dice, IoU, HD95 exact; ROC/PR within 1e-9; identities hold".into())
}

fn end_to_end_determinism(fx: &Fixtures) -> Verdict {
    let (_, recon) = fx.dataset(SynthKind::Recon, 21)?;
    let (_, cls) = fx.dataset(SynthKind::Cls2, 22)?;
    let (recon, cls) = (recon.to_string_lossy().into_owned(), cls.to_string_lossy().into_owned());
    let cfg = fx.root.path().join("c10.toml");
    write_tiny_config(&cfg, "seed = 5\nbatch_size = 8\n")?;
    let cfg = cfg.to_string_lossy().into_owned();
    let mut runs = Vec::new();
    for r in 0..2 {
        let dir = fx.root.path().join(format!("c10_{r}"));
        let (pre, ft, ev) = (dir.join("pre"), dir.join("ft"), dir.join("ev"));
        let s = |p: &Path| p.to_string_lossy().into_owned();
        run_cli(&["pretrain", "--config", &cfg, "--manifest", &recon, "--out", &s(&pre), "--epochs", "3"])?;
        let ck = s(&pre.join("checkpoint.sscxr"));
        run_cli(&["finetune", "--task", "cls", "--config", &cfg, "--manifest", &cls, "--init", &ck, "--out", &s(&ft), "--epochs", "3"])?;
        let fck = s(&ft.join("checkpoint.sscxr"));
        run_cli(&["eval", "--checkpoint", &fck, "--manifest", &cls, "--cohort", "train", "--out", &s(&ev)])?;
        let files = [
            pre.join("loss.csv"),
            ft.join("train_log.csv"),
            ft.join("epoch_log.csv"),
            ev.join("train_report.json"),
            ev.join("train_report.csv"),
        ];
        let bytes: Result<Vec<Vec<u8>>, String> = files
            .iter()
            .map(|f| std::fs::read(f).map_err(|e| format!("{}: {e}", f.display())))
            .collect();
        runs.push(bytes?);
    }
    ensure(runs[0] == runs[1], || "outputs of the two runs differ".into())?;
    Ok("two pretrain -> finetune -> eval runs: loss CSVs and reports byte-identical".into())
}

fn parameter_count() -> Verdict {
    let mut store = ParamStore::<f32>::new();
    Encoder::new(&mut store, &EncoderConfig::default(), 0).map_err(|e| e.to_string())?;
    let n = store.num_scalars();
    let rel = (n as f64 - 22e6).abs() / 22e6;
    let detail = format!("{n} parameters, {:.2}% from 22M", rel * 100.0);
    if rel <= 0.05 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rollout_oracle() -> Verdict {
    let cfg = EncoderConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 8,
        depth: 2,
        num_heads: 2,
        mlp_ratio: 2.0,
        use_class_token: true,
    };
    let mut store = ParamStore::<f64>::new();
    let enc = Encoder::new(&mut store, &cfg, 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for p in store.iter_mut() {
        p.value.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
    }
    let image: Vec<f64> = (0..64).map(|_| rng.random()).collect();
    let out = enc
        .forward(&store, &image, 1, &Capture { taps: vec![], attention: true })
        .map_err(|e| e.to_string())?;
    let maps = out.attention.ok_or("no attention captured")?;
    let n = maps.len;
    let mut worst_row = 0.0f64;
    let mut layers = Vec::new();
    for l in 0..2 {
        let mut a = vec![0.0; n * n];
        for h in 0..maps.heads {
            let m = maps.head(l, 0, h);
            for row in m.chunks(n) {
                worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            }
            a.iter_mut().zip(m).for_each(|(x, &v)| *x += v / maps.heads as f64);
        }
        for i in 0..n {
            a[i * n + i] += 1.0;
            let s: f64 = a[i * n..(i + 1) * n].iter().sum();
            a[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= s);
        }
        layers.push(a);
    }
    let mut want = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            want[i * n + j] = (0..n).map(|k| layers[1][i * n + k] * layers[0][k * n + j]).sum();
        }
    }
    let got = rollout(&maps, 0);
    let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(worst_row <= 1e-5, || format!("attention row sums off by {worst_row:e}"))?;
    ensure(err <= 1e-9, || format!("rollout differs from the oracle by {err:e}"))?;
    Ok(format!("max deviation {err:.1e}, attention rows sum to 1 within {worst_row:.1e}"))
}

fn main() {
    let fx = Fixtures {
        root: tempfile::tempdir().expect("temporary directory"),
        tiny: EncoderConfig::tiny(),
    };
    let mut suite = Suite { failures: 0 };
    let mut pretrained = None;
    suite.run(1, "corruption locality", corruption_locality);
    suite.run(2, "mask statistics", mask_statistics);
    suite.run(3, "masked L1 loss contract", loss_contract);
    suite.run(4, "gradient check", gradient_check);
    suite.run(5, "pretraining overfit", || pretraining_overfit(&fx, &mut pretrained));
    suite.run(6, "classification overfit", || classification_overfit(&fx));
    suite.run(7, "transfer signal", || transfer_signal(&fx, pretrained.as_ref()));
    suite.run(8, "segmentation overfit", || segmentation_overfit(&fx));
    suite.run(9, "metric oracle equivalence", metric_oracles);
    suite.run(10, "end-to-end determinism", || end_to_end_determinism(&fx));
    suite.run(11, "parameter count", parameter_count);
    suite.run(12, "attention rollout", rollout_oracle);
    println!("acceptance: {} of 12 criteria pass", 12 - suite.failures);
}
