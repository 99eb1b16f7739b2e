//! Analytic gradients of the full encoder + decoder against central finite
//! differences on a toy model.

use rand::Rng as _;
use sscxr_core::pretrain::{DecoderConfig, LossReduction, PretrainModel};
use sscxr_core::rng::substream;
use sscxr_core::vit::EncoderConfig;

fn toy_encoder() -> EncoderConfig {
    EncoderConfig {
        image_size: 8,
        patch_size: 4,
        embed_dim: 8,
        depth: 2,
        num_heads: 2,
        mlp_ratio: 2.0,
        use_class_token: true,
    }
}

fn toy_decoder() -> DecoderConfig {
    DecoderConfig {
        hidden_dims: (12, 12),
        bottleneck_dim: 6,
    }
}

/// `|a - n| / max(|a|, |n|, 1e-5)`; the floor keeps round-off on exactly
/// zero gradients (e.g. the key bias, which softmax ignores) from counting.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

pub struct GradReport {
    pub worst: f64,
    pub detail: String,
    pub checked: usize,
    /// Smallest masked residual; must stay clear of the |.| kink.
    pub min_residual: f64,
}

pub fn check_pretraining_gradients() -> GradReport {
    let enc = toy_encoder();
    let mut model = PretrainModel::<f64>::new(&enc, &toy_decoder(), 11).unwrap();
    // Larger weights than the default init so every path carries signal.
    let mut rng = substream(5, &[1]);
    for p in model.store.iter_mut() {
        for v in p.value.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let n = 2 * 64;
    let clean: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let corrupted: Vec<f64> = clean
        .iter()
        .enumerate()
        .map(|(i, &v)| if i % 3 == 0 { rng.random() } else { v })
        .collect();
    let mask: Vec<f64> = (0..n).map(|i| if i % 3 == 0 || i % 5 == 0 { 1.0 } else { 0.0 }).collect();

    // Keep every masked residual away from the |.| kink.
    let recon = model.reconstruct(&corrupted, 2).unwrap();
    let min_residual = clean
        .iter()
        .zip(&recon)
        .zip(&mask)
        .filter(|(_, &m)| m == 1.0)
        .map(|((a, b), _)| (a - b).abs())
        .fold(f64::INFINITY, f64::min);

    model.store.zero_grad();
    model
        .loss_and_grad(&corrupted, &clean, &mask, 2, LossReduction::Sum)
        .unwrap();
    let analytic: Vec<Vec<f64>> = model.store.iter().map(|p| p.grad.clone()).collect();
    let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();

    let h = 1e-6;
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (pi, name) in names.iter().enumerate() {
        let len = analytic[pi].len();
        // Every parameter tensor, up to 12 entries each.
        let stride = (len / 12).max(1);
        for k in (0..len).step_by(stride) {
            let orig = model.store.iter().nth(pi).unwrap().value[k];
            let mut eval = |v: f64| {
                model.store.iter_mut().nth(pi).unwrap().value[k] = v;
                let r = model.reconstruct(&corrupted, 2).unwrap();
                sscxr_core::pretrain::masked_l1_loss(&clean, &r, &mask, LossReduction::Sum).unwrap()
            };
            let num = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            model.store.iter_mut().nth(pi).unwrap().value[k] = orig;
            let e = rel_err(analytic[pi][k], num);
            if e > worst.0 {
                worst = (e, format!("{name}[{k}]: analytic {} numeric {num}", analytic[pi][k]));
            }
            checked += 1;
        }
    }
    GradReport {
        worst: worst.0,
        detail: worst.1,
        checked,
        min_residual,
    }
}
