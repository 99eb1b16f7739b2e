//! Brute-force reference implementations of the metrics, checked against the
//! library on random small instances.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sscxr_core::metrics::{confusion_rates, dice, hd95, iou, pr_auc, roc_auc};

pub fn oracle_roc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

pub fn oracle_ap(labels: &[bool], scores: &[f64]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let called: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp = called.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / pos;
        ap += (recall - prev) * tp / called.len() as f64;
        prev = recall;
    }
    ap
}

fn oracle_boundary(m: &[u8], h: usize, w: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..h {
        for j in 0..w {
            if m[i * w + j] == 0 {
                continue;
            }
            let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
            if nbrs.iter().any(|&(a, b)| a >= h || b >= w || m[a * w + b] == 0) {
                out.push((i, j));
            }
        }
    }
    out
}

fn oracle_percentile(mut v: Vec<f64>, q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn oracle_hd95(a: &[u8], b: &[u8], h: usize, w: usize) -> f64 {
    let ba = oracle_boundary(a, h, w);
    let bb = oracle_boundary(b, h, w);
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| -> Vec<f64> {
        from.iter()
            .map(|&(i, j)| {
                to.iter()
                    .map(|&(k, l)| {
                        let (di, dj) = (i as f64 - k as f64, j as f64 - l as f64);
                        di * di + dj * dj
                    })
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect()
    };
    oracle_percentile(directed(&ba, &bb), 0.95).max(oracle_percentile(directed(&bb, &ba), 0.95))
}

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Coarse values so ties are common.
    (0..n).map(|_| rng.random_range(0..8) as f64 / 8.0).collect()
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<u8> {
    let density = rng.random_range(0.05..0.9);
    let mut m: Vec<u8> = (0..h * w).map(|_| u8::from(rng.random_bool(density))).collect();
    if !m.contains(&1) {
        m[rng.random_range(0..h * w)] = 1;
    }
    m
}

/// Runs every check on `instances` random cases; returns the first failure.
pub fn check_all(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let n = rng.random_range(2..30);
        let classes = rng.random_range(2..4);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let pos = 1;
        let r = confusion_rates(&labels, &preds, pos).map_err(|e| e.to_string())?;
        let (mut tp, mut fp, mut tn, mut fneg) = (0.0, 0.0, 0.0, 0.0);
        for (&y, &p) in labels.iter().zip(&preds) {
            match (y == pos, p == pos) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (false, false) => tn += 1.0,
                (true, false) => fneg += 1.0,
            }
        }
        let want = (tp / (tp + fneg), fp / (fp + tn), fneg / (tp + fneg), 100.0 * (tp + tn) / n as f64);
        if (r.tpr, r.fpr, r.fnr, r.acc) != want {
            return Err(format!("case {case}: confusion rates {r:?} vs {want:?}"));
        }

        let bin: Vec<bool> = labels.iter().map(|&l| l == pos).collect();
        let scores = random_scores(&mut rng, n);
        let roc = roc_auc(&bin, &scores).map_err(|e| e.to_string())?;
        let roc_o = oracle_roc(&bin, &scores);
        if (roc - roc_o).abs() > 1e-9 {
            return Err(format!("case {case}: roc {roc} vs oracle {roc_o}"));
        }
        let warped: Vec<f64> = scores.iter().map(|&s| 3.0 * (2.0 * s).exp() - 1.0).collect();
        let roc_w = roc_auc(&bin, &warped).map_err(|e| e.to_string())?;
        if (roc_w - roc).abs() > 1e-12 {
            return Err(format!("case {case}: roc not invariant under a monotone map ({roc} vs {roc_w})"));
        }
        let ap = pr_auc(&bin, &scores).map_err(|e| e.to_string())?;
        let ap_o = oracle_ap(&bin, &scores);
        if (ap - ap_o).abs() > 1e-9 {
            return Err(format!("case {case}: pr_auc {ap} vs oracle {ap_o}"));
        }

        let (h, w) = (rng.random_range(1..10), rng.random_range(1..10));
        let a = random_mask(&mut rng, h, w);
        let b = random_mask(&mut rng, h, w);
        let inter = a.iter().zip(&b).filter(|(&x, &y)| x == 1 && y == 1).count() as f64;
        let (na, nb) = (
            a.iter().filter(|&&x| x == 1).count() as f64,
            b.iter().filter(|&&x| x == 1).count() as f64,
        );
        let d = dice(&a, &b).map_err(|e| e.to_string())?;
        let j = iou(&a, &b).map_err(|e| e.to_string())?;
        if d != 2.0 * inter / (na + nb) || j != inter / (na + nb - inter) {
            return Err(format!("case {case}: dice {d} / iou {j} disagree with set counts"));
        }
        if (d - 2.0 * j / (1.0 + j)).abs() > 1e-12 {
            return Err(format!("case {case}: dice-iou identity fails ({d}, {j})"));
        }
        let hd = hd95(&a, &b, h, w).map_err(|e| e.to_string())?;
        let hd_o = oracle_hd95(&a, &b, h, w);
        if hd != hd_o {
            return Err(format!("case {case}: hd95 {hd} vs oracle {hd_o}"));
        }
    }
    Ok(())
}
