//! Classification and segmentation metrics and the report records built from
//! them.

use std::path::Path;

use serde_json::{Map, Value};

use crate::cls::{argmax, Prediction};
use crate::error::{Error, Result};

/// Rates from a one-vs-rest 2x2 confusion table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusionRates {
    pub tpr: f64,
    pub fpr: f64,
    pub fnr: f64,
    /// Percent.
    pub acc: f64,
}

/// Counts `(tp, fp, tn, fn)` for `positive` against every other class.
pub fn confusion_counts(labels: &[usize], predictions: &[usize], positive: usize) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y == positive, p == positive) {
            (true, true) => c.0 += 1,
            (false, true) => c.1 += 1,
            (false, false) => c.2 += 1,
            (true, false) => c.3 += 1,
        }
    }
    c
}

pub fn confusion_rates(labels: &[usize], predictions: &[usize], positive: usize) -> Result<ConfusionRates> {
    if labels.len() != predictions.len() {
        return Err(Error::Metric(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let (tp, fp, tn, fneg) = confusion_counts(labels, predictions, positive);
    if tp + fneg == 0 || fp + tn == 0 {
        return Err(Error::Metric(format!(
            "class {positive}: rates need both positive and negative ground truth"
        )));
    }
    let pos = (tp + fneg) as f64;
    let neg = (fp + tn) as f64;
    Ok(ConfusionRates {
        tpr: tp as f64 / pos,
        fpr: fp as f64 / neg,
        fnr: fneg as f64 / pos,
        acc: 100.0 * (tp + tn) as f64 / labels.len() as f64,
    })
}

fn check_scores(labels: &[bool], scores: &[f64]) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(Error::Metric(format!("{} labels but {} scores", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, stable.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Area under the ROC curve via the Mann-Whitney statistic with average
/// ranks (ties count one half).
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (pos, neg) = check_scores(labels, scores)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("roc_auc needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: the sum over distinct score thresholds of
/// `(R_k - R_{k-1}) * P_k`, tied scores entering together.
pub fn pr_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (pos, _) = check_scores(labels, scores)?;
    if pos == 0 {
        return Err(Error::Metric("pr_auc needs at least one positive".into()));
    }
    let idx = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

fn check_masks(a: &[u8], b: &[u8]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!("mask sizes {} and {} differ", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|&v| v > 1) {
        return Err(Error::Metric("masks must be binary (0 or 1)".into()));
    }
    Ok(())
}

fn overlap(a: &[u8], b: &[u8]) -> (usize, usize, usize) {
    let inter = a.iter().zip(b).filter(|(&x, &y)| x == 1 && y == 1).count();
    let na = a.iter().filter(|&&x| x == 1).count();
    let nb = b.iter().filter(|&&x| x == 1).count();
    (inter, na, nb)
}

/// `2|A n B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(pred: &[u8], gt: &[u8]) -> Result<f64> {
    check_masks(pred, gt)?;
    let (i, a, b) = overlap(pred, gt);
    Ok(if a + b == 0 { 1.0 } else { 2.0 * i as f64 / (a + b) as f64 })
}

/// `|A n B| / |A u B|`; 1 when both masks are empty.
pub fn iou(pred: &[u8], gt: &[u8]) -> Result<f64> {
    check_masks(pred, gt)?;
    let (i, a, b) = overlap(pred, gt);
    let union = a + b - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Foreground pixels with a 4-neighbour outside the foreground (pixels
/// beyond the image edge count as background).
pub fn boundary(mask: &[u8], h: usize, w: usize) -> Vec<bool> {
    let fg = |i: isize, j: isize| i >= 0 && j >= 0 && (i as usize) < h && (j as usize) < w && mask[i as usize * w + j as usize] != 0;
    let mut out = vec![false; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            if fg(i, j) && (!fg(i - 1, j) || !fg(i + 1, j) || !fg(i, j - 1) || !fg(i, j + 1)) {
                out[i as usize * w + j as usize] = true;
            }
        }
    }
    out
}

/// One-dimensional squared distance transform of `f` (lower envelope of
/// parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    // Skip leading infinite entries so every parabola has a finite base.
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest `true`.
pub fn squared_distance_transform(sites: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let mut col = vec![0.0; h];
    let mut tmp = vec![0.0; h];
    for j in 0..w {
        for i in 0..h {
            col[i] = grid[i * w + j];
        }
        edt_1d(&col, &mut tmp);
        for i in 0..h {
            grid[i * w + j] = tmp[i];
        }
    }
    let mut row = vec![0.0; w];
    for i in 0..h {
        edt_1d(&grid[i * w..(i + 1) * w], &mut row);
        grid[i * w..(i + 1) * w].copy_from_slice(&row);
    }
    grid
}

/// Percentile with linear interpolation at rank `q * (n - 1)`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Symmetric 95th-percentile Hausdorff distance between mask boundaries, in
/// pixels: the larger of the two directed percentiles.
pub fn hd95(pred: &[u8], gt: &[u8], h: usize, w: usize) -> Result<f64> {
    check_masks(pred, gt)?;
    if pred.len() != h * w {
        return Err(Error::Metric(format!("mask of {} pixels is not {h}x{w}", pred.len())));
    }
    if !pred.contains(&1) || !gt.contains(&1) {
        return Err(Error::Metric("hd95 is undefined for an empty mask".into()));
    }
    let ba = boundary(pred, h, w);
    let bb = boundary(gt, h, w);
    let da = squared_distance_transform(&ba, h, w);
    let db = squared_distance_transform(&bb, h, w);
    let directed = |from: &[bool], to_dist: &[f64]| -> Vec<f64> {
        from.iter()
            .zip(to_dist)
            .filter(|(&b, _)| b)
            .map(|(_, &d)| d.sqrt())
            .collect()
    };
    let ab = percentile(&directed(&ba, &db), 0.95);
    let ba_ = percentile(&directed(&bb, &da), 0.95);
    Ok(ab.max(ba_))
}

/// Flat key-value metric record for one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub fields: Map<String, Value>,
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

impl MetricReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.fields.get(key).and_then(Value::as_f64)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.fields).expect("report serializes");
        s.push('\n');
        s
    }

    /// Header line plus one row, columns in key order.
    pub fn to_csv(&self) -> String {
        let keys: Vec<&str> = self.fields.keys().map(String::as_str).collect();
        let vals: Vec<String> = self
            .fields
            .values()
            .map(|v| match v {
                Value::Null => String::new(),
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        format!("{}\n{}\n", keys.join(","), vals.join(","))
    }

    pub fn write(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, self.to_json()).map_err(|e| Error::io(json_path, e))?;
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))
    }
}

/// Per-class one-vs-rest rates and AUCs plus overall accuracy. For two
/// classes the headline `tpr`/`fpr`/`fnr`/`auc_*` fields refer to class 1;
/// with more classes they are macro averages over classes where defined.
pub fn cls_report(predictions: &[Prediction], cohort: &str) -> Result<MetricReport> {
    let c = predictions.first().map_or(0, |p| p.probs.len());
    if c < 2 {
        return Err(Error::Metric("predictions need at least two classes".into()));
    }
    let labels: Vec<usize> = predictions
        .iter()
        .map(|p| p.label.ok_or_else(|| Error::Metric(format!("{} has no label", p.image))))
        .collect::<Result<_>>()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Label { label: bad, num_classes: c });
    }
    let preds: Vec<usize> = predictions.iter().map(|p| argmax(&p.probs)).collect();
    let correct = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
    let mut f = Map::new();
    f.insert("task".into(), Value::String("cls".into()));
    f.insert("cohort".into(), Value::String(cohort.into()));
    f.insert("samples".into(), Value::from(predictions.len()));
    f.insert("num_classes".into(), Value::from(c));
    f.insert("acc".into(), num(100.0 * correct as f64 / labels.len() as f64));
    let mut per_class: Vec<[Option<f64>; 5]> = Vec::new();
    for k in 0..c {
        let rates = confusion_rates(&labels, &preds, k).ok();
        let bin: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        let scores: Vec<f64> = predictions.iter().map(|p| p.probs[k]).collect();
        let row = [
            rates.map(|r| r.tpr),
            rates.map(|r| r.fpr),
            rates.map(|r| r.fnr),
            roc_auc(&bin, &scores).ok(),
            pr_auc(&bin, &scores).ok(),
        ];
        for (name, v) in ["tpr", "fpr", "fnr", "auc_roc", "auc_pr"].iter().zip(row) {
            f.insert(format!("class_{k}_{name}"), opt(v));
        }
        per_class.push(row);
    }
    let headline = |m: usize| -> Option<f64> {
        if c == 2 {
            return per_class[1][m];
        }
        let defined: Vec<f64> = per_class.iter().filter_map(|r| r[m]).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    };
    for (m, name) in ["tpr", "fpr", "fnr", "auc_roc", "auc_pr"].iter().enumerate() {
        f.insert((*name).into(), opt(headline(m)));
    }
    Ok(MetricReport { fields: f })
}

/// Mean IoU, Dice and HD95 over samples. Samples where HD95 is undefined
/// (an empty mask) are left out of its mean and counted.
pub fn seg_report(preds: &[Vec<u8>], gts: &[Vec<u8>], size: usize, cohort: &str) -> Result<MetricReport> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Metric("need equally many, nonzero predicted and true masks".into()));
    }
    let (mut d, mut j, mut h) = (0.0, 0.0, 0.0);
    let mut h_n = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        d += dice(p, g)?;
        j += iou(p, g)?;
        if let Ok(v) = hd95(p, g, size, size) {
            h += v;
            h_n += 1;
        }
    }
    let n = preds.len() as f64;
    let mut f = Map::new();
    f.insert("task".into(), Value::String("seg".into()));
    f.insert("cohort".into(), Value::String(cohort.into()));
    f.insert("samples".into(), Value::from(preds.len()));
    f.insert("dice".into(), num(d / n));
    f.insert("iou".into(), num(j / n));
    f.insert("hd95".into(), opt((h_n > 0).then(|| h / h_n as f64)));
    f.insert("hd95_excluded".into(), Value::from(preds.len() - h_n));
    Ok(MetricReport { fields: f })
}
