//! Synthetic datasets small enough to train on in seconds.
//!
//! * `recon`: smooth random Gaussian blobs, for reconstruction pretraining.
//! * `cls2`: a bright disc in the upper half (label 0) or lower half (label 1)
//!   over a faint smooth background.
//! * `seg-shapes`: one bright rotated ellipse with its exact binary mask.
//!
//! Every image is min-max normalized before 8-bit quantization, so it spans
//! the full 0..=255 range and loads back exactly.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::image_io::{min_max_normalize, save_gray_bytes, save_gray_png};
use crate::data::manifest::{ManifestEntry, SampleManifest, SplitTag, TaskKind};
use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthKind {
    #[serde(rename = "recon")]
    Recon,
    #[serde(rename = "cls2")]
    Cls2,
    #[serde(rename = "seg-shapes")]
    SegShapes,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recon" => Ok(SynthKind::Recon),
            "cls2" => Ok(SynthKind::Cls2),
            "seg-shapes" => Ok(SynthKind::SegShapes),
            other => Err(Error::Config(format!(
                "unknown synthetic kind `{other}` (expected recon, cls2 or seg-shapes)"
            ))),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Recon => "recon",
            SynthKind::Cls2 => "cls2",
            SynthKind::SegShapes => "seg-shapes",
        })
    }
}

/// Rotated ellipse in pixel coordinates (row `cy`, column `cx`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    /// Rotation in radians.
    pub angle: f64,
}

impl Ellipse {
    /// Whether pixel `(i, j)` lies inside the ellipse.
    pub fn contains(&self, i: usize, j: usize) -> bool {
        let (dy, dx) = (i as f64 - self.cy, j as f64 - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = dy * c + dx * s;
        let v = -dy * s + dx * c;
        (u / self.ry).powi(2) + (v / self.rx).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub image: PathBuf,
    pub label: Option<usize>,
    pub mask: Option<PathBuf>,
    pub ellipse: Option<Ellipse>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: SampleManifest,
    pub manifest_path: PathBuf,
    pub records: Vec<SynthRecord>,
}

fn add_blob(field: &mut [f64], size: usize, cy: f64, cx: f64, sigma: f64, amp: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    for i in 0..size {
        for j in 0..size {
            let d2 = (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2);
            field[i * size + j] += amp * (-d2 * inv).exp();
        }
    }
}

fn smooth_background(rng: &mut Rng, size: usize, blobs: usize, amp: (f64, f64)) -> Vec<f64> {
    let s = size as f64;
    let mut field = vec![0.0; size * size];
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..s);
        let cx = rng.random_range(0.0..s);
        let sigma = rng.random_range(s / 16.0..s / 4.0).max(1.0);
        let a = rng.random_range(amp.0..amp.1);
        add_blob(&mut field, size, cy, cx, sigma, a);
    }
    field
}

fn recon_image(rng: &mut Rng, size: usize) -> Vec<f64> {
    let blobs = rng.random_range(3..=6);
    smooth_background(rng, size, blobs, (0.3, 1.0))
}

fn cls2_image(rng: &mut Rng, size: usize, label: usize) -> Vec<f64> {
    let s = size as f64;
    let mut field = smooth_background(rng, size, 2, (0.05, 0.2));
    let r = rng.random_range((s / 10.0).max(1.5)..(s / 6.0).max(2.0));
    let half = s / 2.0;
    let cy = if label == 0 {
        rng.random_range(r..(half - r).max(r + 1e-9))
    } else {
        rng.random_range(half + r..(s - r).max(half + r + 1e-9))
    };
    let cx = rng.random_range(r..(s - r).max(r + 1e-9));
    for i in 0..size {
        for j in 0..size {
            if (i as f64 - cy).powi(2) + (j as f64 - cx).powi(2) <= r * r {
                field[i * size + j] += 1.0;
            }
        }
    }
    field
}

fn seg_image(rng: &mut Rng, size: usize) -> (Vec<f64>, Vec<u8>, Ellipse) {
    let s = size as f64;
    let e = Ellipse {
        cy: rng.random_range(0.35 * s..0.65 * s),
        cx: rng.random_range(0.35 * s..0.65 * s),
        ry: rng.random_range(0.12 * s..0.3 * s).max(1.0),
        rx: rng.random_range(0.12 * s..0.3 * s).max(1.0),
        angle: rng.random_range(0.0..std::f64::consts::PI),
    };
    let mut field = smooth_background(rng, size, 2, (0.05, 0.15));
    let mut mask = vec![0u8; size * size];
    for i in 0..size {
        for j in 0..size {
            if e.contains(i, j) {
                field[i * size + j] += 0.6;
                mask[i * size + j] = 1;
            }
        }
    }
    (field, mask, e)
}

/// Generates `count` images of `kind` at `size x size` into `out_dir`, plus
/// `manifest.csv`.
pub fn synth_dataset(kind: SynthKind, count: usize, size: usize, seed: u64, out_dir: &Path) -> Result<SynthOutput> {
    if count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    if size == 0 {
        return Err(Error::Config("size must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let kind_tag = kind as u64;
    let mut entries = Vec::with_capacity(count);
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng::substream(seed, &[tag::SYNTH, kind_tag, i as u64]);
        let name = format!("img_{i:05}.png");
        let image_path = out_dir.join(&name);
        let (field, label, mask, ellipse) = match kind {
            SynthKind::Recon => (recon_image(&mut rng, size), None, None, None),
            SynthKind::Cls2 => {
                let label = i % 2;
                (cls2_image(&mut rng, size, label), Some(label), None, None)
            }
            SynthKind::SegShapes => {
                let (f, m, e) = seg_image(&mut rng, size);
                (f, None, Some(m), Some(e))
            }
        };
        save_gray_png(&image_path, &min_max_normalize(&field), size, size)?;
        let mask_entry = match mask {
            Some(m) => {
                let mask_name = format!("mask_{i:05}.png");
                let bytes: Vec<u8> = m.iter().map(|&b| b * 255).collect();
                save_gray_bytes(&out_dir.join(&mask_name), &bytes, size, size)?;
                Some(mask_name)
            }
            None => None,
        };
        records.push(SynthRecord {
            image: image_path,
            label,
            mask: mask_entry.as_ref().map(|m| out_dir.join(m)),
            ellipse,
        });
        entries.push(ManifestEntry {
            image: name,
            label,
            mask: mask_entry,
        });
    }
    let task = match kind {
        SynthKind::Recon => TaskKind::Unlabeled,
        SynthKind::Cls2 => TaskKind::Classification,
        SynthKind::SegShapes => TaskKind::Segmentation,
    };
    let manifest = SampleManifest {
        entries,
        split_tag: if task == TaskKind::Unlabeled { SplitTag::Pretrain } else { SplitTag::Train },
        task,
        root: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join("manifest.csv");
    manifest.write(&manifest_path)?;
    Ok(SynthOutput {
        manifest,
        manifest_path,
        records,
    })
}
