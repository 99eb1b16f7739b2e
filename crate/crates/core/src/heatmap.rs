//! Attention heatmaps: rollout across layers or a single raw attention head.

use crate::checkpoint::Checkpoint;
use crate::data::image_io::{min_max_normalize, resize_bilinear};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::scalar::Scalar;
use crate::vit::{AttentionMaps, Capture, Encoder, EncoderConfig, ENCODER_PREFIX};

/// Head-averaged attention with the identity added, rows renormalized:
/// `(mean_h A_h + I) / 2` for an `len x len` layer.
pub fn augmented_attention(heads: &[&[f64]], len: usize) -> Vec<f64> {
    let mut a = vec![0.0; len * len];
    for h in heads {
        for (x, &v) in a.iter_mut().zip(h.iter()) {
            *x += v;
        }
    }
    let nh = heads.len() as f64;
    for i in 0..len {
        let row = &mut a[i * len..(i + 1) * len];
        for v in row.iter_mut() {
            *v /= nh;
        }
        row[i] += 1.0;
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    a
}

fn matmul_square(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    crate::linalg::matmul(n, n, n, a, crate::linalg::Trans::No, b, crate::linalg::Trans::No, 0.0, &mut c);
    c
}

/// `R = A'_L ... A'_1` for the augmented attention of every layer of one
/// sample.
pub fn rollout<T: Scalar>(maps: &AttentionMaps<T>, sample: usize) -> Vec<f64> {
    let len = maps.len;
    let mut r: Option<Vec<f64>> = None;
    for layer in 0..maps.layers.len() {
        let heads: Vec<Vec<f64>> = (0..maps.heads)
            .map(|h| maps.head(layer, sample, h).iter().map(|v| v.to_f64().unwrap_or(0.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = heads.iter().map(Vec::as_slice).collect();
        let a = augmented_attention(&refs, len);
        r = Some(match r {
            None => a,
            Some(prev) => matmul_square(&a, &prev, len),
        });
    }
    r.unwrap_or_else(|| {
        let mut id = vec![0.0; len * len];
        (0..len).for_each(|i| id[i * len + i] = 1.0);
        id
    })
}

/// Class-token row of an `len x len` matrix restricted to patch columns.
pub fn class_row(matrix: &[f64], len: usize) -> Vec<f64> {
    matrix[1..len].to_vec()
}

/// Which attention to visualize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapMode {
    Rollout,
    /// Raw attention of one (0-based) layer and head.
    Raw { layer: usize, head: usize },
}

/// Encoder rebuilt from any checkpoint; only encoder arrays are read.
pub struct AttentionModel {
    pub store: ParamStore<f64>,
    pub encoder: Encoder,
}

impl AttentionModel {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if !ck.encoder.use_class_token {
            return Err(Error::Config("heatmaps need an encoder with a class token".into()));
        }
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &ck.encoder, 0)?;
        ck.load_into(&mut store, ENCODER_PREFIX)?;
        Ok(AttentionModel { store, encoder })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    /// Heatmap at image resolution with values in `[0, 1]`.
    pub fn heatmap(&self, image: &[f32], mode: HeatmapMode) -> Result<Vec<f32>> {
        let cfg = &self.encoder.config;
        let px: Vec<f64> = image.iter().map(|&v| v as f64).collect();
        let out = self.encoder.forward(
            &self.store,
            &px,
            1,
            &Capture {
                taps: Vec::new(),
                attention: true,
            },
        )?;
        let maps = out.attention.expect("attention requested");
        let len = maps.len;
        let row = match mode {
            HeatmapMode::Rollout => class_row(&rollout(&maps, 0), len),
            HeatmapMode::Raw { layer, head } => {
                if layer >= cfg.depth || head >= cfg.num_heads {
                    return Err(Error::Config(format!(
                        "layer {layer} / head {head} outside depth {} / heads {}",
                        cfg.depth, cfg.num_heads
                    )));
                }
                class_row(maps.head(layer, 0, head), len)
            }
        };
        let g = cfg.grid();
        let up = resize_bilinear(&row, g, g, cfg.image_size, cfg.image_size);
        Ok(min_max_normalize(&up))
    }
}

/// Piecewise-linear blue-cyan-yellow-red colormap for `t` in `[0, 1]`.
pub fn colormap(t: f32) -> [u8; 3] {
    const STOPS: [(f32, [f32; 3]); 5] = [
        (0.0, [0.0, 0.0, 0.5]),
        (0.25, [0.0, 0.3, 1.0]),
        (0.5, [0.0, 1.0, 1.0]),
        (0.75, [1.0, 1.0, 0.0]),
        (1.0, [1.0, 0.0, 0.0]),
    ];
    let t = t.clamp(0.0, 1.0);
    let k = STOPS.iter().position(|s| s.0 >= t).unwrap_or(4).max(1);
    let (t0, c0) = STOPS[k - 1];
    let (t1, c1) = STOPS[k];
    let f = (t - t0) / (t1 - t0);
    let mut out = [0u8; 3];
    for i in 0..3 {
        out[i] = ((c0[i] + (c1[i] - c0[i]) * f) * 255.0).round() as u8;
    }
    out
}

/// Blends the colormapped heatmap over the gray image, half and half.
pub fn overlay(image: &[f32], heat: &[f32]) -> Vec<u8> {
    image
        .iter()
        .zip(heat)
        .flat_map(|(&g, &h)| {
            let c = colormap(h);
            let g = g.clamp(0.0, 1.0) * 255.0;
            c.map(|v| (0.5 * g + 0.5 * v as f32).round() as u8)
        })
        .collect()
}
