//! Group-masked corruption: connected blocks of patches are replaced by noise
//! or by co-located patches of another image in the batch, and the per-pixel
//! mask `M` of manipulated pixels is returned alongside.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorruptionMode {
    #[serde(rename = "noise-only")]
    NoiseOnly,
    #[serde(rename = "alien-only")]
    AlienOnly,
    /// Each sample gets exactly one corruption type, chosen uniformly.
    #[serde(rename = "per-sample-choice")]
    PerSampleChoice,
    /// Noise blocks first, then alien blocks on the patches noise left intact.
    #[serde(rename = "both-disjoint")]
    BothDisjoint,
}

impl CorruptionMode {
    pub fn uses_alien(self) -> bool {
        !matches!(self, CorruptionMode::NoiseOnly)
    }
}

impl FromStr for CorruptionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise-only" => Ok(CorruptionMode::NoiseOnly),
            "alien-only" => Ok(CorruptionMode::AlienOnly),
            "per-sample-choice" => Ok(CorruptionMode::PerSampleChoice),
            "both-disjoint" => Ok(CorruptionMode::BothDisjoint),
            other => Err(Error::Config(format!("unknown corruption mode `{other}`"))),
        }
    }
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionMode::NoiseOnly => "noise-only",
            CorruptionMode::AlienOnly => "alien-only",
            CorruptionMode::PerSampleChoice => "per-sample-choice",
            CorruptionMode::BothDisjoint => "both-disjoint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub noise_fraction: f64,
    pub alien_fraction: f64,
    pub mode: CorruptionMode,
    /// Inclusive range of block height/width ratios.
    pub group_aspect: (f64, f64),
    /// Inclusive range of block areas, in patches.
    pub group_area: (usize, usize),
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            noise_fraction: 0.70,
            alien_fraction: 0.35,
            mode: CorruptionMode::PerSampleChoice,
            group_aspect: (1.0 / 3.0, 3.0),
            group_area: (4, 25),
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("noise_fraction", self.noise_fraction), ("alien_fraction", self.alien_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} {f} outside [0, 1]")));
            }
        }
        let (a0, a1) = self.group_aspect;
        if !(a0 > 0.0 && a0 <= a1) {
            return Err(Error::Config(format!("invalid group_aspect range ({a0}, {a1})")));
        }
        let (m0, m1) = self.group_area;
        if m0 == 0 || m0 > m1 {
            return Err(Error::Config(format!("invalid group_area range ({m0}, {m1})")));
        }
        Ok(())
    }

    pub fn max_block_area(&self) -> usize {
        self.group_area.1
    }
}

/// A rectangle of patches, in grid coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchBlock {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Marked patches on a `grid_h x grid_w` grid, plus the blocks that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMask {
    pub grid_h: usize,
    pub grid_w: usize,
    pub grid: Vec<bool>,
    pub blocks: Vec<PatchBlock>,
}

impl PatchMask {
    pub fn empty(grid_h: usize, grid_w: usize) -> Self {
        PatchMask {
            grid_h,
            grid_w,
            grid: vec![false; grid_h * grid_w],
            blocks: Vec::new(),
        }
    }

    pub fn marked(&self) -> usize {
        self.grid.iter().filter(|&&m| m).count()
    }

    pub fn coverage(&self) -> f64 {
        self.marked() as f64 / self.grid.len() as f64
    }

    fn mark(&mut self, b: PatchBlock) {
        for r in b.top..b.top + b.height {
            for c in b.left..b.left + b.width {
                self.grid[r * self.grid_w + c] = true;
            }
        }
        self.blocks.push(b);
    }

    /// Per-pixel mask for patches of `p x p` pixels: 1 where the containing
    /// patch is marked.
    pub fn pixel_mask(&self, p: usize) -> Vec<u8> {
        let (h, w) = (self.grid_h * p, self.grid_w * p);
        let mut m = vec![0u8; h * w];
        for i in 0..h {
            for j in 0..w {
                m[i * w + j] = u8::from(self.grid[(i / p) * self.grid_w + j / p]);
            }
        }
        m
    }
}

fn sample_block(grid_h: usize, grid_w: usize, spec: &CorruptionSpec, rng: &mut Rng) -> PatchBlock {
    let (a0, a1) = spec.group_area;
    let area = rng.random_range(a0..=a1) as f64;
    let (lo, hi) = (spec.group_aspect.0.ln(), spec.group_aspect.1.ln());
    let aspect = if hi > lo { rng.random_range(lo..=hi).exp() } else { lo.exp() };
    let mut h = ((area * aspect).sqrt().round() as usize).clamp(1, grid_h);
    let mut w = ((area / aspect).sqrt().round() as usize).clamp(1, grid_w);
    while h * w > a1 {
        if h >= w && h > 1 {
            h -= 1;
        } else {
            w -= 1;
        }
    }
    let top = rng.random_range(0..=grid_h - h);
    let left = rng.random_range(0..=grid_w - w);
    PatchBlock {
        top,
        left,
        height: h,
        width: w,
    }
}

/// Places random rectangular blocks (uniform position, overlap allowed) until
/// at least `target_fraction` of the grid is marked.
pub fn sample_group_mask(
    grid_h: usize,
    grid_w: usize,
    target_fraction: f64,
    spec: &CorruptionSpec,
    rng: &mut Rng,
) -> PatchMask {
    let mut mask = PatchMask::empty(grid_h, grid_w);
    let total = grid_h * grid_w;
    if total == 0 || target_fraction <= 0.0 {
        return mask;
    }
    let needed = ((target_fraction.min(1.0) * total as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut marked = 0;
    while marked < needed {
        let b = sample_block(grid_h, grid_w, spec, rng);
        mask.mark(b);
        marked = mask.marked();
    }
    mask
}

/// Which corruption a sample received.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCorruption {
    pub noise: PatchMask,
    pub alien: PatchMask,
    pub donor: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Corrupted<T> {
    /// `N x H x W` corrupted images.
    pub images: Vec<T>,
    /// `N x H x W` binary mask of manipulated pixels, as scalars.
    pub masks: Vec<T>,
    pub details: Vec<SampleCorruption>,
}

/// Corrupts every image of `batch`. Each sample draws from its own substream
/// keyed by a base value taken from `rng` and the sample's batch position.
pub fn apply_corruption<T: Scalar>(
    batch: &Batch<T>,
    patch_size: usize,
    spec: &CorruptionSpec,
    rng: &mut Rng,
) -> Result<Corrupted<T>> {
    spec.validate()?;
    let n = batch.len();
    let (h, w) = (batch.height, batch.width);
    if patch_size == 0 || h % patch_size != 0 || w % patch_size != 0 {
        return Err(Error::Shape(format!("{h}x{w} images not divisible into {patch_size}-pixel patches")));
    }
    let alien_requested = spec.mode.uses_alien() && spec.alien_fraction > 0.0;
    if alien_requested && n < 2 {
        return Err(Error::Corruption(
            "alien-patch corruption needs a batch of at least 2 samples".into(),
        ));
    }
    let (gh, gw) = (h / patch_size, w / patch_size);
    let base: u64 = rng.random();
    let mut images = batch.images.clone();
    let mut masks = vec![T::zero(); n * h * w];
    let mut details = Vec::with_capacity(n);
    for k in 0..n {
        let mut srng = rng::substream(base, &[tag::CORRUPT, k as u64]);
        let (use_noise, use_alien) = match spec.mode {
            CorruptionMode::NoiseOnly => (true, false),
            CorruptionMode::AlienOnly => (false, true),
            CorruptionMode::PerSampleChoice => {
                let noise = srng.random_bool(0.5);
                (noise, !noise)
            }
            CorruptionMode::BothDisjoint => (true, true),
        };
        let noise = if use_noise {
            sample_group_mask(gh, gw, spec.noise_fraction, spec, &mut srng)
        } else {
            PatchMask::empty(gh, gw)
        };
        let mut alien = if use_alien {
            sample_group_mask(gh, gw, spec.alien_fraction, spec, &mut srng)
        } else {
            PatchMask::empty(gh, gw)
        };
        for (a, &nz) in alien.grid.iter_mut().zip(&noise.grid) {
            *a = *a && !nz;
        }
        let donor = (use_alien && alien.marked() > 0).then(|| {
            let d = srng.random_range(0..n - 1);
            if d >= k {
                d + 1
            } else {
                d
            }
        });
        let img = &mut images[k * h * w..(k + 1) * h * w];
        let m = &mut masks[k * h * w..(k + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let g = (i / patch_size) * gw + j / patch_size;
                let idx = i * w + j;
                if noise.grid[g] {
                    img[idx] = lit(srng.random::<f64>());
                    m[idx] = T::one();
                } else if alien.grid[g] {
                    let d = donor.expect("donor drawn when alien patches exist");
                    img[idx] = batch.images[d * h * w + idx];
                    m[idx] = T::one();
                }
            }
        }
        details.push(SampleCorruption { noise, alien, donor });
    }
    Ok(Corrupted { images, masks, details })
}
