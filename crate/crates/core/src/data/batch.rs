use rand::seq::SliceRandom;

use crate::data::image_io::{load_image, load_mask, ImageSample};
use crate::data::manifest::{SampleManifest, TaskKind};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{lit, Scalar};

/// All samples of a manifest, decoded at a fixed working size.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<ImageSample>,
    pub task: TaskKind,
    pub size: usize,
}

impl Dataset {
    pub fn load(manifest: &SampleManifest, working_size: usize) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.len());
        for (i, e) in manifest.entries.iter().enumerate() {
            let mut s = load_image(&manifest.image_path(i), working_size)?;
            s.label = e.label;
            if let Some(mp) = manifest.mask_path(i) {
                s.mask = Some(load_mask(&mp, working_size)?);
            }
            samples.push(s);
        }
        Ok(Dataset {
            samples,
            task: manifest.task,
            size: working_size,
        })
    }

    pub fn from_samples(samples: Vec<ImageSample>, task: TaskKind) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Config("dataset has no samples".into()))?;
        let size = first.height;
        if samples.iter().any(|s| s.height != size || s.width != size) {
            return Err(Error::Shape("samples must share one square working size".into()));
        }
        Ok(Dataset { samples, task, size })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Gathers the given sample indices into a batch.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> Batch<T> {
        let samples: Vec<&ImageSample> = indices.iter().map(|&i| &self.samples[i]).collect();
        Batch::from_samples(&samples, indices.to_vec())
    }
}

/// `N` images stacked back to back with aligned supervision.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub images: Vec<T>,
    pub height: usize,
    pub width: usize,
    pub labels: Option<Vec<usize>>,
    /// Binary masks as scalars in `{0, 1}`.
    pub masks: Option<Vec<T>>,
    pub sample_indices: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_samples(samples: &[&ImageSample], sample_indices: Vec<usize>) -> Self {
        assert!(!samples.is_empty(), "batch must hold at least one sample");
        let (h, w) = (samples[0].height, samples[0].width);
        let images = samples
            .iter()
            .flat_map(|s| s.pixels.iter().map(|&v| lit::<T>(v as f64)))
            .collect();
        let labels = samples.iter().map(|s| s.label).collect::<Option<Vec<_>>>();
        let masks = samples
            .iter()
            .map(|s| s.mask.as_ref())
            .collect::<Option<Vec<_>>>()
            .map(|ms| {
                ms.into_iter()
                    .flat_map(|m| m.iter().map(|&b| if b != 0 { T::one() } else { T::zero() }))
                    .collect()
            });
        Batch {
            images,
            height: h,
            width: w,
            labels,
            masks,
            sample_indices,
        }
    }

    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }

    pub fn image(&self, n: usize) -> &[T] {
        let s = self.height * self.width;
        &self.images[n * s..(n + 1) * s]
    }
}

/// Splits `0..len` into consecutive batches, optionally shuffled by `rng`.
pub fn batch_indices(len: usize, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::Config("cannot batch an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// One epoch of batches over a loaded dataset.
pub fn make_batches<T: Scalar>(dataset: &Dataset, batch_size: usize, shuffle: bool, rng: &mut Rng) -> Result<Vec<Batch<T>>> {
    Ok(batch_indices(dataset.len(), batch_size, shuffle, rng)?
        .iter()
        .map(|idx| dataset.batch(idx))
        .collect())
}
