//! Light reconstruction decoder: per-token MLP followed by a kernel=stride=p
//! transposed convolution back to pixel space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::{gelu, gelu_backward};
use crate::nn::{Init, Linear, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::vit::{unpatchify, patchify_batch, EncoderConfig, TokenSequence};

pub const DECODER_PREFIX: &str = "decoder.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub hidden_dims: (usize, usize),
    pub bottleneck_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden_dims: (2048, 2048),
            bottleneck_dim: 256,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.0 == 0 || self.hidden_dims.1 == 0 || self.bottleneck_dim == 0 {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self, embed_dim: usize, patch_size: usize) -> usize {
        let (h1, h2) = self.hidden_dims;
        let b = self.bottleneck_dim;
        (embed_dim * h1 + h1) + (h1 * h2 + h2) + (h2 * b + b) + b * patch_size * patch_size + 1
    }
}

#[derive(Debug, Clone)]
pub struct ReconDecoder {
    pub config: DecoderConfig,
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
    /// Transposed-convolution kernel, `bottleneck x (p * p)`.
    pub deconv_weight: ParamId,
    /// Single output-channel bias shared by every pixel.
    pub deconv_bias: ParamId,
    patch_size: usize,
    image_size: usize,
}

#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    x: Vec<T>,
    pre1: Vec<T>,
    act1: Vec<T>,
    pre2: Vec<T>,
    act2: Vec<T>,
    z: Vec<T>,
    batch: usize,
    has_class_token: bool,
}

impl ReconDecoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        config: &DecoderConfig,
        encoder: &EncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let p = DECODER_PREFIX;
        let (h1, h2) = config.hidden_dims;
        let b = config.bottleneck_dim;
        let pp = encoder.patch_dim();
        Ok(ReconDecoder {
            config: config.clone(),
            fc1: Linear::new(store, &format!("{p}fc1"), encoder.embed_dim, h1, Init::TruncNormal(0.02), true, seed),
            fc2: Linear::new(store, &format!("{p}fc2"), h1, h2, Init::TruncNormal(0.02), true, seed),
            fc3: Linear::new(store, &format!("{p}fc3"), h2, b, Init::TruncNormal(0.02), true, seed),
            deconv_weight: store.register(&format!("{p}deconv.weight"), &[b, pp], Init::TruncNormal(0.02), true, seed),
            deconv_bias: store.register(&format!("{p}deconv.bias"), &[1], Init::Zeros, false, seed),
            patch_size: encoder.patch_size,
            image_size: encoder.image_size,
        })
    }

    /// Reconstructs `batch x H x W` images from encoder tokens; the class
    /// token, when present, is ignored.
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, tokens: &TokenSequence<T>) -> Result<(Vec<T>, DecoderCache<T>)> {
        let n = tokens.num_patch_tokens();
        let g = self.image_size / self.patch_size;
        if n != g * g || tokens.dim != self.fc1.in_dim {
            return Err(Error::Shape(format!(
                "decoder expects {} tokens of width {}, got {} of width {}",
                g * g,
                self.fc1.in_dim,
                n,
                tokens.dim
            )));
        }
        let rows = tokens.batch * n;
        let x = tokens.patch_tokens();
        let pre1 = self.fc1.forward(store, &x, rows);
        let act1 = gelu(&pre1);
        let pre2 = self.fc2.forward(store, &act1, rows);
        let act2 = gelu(&pre2);
        let z = self.fc3.forward(store, &act2, rows);
        let image = self.project(store, &z, tokens.batch)?;
        Ok((
            image,
            DecoderCache {
                x,
                pre1,
                act1,
                pre2,
                act2,
                z,
                batch: tokens.batch,
                has_class_token: tokens.has_class_token,
            },
        ))
    }

    /// The transposed convolution alone: bottleneck features (`batch * n x b`)
    /// to images.
    pub fn project<T: Scalar>(&self, store: &ParamStore<T>, z: &[T], batch: usize) -> Result<Vec<T>> {
        let pp = self.patch_size * self.patch_size;
        let b = self.config.bottleneck_dim;
        let rows = z.len() / b;
        let bias = store.value(self.deconv_bias)[0];
        let mut patches = vec![bias; rows * pp];
        crate::linalg::matmul(
            rows,
            b,
            pp,
            z,
            crate::linalg::Trans::No,
            store.value(self.deconv_weight),
            crate::linalg::Trans::No,
            T::one(),
            &mut patches,
        );
        let s = self.image_size;
        let per = (s / self.patch_size).pow(2) * pp;
        let mut out = Vec::with_capacity(batch * s * s);
        for chunk in patches.chunks_exact(per) {
            out.extend(unpatchify(chunk, s, s, self.patch_size)?);
        }
        Ok(out)
    }

    /// Returns gradients w.r.t. the full token sequence (zero on the class
    /// token row).
    pub fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, cache: &DecoderCache<T>, d_image: &[T]) -> Result<Vec<T>> {
        let s = self.image_size;
        let p = self.patch_size;
        let pp = p * p;
        let dpatches = patchify_batch(d_image, cache.batch, s, s, p)?;
        let rows = dpatches.len() / pp;
        let b = self.config.bottleneck_dim;
        store.get_mut(self.deconv_bias).grad[0] += dpatches.iter().fold(T::zero(), |a, &v| a + v);
        crate::linalg::matmul(
            b,
            rows,
            pp,
            &cache.z,
            crate::linalg::Trans::Yes,
            &dpatches,
            crate::linalg::Trans::No,
            T::one(),
            &mut store.get_mut(self.deconv_weight).grad,
        );
        let mut dz = vec![T::zero(); rows * b];
        crate::linalg::matmul(
            rows,
            pp,
            b,
            &dpatches,
            crate::linalg::Trans::No,
            store.value(self.deconv_weight),
            crate::linalg::Trans::Yes,
            T::zero(),
            &mut dz,
        );
        let dact2 = self.fc3.backward(store, &cache.act2, &dz, rows, true).expect("dx");
        let dpre2 = gelu_backward(&cache.pre2, &dact2);
        let dact1 = self.fc2.backward(store, &cache.act1, &dpre2, rows, true).expect("dx");
        let dpre1 = gelu_backward(&cache.pre1, &dact1);
        let dx = self.fc1.backward(store, &cache.x, &dpre1, rows, true).expect("dx");
        if !cache.has_class_token {
            return Ok(dx);
        }
        let d = self.fc1.in_dim;
        let n = rows / cache.batch;
        let mut full = Vec::with_capacity(cache.batch * (n + 1) * d);
        for bi in 0..cache.batch {
            full.extend(std::iter::repeat(T::zero()).take(d));
            full.extend_from_slice(&dx[bi * n * d..(bi + 1) * n * d]);
        }
        Ok(full)
    }
}
