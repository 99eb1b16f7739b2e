use crate::error::{Error, Result};
use crate::nn::norm::LayerNormCache;
use crate::nn::{Init, LayerNorm, Linear, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::vit::block::{Block, BlockCache};
use crate::vit::config::EncoderConfig;
use crate::vit::patch::patchify_batch;

/// Name prefix of every encoder parameter.
pub const ENCODER_PREFIX: &str = "encoder.";

/// A batch of token sequences, `batch x len x dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<T> {
    pub data: Vec<T>,
    pub batch: usize,
    pub len: usize,
    pub dim: usize,
    pub has_class_token: bool,
}

impl<T: Scalar> TokenSequence<T> {
    /// Tokens of sample `n`, `len x dim`.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.len * self.dim;
        &self.data[n * s..(n + 1) * s]
    }

    /// Row `t` of sample `n`.
    pub fn token(&self, n: usize, t: usize) -> &[T] {
        let off = (n * self.len + t) * self.dim;
        &self.data[off..off + self.dim]
    }

    /// Number of patch tokens per sample.
    pub fn num_patch_tokens(&self) -> usize {
        self.len - usize::from(self.has_class_token)
    }

    /// Patch tokens only (class token dropped), `batch * n x dim`.
    pub fn patch_tokens(&self) -> Vec<T> {
        if !self.has_class_token {
            return self.data.clone();
        }
        let mut out = Vec::with_capacity(self.batch * (self.len - 1) * self.dim);
        for n in 0..self.batch {
            out.extend_from_slice(&self.sample(n)[self.dim..]);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Per-layer attention probabilities, each `batch x heads x len x len`.
#[derive(Debug, Clone)]
pub struct AttentionMaps<T> {
    pub layers: Vec<Vec<T>>,
    pub batch: usize,
    pub heads: usize,
    pub len: usize,
}

impl<T: Scalar> AttentionMaps<T> {
    /// `len x len` map of one layer, sample and head.
    pub fn head(&self, layer: usize, sample: usize, head: usize) -> &[T] {
        let sz = self.len * self.len;
        let off = (sample * self.heads + head) * sz;
        &self.layers[layer][off..off + sz]
    }
}

/// What intermediate state the forward pass should return.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Capture {
    /// 1-based block indices whose outputs are returned.
    pub taps: Vec<usize>,
    pub attention: bool,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput<T> {
    /// Final-layer-normalized tokens.
    pub tokens: TokenSequence<T>,
    /// `(layer, batch * len x dim)` raw block outputs for each requested tap.
    pub taps: Vec<(usize, Vec<T>)>,
    pub attention: Option<AttentionMaps<T>>,
}

/// Saved state needed for [`Encoder::backward`].
#[derive(Debug, Clone)]
pub struct EncoderCache<T> {
    patches: Vec<T>,
    batch: usize,
    blocks: Vec<BlockCache<T>>,
    norm: LayerNormCache<T>,
}

/// Patch embedding followed by a stack of pre-norm transformer blocks.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub patch_embed: Linear,
    pub cls_token: Option<ParamId>,
    pub pos_embed: ParamId,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let p = ENCODER_PREFIX;
        let patch_embed = Linear::new(
            store,
            &format!("{p}patch_embed"),
            config.patch_dim(),
            d,
            Init::TruncNormal(0.02),
            true,
            seed,
        );
        let cls_token = config
            .use_class_token
            .then(|| store.register(&format!("{p}cls_token"), &[d], Init::TruncNormal(0.02), false, seed));
        let pos_embed = store.register(
            &format!("{p}pos_embed"),
            &[config.seq_len(), d],
            Init::TruncNormal(0.02),
            false,
            seed,
        );
        let blocks = (0..config.depth)
            .map(|i| Block::new(store, &format!("{p}blocks.{i}"), d, config.num_heads, config.mlp_hidden(), seed))
            .collect();
        let norm = LayerNorm::new(store, &format!("{p}norm"), d, seed);
        Ok(Encoder {
            config: config.clone(),
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm,
        })
    }

    /// Linear patch projection plus learned positional embeddings, with the
    /// class token prepended when configured.
    pub fn embed_tokens<T: Scalar>(&self, store: &ParamStore<T>, patches: &[T], batch: usize) -> Result<TokenSequence<T>> {
        let c = &self.config;
        let n = c.num_patches();
        if patches.len() != batch * n * c.patch_dim() {
            return Err(Error::Shape(format!(
                "expected {batch}x{n} patches of {} values, got {} values",
                c.patch_dim(),
                patches.len()
            )));
        }
        let d = c.embed_dim;
        let proj = self.patch_embed.forward(store, patches, batch * n);
        let pos = store.value(self.pos_embed);
        let len = c.seq_len();
        let off = usize::from(c.use_class_token);
        let mut data = Vec::with_capacity(batch * len * d);
        for b in 0..batch {
            if let Some(cls) = self.cls_token {
                let cls = store.value(cls);
                data.extend(cls.iter().zip(&pos[..d]).map(|(&a, &p)| a + p));
            }
            for t in 0..n {
                let row = &proj[(b * n + t) * d..(b * n + t + 1) * d];
                let prow = &pos[(t + off) * d..(t + off + 1) * d];
                data.extend(row.iter().zip(prow).map(|(&a, &p)| a + p));
            }
        }
        Ok(TokenSequence {
            data,
            batch,
            len,
            dim: d,
            has_class_token: c.use_class_token,
        })
    }

    /// Runs the transformer blocks and final norm over an embedded sequence.
    pub fn encoder_forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        seq: &TokenSequence<T>,
        capture: &Capture,
    ) -> Result<EncoderOutput<T>> {
        self.run_blocks(store, seq, capture, false).map(|(out, _, _)| out)
    }

    #[allow(clippy::type_complexity)]
    fn run_blocks<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        seq: &TokenSequence<T>,
        capture: &Capture,
        keep: bool,
    ) -> Result<(EncoderOutput<T>, Vec<BlockCache<T>>, Option<LayerNormCache<T>>)> {
        let c = &self.config;
        if seq.dim != c.embed_dim || seq.len != c.seq_len() || seq.has_class_token != c.use_class_token {
            return Err(Error::Shape(format!(
                "token sequence {}x{} (class token: {}) does not match encoder {}x{} (class token: {})",
                seq.len,
                seq.dim,
                seq.has_class_token,
                c.seq_len(),
                c.embed_dim,
                c.use_class_token
            )));
        }
        if let Some(&bad) = capture.taps.iter().find(|&&t| t == 0 || t > c.depth) {
            return Err(Error::Config(format!("tap layer {bad} outside 1..={}", c.depth)));
        }
        let mut x = seq.data.clone();
        let mut caches = Vec::with_capacity(if keep { self.blocks.len() } else { 0 });
        let mut taps = Vec::new();
        let mut attn_layers = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let (y, cache) = block.forward(store, &x, seq.batch, seq.len);
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "encoder layer",
                    index: i + 1,
                });
            }
            if capture.taps.contains(&(i + 1)) {
                taps.push((i + 1, y.clone()));
            }
            if capture.attention {
                attn_layers.push(cache.attn.probs.clone());
            }
            if keep {
                caches.push(cache);
            }
            x = y;
        }
        let (normed, norm_cache) = self.norm.forward(store, &x);
        let attention = capture.attention.then(|| AttentionMaps {
            layers: attn_layers,
            batch: seq.batch,
            heads: c.num_heads,
            len: seq.len,
        });
        Ok((
            EncoderOutput {
                tokens: TokenSequence {
                    data: normed,
                    ..seq.clone_shape()
                },
                taps,
                attention,
            },
            caches,
            keep.then_some(norm_cache),
        ))
    }

    /// Full forward from images (`batch x H x W`) without keeping caches.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        images: &[T],
        batch: usize,
        capture: &Capture,
    ) -> Result<EncoderOutput<T>> {
        let s = self.config.image_size;
        let patches = patchify_batch(images, batch, s, s, self.config.patch_size)?;
        let seq = self.embed_tokens(store, &patches, batch)?;
        self.encoder_forward(store, &seq, capture)
    }

    /// Forward pass that also returns what [`Encoder::backward`] needs.
    pub fn forward_train<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        images: &[T],
        batch: usize,
        capture: &Capture,
    ) -> Result<(EncoderOutput<T>, EncoderCache<T>)> {
        let s = self.config.image_size;
        let patches = patchify_batch(images, batch, s, s, self.config.patch_size)?;
        let seq = self.embed_tokens(store, &patches, batch)?;
        let (out, blocks, norm) = self.run_blocks(store, &seq, capture, true)?;
        Ok((
            out,
            EncoderCache {
                patches,
                batch,
                blocks,
                norm: norm.expect("kept"),
            },
        ))
    }

    /// Backpropagates gradients w.r.t. the final tokens and any tapped block
    /// outputs into the encoder parameters.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        cache: &EncoderCache<T>,
        d_tokens: Option<&[T]>,
        d_taps: &[(usize, Vec<T>)],
    ) {
        let c = &self.config;
        let d = c.embed_dim;
        let len = c.seq_len();
        let rows = cache.batch * len;
        let mut dx = match d_tokens {
            Some(g) => self.norm.backward(store, &cache.norm, g),
            None => vec![T::zero(); rows * d],
        };
        for i in (0..self.blocks.len()).rev() {
            for (layer, g) in d_taps.iter().filter(|(l, _)| *l == i + 1) {
                debug_assert_eq!(*layer, i + 1);
                for (a, &b) in dx.iter_mut().zip(g) {
                    *a += b;
                }
            }
            dx = self.blocks[i].backward(store, &cache.blocks[i], &dx);
        }
        {
            let gpos = &mut store.get_mut(self.pos_embed).grad;
            for b in 0..cache.batch {
                for (g, &v) in gpos.iter_mut().zip(&dx[b * len * d..(b + 1) * len * d]) {
                    *g += v;
                }
            }
        }
        let n = c.num_patches();
        let off = usize::from(c.use_class_token);
        if let Some(cls) = self.cls_token {
            let g = &mut store.get_mut(cls).grad;
            for b in 0..cache.batch {
                for (gi, &v) in g.iter_mut().zip(&dx[b * len * d..b * len * d + d]) {
                    *gi += v;
                }
            }
        }
        let mut dproj = Vec::with_capacity(cache.batch * n * d);
        for b in 0..cache.batch {
            dproj.extend_from_slice(&dx[(b * len + off) * d..(b + 1) * len * d]);
        }
        self.patch_embed
            .backward(store, &cache.patches, &dproj, cache.batch * n, false);
    }
}

impl<T: Scalar> TokenSequence<T> {
    fn clone_shape(&self) -> TokenSequence<T> {
        TokenSequence {
            data: Vec::new(),
            batch: self.batch,
            len: self.len,
            dim: self.dim,
            has_class_token: self.has_class_token,
        }
    }
}
