//! Multi-head scaled dot-product self-attention.

use crate::linalg::gemm_strided;
use crate::nn::activation::softmax_in_place;
use crate::nn::linear::Linear;
use crate::nn::param::{Init, ParamStore};
use crate::scalar::{count, Scalar};

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub qkv: Linear,
    pub proj: Linear,
    pub dim: usize,
    pub heads: usize,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    qkv: Vec<T>,
    /// `batch x heads x len x len` attention probabilities.
    pub probs: Vec<T>,
    mixed: Vec<T>,
    batch: usize,
    len: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, heads: usize, seed: u64) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim must be divisible by heads");
        MultiHeadAttention {
            qkv: Linear::new(store, &format!("{name}.qkv"), dim, 3 * dim, Init::TruncNormal(0.02), true, seed),
            proj: Linear::new(store, &format!("{name}.proj"), dim, dim, Init::TruncNormal(0.02), true, seed),
            dim,
            heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn scale<T: Scalar>(&self) -> T {
        T::one() / count::<T>(self.head_dim()).sqrt()
    }

    /// `x` holds `batch * len` token rows of width `dim`.
    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        batch: usize,
        len: usize,
    ) -> (Vec<T>, AttentionCache<T>) {
        let d = self.dim;
        let hd = self.head_dim();
        let rows = batch * len;
        let qkv = self.qkv.forward(store, x, rows);
        let scale = self.scale::<T>();
        let mut probs = vec![T::zero(); batch * self.heads * len * len];
        let mut mixed = vec![T::zero(); rows * d];
        for n in 0..batch {
            for h in 0..self.heads {
                let base = n * len * 3 * d + h * hd;
                let q = &qkv[base..];
                let k = &qkv[base + d..];
                let v = &qkv[base + 2 * d..];
                let a_off = (n * self.heads + h) * len * len;
                let a = &mut probs[a_off..a_off + len * len];
                gemm_strided(len, hd, len, scale, q, (3 * d, 1), k, (1, 3 * d), T::zero(), a, (len, 1));
                for row in a.chunks_exact_mut(len) {
                    softmax_in_place(row);
                }
                let out = &mut mixed[n * len * d + h * hd..];
                gemm_strided(len, len, hd, T::one(), a, (len, 1), v, (3 * d, 1), T::zero(), out, (d, 1));
            }
        }
        let y = self.proj.forward(store, &mixed, rows);
        (
            y,
            AttentionCache {
                qkv,
                probs,
                mixed,
                batch,
                len,
            },
        )
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        x: &[T],
        cache: &AttentionCache<T>,
        dy: &[T],
    ) -> Vec<T> {
        let d = self.dim;
        let hd = self.head_dim();
        let (batch, len) = (cache.batch, cache.len);
        let rows = batch * len;
        let scale = self.scale::<T>();
        let dmixed = self
            .proj
            .backward(store, &cache.mixed, dy, rows, true)
            .expect("dx requested");
        let mut dqkv = vec![T::zero(); rows * 3 * d];
        let mut da = vec![T::zero(); len * len];
        for n in 0..batch {
            for h in 0..self.heads {
                let base = n * len * 3 * d + h * hd;
                let a_off = (n * self.heads + h) * len * len;
                let a = &cache.probs[a_off..a_off + len * len];
                let dout = &dmixed[n * len * d + h * hd..];
                let v = &cache.qkv[base + 2 * d..];
                // dA = dO V^T
                gemm_strided(len, hd, len, T::one(), dout, (d, 1), v, (1, 3 * d), T::zero(), &mut da, (len, 1));
                // dV = A^T dO
                gemm_strided(
                    len,
                    len,
                    hd,
                    T::one(),
                    a,
                    (1, len),
                    dout,
                    (d, 1),
                    T::zero(),
                    &mut dqkv[base + 2 * d..],
                    (3 * d, 1),
                );
                // softmax backward, folded with the score scale
                for i in 0..len {
                    let ar = &a[i * len..(i + 1) * len];
                    let dr = &mut da[i * len..(i + 1) * len];
                    let dot = ar.iter().zip(dr.iter()).fold(T::zero(), |s, (&p, &g)| s + p * g);
                    for (g, &p) in dr.iter_mut().zip(ar) {
                        *g = p * (*g - dot) * scale;
                    }
                }
                let q = &cache.qkv[base..];
                let k = &cache.qkv[base + d..];
                // dQ = dS K
                gemm_strided(len, len, hd, T::one(), &da, (len, 1), k, (3 * d, 1), T::zero(), &mut dqkv[base..], (3 * d, 1));
                // dK = dS^T Q
                gemm_strided(
                    len,
                    len,
                    hd,
                    T::one(),
                    &da,
                    (1, len),
                    q,
                    (3 * d, 1),
                    T::zero(),
                    &mut dqkv[base + d..],
                    (3 * d, 1),
                );
            }
        }
        self.qkv
            .backward(store, x, &dqkv, rows, true)
            .expect("dx requested")
    }
}
