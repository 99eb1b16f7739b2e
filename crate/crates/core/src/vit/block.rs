use crate::nn::activation::{gelu, gelu_backward};
use crate::nn::attention::AttentionCache;
use crate::nn::norm::LayerNormCache;
use crate::nn::{Init, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use crate::scalar::Scalar;

/// Pre-norm transformer block: `x + attn(ln(x))`, then `x + mlp(ln(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    ln1: LayerNormCache<T>,
    h1: Vec<T>,
    pub(crate) attn: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    h2: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
    rows: usize,
}

impl Block {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        Block {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, seed),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, seed),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, seed),
            fc1: Linear::new(store, &format!("{name}.mlp.fc1"), dim, hidden, Init::TruncNormal(0.02), true, seed),
            fc2: Linear::new(store, &format!("{name}.mlp.fc2"), hidden, dim, Init::TruncNormal(0.02), true, seed),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &[T],
        batch: usize,
        len: usize,
    ) -> (Vec<T>, BlockCache<T>) {
        let rows = batch * len;
        let (h1, ln1) = self.norm1.forward(store, x);
        let (a, attn) = self.attn.forward(store, &h1, batch, len);
        let x1: Vec<T> = x.iter().zip(&a).map(|(&u, &v)| u + v).collect();
        let (h2, ln2) = self.norm2.forward(store, &x1);
        let pre_act = self.fc1.forward(store, &h2, rows);
        let act = gelu(&pre_act);
        let m = self.fc2.forward(store, &act, rows);
        let y = x1.iter().zip(&m).map(|(&u, &v)| u + v).collect();
        (
            y,
            BlockCache {
                ln1,
                h1,
                attn,
                ln2,
                h2,
                pre_act,
                act,
                rows,
            },
        )
    }

    pub fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, cache: &BlockCache<T>, dy: &[T]) -> Vec<T> {
        let rows = cache.rows;
        let dact = self.fc2.backward(store, &cache.act, dy, rows, true).expect("dx");
        let dpre = gelu_backward(&cache.pre_act, &dact);
        let dh2 = self.fc1.backward(store, &cache.h2, &dpre, rows, true).expect("dx");
        let dln2 = self.norm2.backward(store, &cache.ln2, &dh2);
        let dx1: Vec<T> = dy.iter().zip(&dln2).map(|(&a, &b)| a + b).collect();
        let dh1 = self.attn.backward(store, &cache.h1, &cache.attn, &dx1);
        let dln1 = self.norm1.backward(store, &cache.ln1, &dh1);
        dx1.iter().zip(&dln1).map(|(&a, &b)| a + b).collect()
    }
}
