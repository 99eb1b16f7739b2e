use crate::nn::param::{Init, ParamId, ParamStore};
use crate::scalar::{count, lit, Scalar};

const EPS: f64 = 1e-6;

/// Layer normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

/// Saved normalized activations and inverse standard deviations.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, seed: u64) -> Self {
        LayerNorm {
            gamma: store.register(&format!("{name}.weight"), &[dim], Init::Ones, false, seed),
            beta: store.register(&format!("{name}.bias"), &[dim], Init::Zeros, false, seed),
            dim,
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T]) -> (Vec<T>, LayerNormCache<T>) {
        let d = self.dim;
        let rows = x.len() / d;
        let gamma = store.value(self.gamma);
        let beta = store.value(self.beta);
        let n = count::<T>(d);
        let eps = lit::<T>(EPS);
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gamma[j] + beta[j];
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<T: Scalar>(&self, store: &mut ParamStore<T>, cache: &LayerNormCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let rows = dy.len() / d;
        let n = count::<T>(d);
        {
            let g = &mut store.get_mut(self.gamma).grad;
            for r in 0..rows {
                for j in 0..d {
                    g[j] += dy[r * d + j] * cache.xhat[r * d + j];
                }
            }
        }
        {
            let b = &mut store.get_mut(self.beta).grad;
            for r in 0..rows {
                for j in 0..d {
                    b[j] += dy[r * d + j];
                }
            }
        }
        let gamma = store.value(self.gamma);
        let mut dx = vec![T::zero(); dy.len()];
        for r in 0..rows {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let mut mean_dxh = T::zero();
            let mut mean_dxh_xh = T::zero();
            for j in 0..d {
                let dxh = dyr[j] * gamma[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh = mean_dxh / n;
            mean_dxh_xh = mean_dxh_xh / n;
            let rs = cache.rstd[r];
            for j in 0..d {
                let dxh = dyr[j] * gamma[j];
                dx[r * d + j] = rs * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
        dx
    }
}
