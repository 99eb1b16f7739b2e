use crate::linalg::{matmul, Trans};
use crate::nn::param::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Affine map `y = x W + b` applied row-wise; `W` is stored `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        bias: bool,
        seed: u64,
    ) -> Self {
        let weight = store.register(&format!("{name}.weight"), &[in_dim, out_dim], init, true, seed);
        let bias = bias.then(|| {
            store.register(&format!("{name}.bias"), &[out_dim], Init::Zeros, false, seed)
        });
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], rows: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = match self.bias {
            Some(b) => {
                let b = store.value(b);
                let mut y = Vec::with_capacity(rows * self.out_dim);
                for _ in 0..rows {
                    y.extend_from_slice(b);
                }
                y
            }
            None => vec![T::zero(); rows * self.out_dim],
        };
        matmul(
            rows,
            self.in_dim,
            self.out_dim,
            x,
            Trans::No,
            store.value(self.weight),
            Trans::No,
            T::one(),
            &mut y,
        );
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx` when requested.
    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        x: &[T],
        dy: &[T],
        rows: usize,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        debug_assert_eq!(dy.len(), rows * self.out_dim);
        {
            let w = store.get_mut(self.weight);
            matmul(
                self.in_dim,
                rows,
                self.out_dim,
                x,
                Trans::Yes,
                dy,
                Trans::No,
                T::one(),
                &mut w.grad,
            );
        }
        if let Some(b) = self.bias {
            let g = &mut store.get_mut(b).grad;
            for row in dy.chunks_exact(self.out_dim) {
                for (gi, &d) in g.iter_mut().zip(row) {
                    *gi += d;
                }
            }
        }
        need_dx.then(|| {
            let mut dx = vec![T::zero(); rows * self.in_dim];
            matmul(
                rows,
                self.out_dim,
                self.in_dim,
                dy,
                Trans::No,
                store.value(self.weight),
                Trans::Yes,
                T::zero(),
                &mut dx,
            );
            dx
        })
    }
}
