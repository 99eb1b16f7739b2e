//! 2D convolutions on channels-last feature maps (`batch x height x width x channels`).

use crate::linalg::{matmul, Trans};
use crate::nn::param::{Init, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Spatial extent of a batched channels-last feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MapShape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl MapShape {
    pub fn new(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        MapShape {
            batch,
            height,
            width,
            channels,
        }
    }

    pub fn pixels(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn numel(&self) -> usize {
        self.pixels() * self.channels
    }
}

/// Square-kernel convolution, stride 1, zero "same" padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        seed: u64,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernel required for same padding");
        let fan_in = kernel * kernel * in_ch;
        Conv2d {
            weight: store.register(
                &format!("{name}.weight"),
                &[fan_in, out_ch],
                Init::HeNormal { fan_in },
                true,
                seed,
            ),
            bias: store.register(&format!("{name}.bias"), &[out_ch], Init::Zeros, false, seed),
            in_ch,
            out_ch,
            kernel,
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], s: MapShape) -> Vec<T> {
        let k = self.kernel;
        let pad = k / 2;
        let cols = k * k * s.channels;
        let mut col = vec![T::zero(); s.pixels() * cols];
        for n in 0..s.batch {
            for i in 0..s.height {
                for j in 0..s.width {
                    let row = ((n * s.height + i) * s.width + j) * cols;
                    for ky in 0..k {
                        let yi = i as isize + ky as isize - pad as isize;
                        if yi < 0 || yi >= s.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let xj = j as isize + kx as isize - pad as isize;
                            if xj < 0 || xj >= s.width as isize {
                                continue;
                            }
                            let src = ((n * s.height + yi as usize) * s.width + xj as usize) * s.channels;
                            let dst = row + (ky * k + kx) * s.channels;
                            col[dst..dst + s.channels].copy_from_slice(&x[src..src + s.channels]);
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<T: Scalar>(&self, dcol: &[T], s: MapShape) -> Vec<T> {
        let k = self.kernel;
        let pad = k / 2;
        let cols = k * k * s.channels;
        let mut dx = vec![T::zero(); s.numel()];
        for n in 0..s.batch {
            for i in 0..s.height {
                for j in 0..s.width {
                    let row = ((n * s.height + i) * s.width + j) * cols;
                    for ky in 0..k {
                        let yi = i as isize + ky as isize - pad as isize;
                        if yi < 0 || yi >= s.height as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let xj = j as isize + kx as isize - pad as isize;
                            if xj < 0 || xj >= s.width as isize {
                                continue;
                            }
                            let dst = ((n * s.height + yi as usize) * s.width + xj as usize) * s.channels;
                            let src = row + (ky * k + kx) * s.channels;
                            for c in 0..s.channels {
                                dx[dst + c] += dcol[src + c];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    /// Returns the output map and the im2col buffer for the backward pass.
    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], s: MapShape) -> (Vec<T>, Vec<T>) {
        assert_eq!(s.channels, self.in_ch);
        assert_eq!(x.len(), s.numel());
        let col = self.im2col(x, s);
        let rows = s.pixels();
        let fan_in = self.kernel * self.kernel * self.in_ch;
        let bias = store.value(self.bias);
        let mut y = Vec::with_capacity(rows * self.out_ch);
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        matmul(rows, fan_in, self.out_ch, &col, Trans::No, store.value(self.weight), Trans::No, T::one(), &mut y);
        (y, col)
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        col: &[T],
        dy: &[T],
        s: MapShape,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let rows = s.pixels();
        let fan_in = self.kernel * self.kernel * self.in_ch;
        matmul(fan_in, rows, self.out_ch, col, Trans::Yes, dy, Trans::No, T::one(), &mut store.get_mut(self.weight).grad);
        let gb = &mut store.get_mut(self.bias).grad;
        for row in dy.chunks_exact(self.out_ch) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
        need_dx.then(|| {
            let mut dcol = vec![T::zero(); rows * fan_in];
            matmul(rows, self.out_ch, fan_in, dy, Trans::No, store.value(self.weight), Trans::Yes, T::zero(), &mut dcol);
            self.col2im(&dcol, s)
        })
    }
}

/// Transposed convolution with kernel 2 and stride 2: doubles height and width.
#[derive(Debug, Clone)]
pub struct ConvTranspose2x2 {
    /// Stored `in_ch x (2 * 2 * out_ch)`, columns ordered `(dy, dx, out_ch)`.
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl ConvTranspose2x2 {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, in_ch: usize, out_ch: usize, seed: u64) -> Self {
        ConvTranspose2x2 {
            weight: store.register(
                &format!("{name}.weight"),
                &[in_ch, 4 * out_ch],
                Init::HeNormal { fan_in: in_ch },
                true,
                seed,
            ),
            bias: store.register(&format!("{name}.bias"), &[out_ch], Init::Zeros, false, seed),
            in_ch,
            out_ch,
        }
    }

    pub fn output_shape(&self, s: MapShape) -> MapShape {
        MapShape::new(s.batch, 2 * s.height, 2 * s.width, self.out_ch)
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], s: MapShape) -> Vec<T> {
        assert_eq!(s.channels, self.in_ch);
        let rows = s.pixels();
        let co = self.out_ch;
        let mut blocks = vec![T::zero(); rows * 4 * co];
        matmul(rows, self.in_ch, 4 * co, x, Trans::No, store.value(self.weight), Trans::No, T::zero(), &mut blocks);
        let bias = store.value(self.bias);
        let (oh, ow) = (2 * s.height, 2 * s.width);
        let mut y = vec![T::zero(); s.batch * oh * ow * co];
        for n in 0..s.batch {
            for i in 0..s.height {
                for j in 0..s.width {
                    let src = ((n * s.height + i) * s.width + j) * 4 * co;
                    for a in 0..2 {
                        for b in 0..2 {
                            let dst = ((n * oh + 2 * i + a) * ow + 2 * j + b) * co;
                            let off = src + (a * 2 + b) * co;
                            for c in 0..co {
                                y[dst + c] = blocks[off + c] + bias[c];
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        x: &[T],
        dy: &[T],
        s: MapShape,
        need_dx: bool,
    ) -> Option<Vec<T>> {
        let rows = s.pixels();
        let co = self.out_ch;
        let (oh, ow) = (2 * s.height, 2 * s.width);
        let mut dblocks = vec![T::zero(); rows * 4 * co];
        {
            let gb = &mut store.get_mut(self.bias).grad;
            for n in 0..s.batch {
                for i in 0..s.height {
                    for j in 0..s.width {
                        let dst = ((n * s.height + i) * s.width + j) * 4 * co;
                        for a in 0..2 {
                            for b in 0..2 {
                                let src = ((n * oh + 2 * i + a) * ow + 2 * j + b) * co;
                                let off = dst + (a * 2 + b) * co;
                                for c in 0..co {
                                    dblocks[off + c] = dy[src + c];
                                    gb[c] += dy[src + c];
                                }
                            }
                        }
                    }
                }
            }
        }
        matmul(
            self.in_ch,
            rows,
            4 * co,
            x,
            Trans::Yes,
            &dblocks,
            Trans::No,
            T::one(),
            &mut store.get_mut(self.weight).grad,
        );
        need_dx.then(|| {
            let mut dx = vec![T::zero(); rows * self.in_ch];
            matmul(rows, 4 * co, self.in_ch, &dblocks, Trans::No, store.value(self.weight), Trans::Yes, T::zero(), &mut dx);
            dx
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-summation convolution used as an oracle.
    fn direct_conv(x: &[f64], s: MapShape, w: &[f64], b: &[f64], k: usize, co: usize) -> Vec<f64> {
        let pad = (k / 2) as isize;
        let mut y = vec![0.0; s.pixels() * co];
        for n in 0..s.batch {
            for i in 0..s.height as isize {
                for j in 0..s.width as isize {
                    for o in 0..co {
                        let mut acc = b[o];
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let (yi, xj) = (i + ky - pad, j + kx - pad);
                                if yi < 0 || xj < 0 || yi >= s.height as isize || xj >= s.width as isize {
                                    continue;
                                }
                                for c in 0..s.channels {
                                    let xv = x[((n * s.height + yi as usize) * s.width + xj as usize) * s.channels + c];
                                    let wr = ((ky as usize) * k + kx as usize) * s.channels + c;
                                    acc += xv * w[wr * co + o];
                                }
                            }
                        }
                        y[((n * s.height + i as usize) * s.width + j as usize) * co + o] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::new(&mut store, "c", 2, 3, 3, 5);
        let s = MapShape::new(2, 4, 5, 2);
        let x: Vec<f64> = (0..s.numel()).map(|i| (i as f64 * 0.3).sin()).collect();
        store.get_mut(conv.bias).value = vec![0.1, -0.2, 0.3];
        let (y, _) = conv.forward(&store, &x, s);
        let expect = direct_conv(&x, s, store.value(conv.weight), store.value(conv.bias), 3, 3);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_conv_places_each_pixel_in_its_block() {
        let mut store = ParamStore::<f64>::new();
        let up = ConvTranspose2x2::new(&mut store, "u", 1, 1, 0);
        store.get_mut(up.weight).value = vec![1.0, 2.0, 3.0, 4.0];
        let s = MapShape::new(1, 1, 2, 1);
        let y = up.forward(&store, &[1.0, 10.0], s);
        // output 2x4: [[1,2,10,20],[3,4,30,40]]
        assert_eq!(y, vec![1.0, 2.0, 10.0, 20.0, 3.0, 4.0, 30.0, 40.0]);
    }

    fn loss_grad_check<F>(mut f: F, x: &[f64]) -> (Vec<f64>, Vec<f64>)
    where
        F: FnMut(&[f64]) -> f64,
    {
        let h = 1e-6;
        let mut fd = Vec::new();
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let dn = f(&xp);
            xp[i] = x[i];
            fd.push((up - dn) / (2.0 * h));
        }
        (fd, x.to_vec())
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let conv = Conv2d::new(&mut store, "c", 2, 2, 3, 9);
        let s = MapShape::new(1, 3, 3, 2);
        let x: Vec<f64> = (0..s.numel()).map(|i| (i as f64 * 0.7).cos()).collect();
        let r: Vec<f64> = (0..s.pixels() * 2).map(|i| (i as f64 * 1.3).sin()).collect();
        let (_, col) = conv.forward(&store, &x, s);
        let dx = conv.backward(&mut store, &col, &r, s, true).unwrap();
        let st = store.clone();
        let (fd, _) = loss_grad_check(
            |xx| {
                let (y, _) = conv.forward(&st, xx, s);
                y.iter().zip(&r).map(|(a, b)| a * b).sum()
            },
            &x,
        );
        for (a, b) in dx.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn transposed_conv_input_gradient_matches_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let up = ConvTranspose2x2::new(&mut store, "u", 3, 2, 4);
        let s = MapShape::new(2, 2, 1, 3);
        let x: Vec<f64> = (0..s.numel()).map(|i| (i as f64 * 0.9).sin()).collect();
        let r: Vec<f64> = (0..up.output_shape(s).numel()).map(|i| (i as f64 * 0.4).cos()).collect();
        let dx = up.backward(&mut store, &x, &r, s, true).unwrap();
        let st = store.clone();
        let (fd, _) = loss_grad_check(
            |xx| up.forward(&st, xx, s).iter().zip(&r).map(|(a, b)| a * b).sum(),
            &x,
        );
        for (a, b) in dx.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
