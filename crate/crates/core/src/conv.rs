//! Small convolutional backbone for 32x32 grayscale inputs.
//!
//! Three blocks of 3x3 same-padding convolution, leaky rectifier and 2x2
//! average pooling (32 -> 16 -> 8 -> 4), followed by a dense projection to
//! the feature dimension. Feature maps are stored as `(N*H*W, channels)`
//! with rows ordered by sample, then row, then column.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::data::IMAGE_SIDE;
use crate::nn::{affine, affine_backward, leaky_relu, leaky_relu_backward, Param};

pub const CONV_CHANNELS: [usize; 3] = [8, 16, 16];

fn im2col(maps: ArrayView2<f64>, n: usize, side: usize) -> Array2<f64> {
    let ch = maps.ncols();
    let mut cols = Array2::zeros((n * side * side, 9 * ch));
    for i in 0..n {
        for y in 0..side {
            for x in 0..side {
                let row = (i * side + y) * side + x;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= side as isize {
                            continue;
                        }
                        let src = (i * side + sy as usize) * side + sx as usize;
                        let off = (ky * 3 + kx) * ch;
                        cols.slice_mut(s![row, off..off + ch]).assign(&maps.row(src));
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, n: usize, side: usize, ch: usize) -> Array2<f64> {
    let mut maps = Array2::zeros((n * side * side, ch));
    for i in 0..n {
        for y in 0..side {
            for x in 0..side {
                let row = (i * side + y) * side + x;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= side as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= side as isize {
                            continue;
                        }
                        let dst = (i * side + sy as usize) * side + sx as usize;
                        let off = (ky * 3 + kx) * ch;
                        let mut target = maps.row_mut(dst);
                        target += &cols.slice(s![row, off..off + ch]);
                    }
                }
            }
        }
    }
    maps
}

fn avg_pool(maps: &Array2<f64>, n: usize, side: usize) -> Array2<f64> {
    let half = side / 2;
    let mut out = Array2::zeros((n * half * half, maps.ncols()));
    for i in 0..n {
        for y in 0..half {
            for x in 0..half {
                let mut dst = out.row_mut((i * half + y) * half + x);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = (i * side + 2 * y + dy) * side + 2 * x + dx;
                    dst.scaled_add(0.25, &maps.row(src));
                }
            }
        }
    }
    out
}

fn avg_pool_backward(d_out: &Array2<f64>, n: usize, side: usize) -> Array2<f64> {
    let half = side / 2;
    let mut d_in = Array2::zeros((n * side * side, d_out.ncols()));
    for i in 0..n {
        for y in 0..half {
            for x in 0..half {
                let g = d_out.row((i * half + y) * half + x);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let dst = (i * side + 2 * y + dy) * side + 2 * x + dx;
                    d_in.row_mut(dst).scaled_add(0.25, &g);
                }
            }
        }
    }
    d_in
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBackbone {
    pub kernels: Vec<Param>,
    pub biases: Vec<Param>,
    pub dense_w: Param,
    pub dense_b: Param,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    n: usize,
    cols: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    flat: Array2<f64>,
    dense_pre: Array2<f64>,
}

impl ConvBackbone {
    pub fn new<R: Rng>(out_dim: usize, rng: &mut R) -> Self {
        let mut kernels = Vec::new();
        let mut biases = Vec::new();
        let mut in_ch = 1;
        for (k, &out_ch) in CONV_CHANNELS.iter().enumerate() {
            kernels.push(Param::glorot(format!("backbone.conv{k}.w"), 9 * in_ch, out_ch, rng));
            biases.push(Param::zeros(format!("backbone.conv{k}.b"), 1, out_ch));
            in_ch = out_ch;
        }
        let flat = Self::flat_dim();
        Self {
            kernels,
            biases,
            dense_w: Param::glorot("backbone.dense.w", flat, out_dim, rng),
            dense_b: Param::zeros("backbone.dense.b", 1, out_dim),
        }
    }

    pub fn flat_dim() -> usize {
        let side = IMAGE_SIDE >> CONV_CHANNELS.len();
        side * side * CONV_CHANNELS[CONV_CHANNELS.len() - 1]
    }

    pub fn output_dim(&self) -> usize {
        self.dense_w.value.ncols()
    }

    /// `x` holds one flattened 32x32 image per row.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, ConvCache) {
        let n = x.nrows();
        let mut maps = x
            .to_owned()
            .into_shape_with_order((n * IMAGE_SIDE * IMAGE_SIDE, 1))
            .expect("contiguous image rows");
        let mut side = IMAGE_SIDE;
        let mut cols_cache = Vec::new();
        let mut pre_cache = Vec::new();
        for (w, b) in self.kernels.iter().zip(&self.biases) {
            let cols = im2col(maps.view(), n, side);
            let pre = affine(cols.view(), w, b);
            maps = avg_pool(&leaky_relu(&pre), n, side);
            side /= 2;
            cols_cache.push(cols);
            pre_cache.push(pre);
        }
        let ch = maps.ncols();
        let flat = maps
            .into_shape_with_order((n, side * side * ch))
            .expect("contiguous pooled maps");
        let dense_pre = affine(flat.view(), &self.dense_w, &self.dense_b);
        let out = leaky_relu(&dense_pre);
        (
            out,
            ConvCache {
                n,
                cols: cols_cache,
                pre: pre_cache,
                flat,
                dense_pre,
            },
        )
    }

    pub fn backward(&mut self, cache: &ConvCache, d_out: &Array2<f64>) {
        let n = cache.n;
        let mut d = d_out.clone();
        leaky_relu_backward(&mut d, &cache.dense_pre);
        let d_flat = affine_backward(cache.flat.view(), &d, &mut self.dense_w, &mut self.dense_b);
        let layers = self.kernels.len();
        let mut side = IMAGE_SIDE >> layers;
        let last_ch = CONV_CHANNELS[layers - 1];
        let mut d_maps = d_flat
            .into_shape_with_order((n * side * side, last_ch))
            .expect("contiguous gradient");
        for k in (0..layers).rev() {
            side *= 2;
            let mut d_pre = avg_pool_backward(&d_maps, n, side);
            leaky_relu_backward(&mut d_pre, &cache.pre[k]);
            let d_cols = affine_backward(cache.cols[k].view(), &d_pre, &mut self.kernels[k], &mut self.biases[k]);
            if k > 0 {
                d_maps = col2im(&d_cols, n, side, CONV_CHANNELS[k - 1]);
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::new();
        for (w, b) in self.kernels.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        out.push(&self.dense_w);
        out.push(&self.dense_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for (w, b) in self.kernels.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.push(&mut self.dense_w);
        out.push(&mut self.dense_b);
        out
    }
}
