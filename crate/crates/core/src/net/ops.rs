//! Batched NCHW kernels with hand-written backward passes. Convolutions go
//! through im2col and one GEMM per call; every reduction runs in a fixed
//! order so results are bit-reproducible.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

pub(crate) const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    alpha: f64,
    a: &[f64],
    a_dim: (usize, usize),
    a_t: bool,
    b: &[f64],
    b_dim: (usize, usize),
    b_t: bool,
    beta: f64,
    c: &mut [f64],
    c_dim: (usize, usize),
) {
    let a = ArrayView2::from_shape(a_dim, a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape(b_dim, b).expect("gemm rhs shape");
    let mut c = ArrayViewMut2::from_shape(c_dim, c).expect("gemm out shape");
    match (a_t, b_t) {
        (false, false) => general_mat_mul(alpha, &a, &b, beta, &mut c),
        (true, false) => general_mat_mul(alpha, &a.t(), &b, beta, &mut c),
        (false, true) => general_mat_mul(alpha, &a, &b.t(), beta, &mut c),
        (true, true) => general_mat_mul(alpha, &a.t(), &b.t(), beta, &mut c),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_side(&self, side: usize) -> usize {
        (side + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

#[derive(Debug)]
pub struct ConvCache {
    cols: Vec<f64>,
    in_shape: [usize; 4],
}

fn im2col(x: &Tensor, g: &ConvGeom, ho: usize, wo: usize) -> Vec<f64> {
    let [n, cin, h, w] = x.shape;
    let p = ho * wo;
    let np = n * p;
    let mut cols = vec![0.0; cin * g.k * g.k * np];
    for ci in 0..cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * np..(row + 1) * np];
                for b in 0..n {
                    let src = &x.data[(b * cin + ci) * h * w..(b * cin + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src_row = &src[ih as usize * w..(ih as usize + 1) * w];
                        let d = &mut dst[b * p + oh * wo..b * p + (oh + 1) * wo];
                        for (ow, slot) in d.iter_mut().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < w as isize {
                                *slot = src_row[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &[f64], g: &ConvGeom, in_shape: [usize; 4], ho: usize, wo: usize) -> Tensor {
    let [n, cin, h, w] = in_shape;
    let p = ho * wo;
    let np = n * p;
    let mut dx = Tensor::zeros(in_shape);
    for ci in 0..cin {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &dcols[row * np..(row + 1) * np];
                for b in 0..n {
                    let dst = &mut dx.data[(b * cin + ci) * h * w..(b * cin + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[ih as usize * w..(ih as usize + 1) * w];
                        let s = &src[b * p + oh * wo..b * p + (oh + 1) * wo];
                        for (ow, &v) in s.iter().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                            if iw >= 0 && iw < w as isize {
                                dst_row[iw as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn conv_forward(g: &ConvGeom, weight: &[f64], x: &Tensor, keep: bool) -> (Tensor, Option<ConvCache>) {
    let [n, cin, h, w] = x.shape;
    debug_assert_eq!(cin, g.cin);
    let (ho, wo) = (g.out_side(h), g.out_side(w));
    let p = ho * wo;
    let kdim = g.cin * g.k * g.k;
    let cols = im2col(x, g, ho, wo);
    let mut out_mat = vec![0.0; g.cout * n * p];
    gemm(1.0, weight, (g.cout, kdim), false, &cols, (kdim, n * p), false, 0.0, &mut out_mat, (g.cout, n * p));
    let mut y = Tensor::zeros([n, g.cout, ho, wo]);
    for co in 0..g.cout {
        for b in 0..n {
            y.data[(b * g.cout + co) * p..(b * g.cout + co + 1) * p]
                .copy_from_slice(&out_mat[co * n * p + b * p..co * n * p + (b + 1) * p]);
        }
    }
    let cache = keep.then_some(ConvCache { cols, in_shape: x.shape });
    (y, cache)
}

/// Returns `(dW, dX)`; `dX` is skipped when the input needs no gradient.
pub fn conv_backward(
    g: &ConvGeom,
    weight: &[f64],
    cache: &ConvCache,
    dy: &Tensor,
    need_dx: bool,
) -> (Vec<f64>, Option<Tensor>) {
    let [n, _, ho, wo] = dy.shape;
    let p = ho * wo;
    let kdim = g.cin * g.k * g.k;
    let mut dy_mat = vec![0.0; g.cout * n * p];
    for co in 0..g.cout {
        for b in 0..n {
            dy_mat[co * n * p + b * p..co * n * p + (b + 1) * p]
                .copy_from_slice(&dy.data[(b * g.cout + co) * p..(b * g.cout + co + 1) * p]);
        }
    }
    let mut dw = vec![0.0; g.weight_len()];
    gemm(1.0, &dy_mat, (g.cout, n * p), false, &cache.cols, (kdim, n * p), true, 0.0, &mut dw, (g.cout, kdim));
    let dx = need_dx.then(|| {
        let mut dcols = vec![0.0; kdim * n * p];
        gemm(1.0, weight, (g.cout, kdim), true, &dy_mat, (g.cout, n * p), false, 0.0, &mut dcols, (kdim, n * p));
        col2im(&dcols, g, cache.in_shape, ho, wo)
    });
    (dw, dx)
}

#[derive(Debug)]
pub struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    count: usize,
}

/// Training-mode batch norm using batch statistics.
pub fn bn_forward_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, BnCache) {
    let [n, c, _, _] = x.shape;
    let p = x.plane();
    let m = (n * p) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x.data[(b * c + ch) * p..(b * c + ch + 1) * p].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for b in 0..n {
            v += x.data[(b * c + ch) * p..(b * c + ch + 1) * p].iter().map(|t| (t - mu) * (t - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; x.data.len()];
    let mut y = Tensor::zeros(x.shape);
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * p..(b * c + ch + 1) * p;
            for i in r {
                let h = (x.data[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y.data[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (y, BnCache { xhat, inv_std, batch_mean: mean, batch_var: var, count: n * p })
}

pub fn bn_forward_eval(x: &Tensor, gamma: &[f64], beta: &[f64], running_mean: &[f64], running_var: &[f64]) -> Tensor {
    let [n, c, _, _] = x.shape;
    let p = x.plane();
    let mut y = Tensor::zeros(x.shape);
    for ch in 0..c {
        let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
        let shift = beta[ch] - running_mean[ch] * scale;
        for b in 0..n {
            let r = (b * c + ch) * p..(b * c + ch + 1) * p;
            for i in r {
                y.data[i] = x.data[i] * scale + shift;
            }
        }
    }
    y
}

/// Returns `(dgamma, dbeta, dx)`.
pub fn bn_backward(cache: &BnCache, gamma: &[f64], dy: &Tensor) -> (Vec<f64>, Vec<f64>, Tensor) {
    let [n, c, _, _] = dy.shape;
    let p = dy.plane();
    let m = cache.count as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * p..(b * c + ch + 1) * p;
            for i in r {
                dgamma[ch] += dy.data[i] * cache.xhat[i];
                dbeta[ch] += dy.data[i];
            }
        }
    }
    let mut dx = Tensor::zeros(dy.shape);
    for b in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / m;
            let r = (b * c + ch) * p..(b * c + ch + 1) * p;
            for i in r {
                dx.data[i] = k * (m * dy.data[i] - dbeta[ch] - cache.xhat[i] * dgamma[ch]);
            }
        }
    }
    (dgamma, dbeta, dx)
}

pub fn relu_inplace(x: &mut Tensor) -> Vec<bool> {
    x.data
        .iter_mut()
        .map(|v| {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect()
}

pub fn relu_backward(mask: &[bool], dy: &mut Tensor) {
    for (d, &on) in dy.data.iter_mut().zip(mask) {
        if !on {
            *d = 0.0;
        }
    }
}

#[derive(Debug)]
pub struct PoolCache {
    argmax: Vec<u32>,
    in_shape: [usize; 4],
}

impl PoolCache {
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }
}

/// 3×3 max pool, stride 2, padding 1.
pub fn maxpool_forward(x: &Tensor) -> (Tensor, PoolCache) {
    let [n, c, h, w] = x.shape;
    let ho = (h + 2 - 3) / 2 + 1;
    let wo = (w + 2 - 3) / 2 + 1;
    let mut y = Tensor::zeros([n, c, ho, wo]);
    let mut argmax = vec![0u32; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x.data[plane * h * w..(plane + 1) * h * w];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0usize;
                for di in 0..3 {
                    let ih = (oh * 2 + di) as isize - 1;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for dj in 0..3 {
                        let iw = (ow * 2 + dj) as isize - 1;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        let idx = ih as usize * w + iw as usize;
                        if src[idx] > best {
                            best = src[idx];
                            at = idx;
                        }
                    }
                }
                let o = plane * ho * wo + oh * wo + ow;
                y.data[o] = best;
                argmax[o] = at as u32;
            }
        }
    }
    (y, PoolCache { argmax, in_shape: x.shape })
}

pub fn maxpool_backward(cache: &PoolCache, dy: &Tensor) -> Tensor {
    let [_, _, h, w] = cache.in_shape;
    let po = dy.plane();
    let mut dx = Tensor::zeros(cache.in_shape);
    for (o, &g) in dy.data.iter().enumerate() {
        let plane = o / po;
        dx.data[plane * h * w + cache.argmax[o] as usize] += g;
    }
    dx
}

/// Global average pool to `(n, c)` row-major.
pub fn gap_forward(x: &Tensor) -> Vec<f64> {
    let p = x.plane();
    x.data.chunks(p).map(|plane| plane.iter().sum::<f64>() / p as f64).collect()
}

pub fn gap_backward(in_shape: [usize; 4], dfeat: &[f64]) -> Tensor {
    let p = in_shape[2] * in_shape[3];
    let mut dx = Tensor::zeros(in_shape);
    for (plane, &g) in dx.data.chunks_mut(p).zip(dfeat) {
        plane.fill(g / p as f64);
    }
    dx
}
