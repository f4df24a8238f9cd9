//! Differentiable primitives. Each layer has an immutable inference path and
//! a training path that caches what its backward pass needs.

use std::hash::Hasher;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::tensor::{add_assign, concat_many, split_channels, Param, Tensor};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Forward-pass switches for the training path.
#[derive(Debug, Clone)]
pub struct TrainCtx {
    pub rng: ChaCha8Rng,
    /// Normalize with batch statistics (otherwise running statistics).
    pub batch_stats: bool,
    pub dropout: bool,
    pub update_running: bool,
}

impl TrainCtx {
    pub fn training(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch_stats: true,
            dropout: true,
            update_running: true,
        }
    }

    /// Eval-mode arithmetic on the training path, for gradient checks.
    pub fn frozen() -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            batch_stats: false,
            dropout: false,
            update_running: false,
        }
    }
}

pub trait Layer: Send + Sync {
    fn infer(&self, x: &Tensor) -> Tensor;
    fn forward(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Tensor;
    /// Gradient w.r.t. the input of the last `forward`; parameter gradients accumulate.
    fn backward(&mut self, gy: &Tensor) -> Tensor;
    fn out_channels(&self, in_channels: usize) -> usize;
    fn visit(&mut self, _f: &mut dyn FnMut(&mut Param)) {}
    fn visit_ref(&self, _f: &mut dyn FnMut(&Param)) {}
    /// Feeds the piecewise-linear branch choices of the last `forward`
    /// (ReLU signs, pooling winners) into `h`.
    fn pattern(&self, _h: &mut dyn Hasher) {}
}

// ---------------------------------------------------------------------------
// Convolution, stride 1, zero padding k/2

/// `same` convolution; weights are laid out `[cout][k][k][cin]`.
pub fn conv2d_same(x: &Tensor, weight: &[f64], bias: &[f64], k: usize, cout: usize) -> Tensor {
    let cin = x.c;
    assert_eq!(weight.len(), cout * k * k * cin, "kernel shape");
    assert_eq!(bias.len(), cout, "bias length");
    let pad = (k / 2) as isize;
    let (h, w) = (x.h, x.w);
    let mut out = Tensor::zeros(x.n, h, w, cout);
    out.data
        .par_chunks_mut(w * cout)
        .enumerate()
        .for_each(|(row, out_row)| {
            let b = row / h;
            let oy = row % h;
            for ox in 0..w {
                let o = &mut out_row[ox * cout..(ox + 1) * cout];
                o.copy_from_slice(bias);
                for ky in 0..k {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = ox as isize + kx as isize - pad;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let base = x.idx(b, iy as usize, ix as usize, 0);
                        let px = &x.data[base..base + cin];
                        for (co, acc) in o.iter_mut().enumerate() {
                            let wo = ((co * k + ky) * k + kx) * cin;
                            let wk = &weight[wo..wo + cin];
                            *acc += wk.iter().zip(px).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
        });
    out
}

/// Input gradient of `conv2d_same`.
pub fn conv2d_same_backward_input(gy: &Tensor, weight: &[f64], k: usize, cin: usize) -> Tensor {
    let cout = gy.c;
    let pad = (k / 2) as isize;
    let (h, w) = (gy.h, gy.w);
    let mut gx = Tensor::zeros(gy.n, h, w, cin);
    gx.data.par_chunks_mut(w * cin).enumerate().for_each(|(row, gx_row)| {
        let b = row / h;
        let iy = row % h;
        for ix in 0..w {
            let gp = &mut gx_row[ix * cin..(ix + 1) * cin];
            for ky in 0..k {
                let oy = iy as isize + pad - ky as isize;
                if oy < 0 || oy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ox = ix as isize + pad - kx as isize;
                    if ox < 0 || ox >= w as isize {
                        continue;
                    }
                    let base = gy.idx(b, oy as usize, ox as usize, 0);
                    for co in 0..cout {
                        let g = gy.data[base + co];
                        if g == 0.0 {
                            continue;
                        }
                        let wo = ((co * k + ky) * k + kx) * cin;
                        for (acc, wv) in gp.iter_mut().zip(&weight[wo..wo + cin]) {
                            *acc += g * wv;
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Kernel and bias gradients of `conv2d_same`, accumulated into `gw`, `gb`.
pub fn conv2d_same_backward_params(x: &Tensor, gy: &Tensor, k: usize, gw: &mut [f64], gb: &mut [f64]) {
    let cin = x.c;
    debug_assert_eq!(gw.len(), gy.c * k * k * cin);
    let pad = (k / 2) as isize;
    let (h, w) = (x.h, x.w);
    gw.par_chunks_mut(k * k * cin)
        .zip(gb.par_iter_mut())
        .enumerate()
        .for_each(|(co, (gwc, gbc))| {
            for b in 0..x.n {
                for oy in 0..h {
                    for ox in 0..w {
                        let g = gy.at(b, oy, ox, co);
                        if g == 0.0 {
                            continue;
                        }
                        *gbc += g;
                        for ky in 0..k {
                            let iy = oy as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let base = x.idx(b, iy as usize, ix as usize, 0);
                                let wo = (ky * k + kx) * cin;
                                for (acc, xv) in gwc[wo..wo + cin].iter_mut().zip(&x.data[base..base + cin]) {
                                    *acc += g * xv;
                                }
                            }
                        }
                    }
                }
            }
        });
}

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

pub struct Conv2d {
    pub k: usize,
    pub cin: usize,
    pub cout: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new(name: &str, k: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "odd kernel");
        let w = he_normal(rng, k * k * cin, cout * k * k * cin);
        Self::from_parts(name, k, cin, cout, w, vec![0.0; cout])
    }

    pub fn from_parts(name: &str, k: usize, cin: usize, cout: usize, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        Self {
            k,
            cin,
            cout,
            weight: Param::new(format!("{name}.weight"), vec![cout, k, k, cin], weight, true),
            bias: Param::new(format!("{name}.bias"), vec![cout], bias, true),
            cache: None,
        }
    }
}

impl Layer for Conv2d {
    fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.cin, "conv input channels");
        conv2d_same(x, &self.weight.value, &self.bias.value, self.k, self.cout)
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Tensor {
        let y = self.infer(x);
        self.cache = Some(x.clone());
        y
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.cache.as_ref().expect("forward before backward");
        conv2d_same_backward_params(x, gy, self.k, &mut self.weight.grad, &mut self.bias.grad);
        conv2d_same_backward_input(gy, &self.weight.value, self.k, self.cin)
    }

    fn out_channels(&self, _in_channels: usize) -> usize {
        self.cout
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(format!("{name}.gamma"), vec![channels], vec![1.0; channels], true),
            beta: Param::new(format!("{name}.beta"), vec![channels], vec![0.0; channels], true),
            running_mean: Param::new(
                format!("{name}.running_mean"),
                vec![channels],
                vec![0.0; channels],
                false,
            ),
            running_var: Param::new(
                format!("{name}.running_var"),
                vec![channels],
                vec![1.0; channels],
                false,
            ),
            cache: None,
        }
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], inv_std: &[f64]) -> (Tensor, Tensor) {
        let c = self.channels;
        let mut xhat = x.clone();
        let mut y = x.clone();
        for (px, (hx, yx)) in x
            .data
            .chunks_exact(c)
            .zip(xhat.data.chunks_exact_mut(c).zip(y.data.chunks_exact_mut(c)))
        {
            for ch in 0..c {
                let v = (px[ch] - mean[ch]) * inv_std[ch];
                hx[ch] = v;
                yx[ch] = self.gamma.value[ch] * v + self.beta.value[ch];
            }
        }
        (xhat, y)
    }

    fn batch_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let c = x.c;
        let count = (x.n * x.h * x.w) as f64;
        let mut mean = vec![0.0; c];
        for px in x.data.chunks_exact(c) {
            mean.iter_mut().zip(px).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for px in x.data.chunks_exact(c) {
            for ch in 0..c {
                var[ch] += (px[ch] - mean[ch]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        (mean, var)
    }
}

impl Layer for BatchNorm {
    fn infer(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c, self.channels, "batchnorm channels");
        let inv: Vec<f64> = self
            .running_var
            .value
            .iter()
            .map(|v| 1.0 / (v.max(0.0) + BN_EPS).sqrt())
            .collect();
        self.normalize(x, &self.running_mean.value, &inv).1
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Tensor {
        assert_eq!(x.c, self.channels, "batchnorm channels");
        let (mean, var) = if ctx.batch_stats {
            Self::batch_moments(x)
        } else {
            (self.running_mean.value.clone(), self.running_var.value.clone())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v.max(0.0) + BN_EPS).sqrt()).collect();
        let (xhat, y) = self.normalize(x, &mean, &inv_std);
        if ctx.batch_stats && ctx.update_running {
            for ch in 0..self.channels {
                let rm = &mut self.running_mean.value[ch];
                *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean[ch];
                let rv = &mut self.running_var.value[ch];
                *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * var[ch];
            }
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            batch_stats: ctx.batch_stats,
        });
        y
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let cache = self.cache.as_ref().expect("forward before backward");
        let c = self.channels;
        let count = (gy.n * gy.h * gy.w) as f64;
        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (g, xh) in gy.data.chunks_exact(c).zip(cache.xhat.data.chunks_exact(c)) {
            for ch in 0..c {
                sum_g[ch] += g[ch];
                sum_gx[ch] += g[ch] * xh[ch];
            }
        }
        for ch in 0..c {
            self.gamma.grad[ch] += sum_gx[ch];
            self.beta.grad[ch] += sum_g[ch];
        }
        let mut gx = gy.clone();
        for (gxp, (g, xh)) in gx
            .data
            .chunks_exact_mut(c)
            .zip(gy.data.chunks_exact(c).zip(cache.xhat.data.chunks_exact(c)))
        {
            for ch in 0..c {
                let scale = self.gamma.value[ch] * cache.inv_std[ch];
                gxp[ch] = if cache.batch_stats {
                    scale * (g[ch] - sum_g[ch] / count - xh[ch] * sum_gx[ch] / count)
                } else {
                    scale * g[ch]
                };
            }
        }
        gx
    }

    fn out_channels(&self, in_channels: usize) -> usize {
        in_channels
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }
}

// ---------------------------------------------------------------------------
// Pointwise activations

#[derive(Default)]
pub struct Relu {
    cache: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.max(0.0));
        y
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Tensor {
        self.cache = Some(x.clone());
        self.infer(x)
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.cache.as_ref().expect("forward before backward");
        let mut gx = gy.clone();
        gx.data.iter_mut().zip(&x.data).for_each(|(g, &v)| {
            if v <= 0.0 {
                *g = 0.0
            }
        });
        gx
    }

    fn out_channels(&self, in_channels: usize) -> usize {
        in_channels
    }

    fn pattern(&self, h: &mut dyn Hasher) {
        if let Some(x) = &self.cache {
            x.data.iter().for_each(|&v| h.write_u8((v > 0.0) as u8));
        }
    }
}

#[derive(Default)]
pub struct Sigmoid {
    cache: Option<Tensor>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Layer for Sigmoid {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        y
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Tensor {
        let y = self.infer(x);
        self.cache = Some(y.clone());
        y
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let y = self.cache.as_ref().expect("forward before backward");
        let mut gx = gy.clone();
        gx.data.iter_mut().zip(&y.data).for_each(|(g, &s)| *g *= s * (1.0 - s));
        gx
    }

    fn out_channels(&self, in_channels: usize) -> usize {
        in_channels
    }
}

pub struct Dropout {
    pub p: f64,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability in [0, 1)");
        Self { p, mask: None }
    }
}

impl Layer for Dropout {
    fn infer(&self, x: &Tensor) -> Tensor {
        x.clone()
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Tensor {
        if !ctx.dropout || self.p == 0.0 {
            self.mask = None;
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let scale = 1.0 / keep;
        let mask: Vec<f64> = (0..x.data.len())
            .map(|_| if ctx.rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        let mut y = x.clone();
        y.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let mut gx = gy.clone();
        if let Some(mask) = &self.mask {
            gx.data.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
        }
        gx
    }

    fn out_channels(&self, in_channels: usize) -> usize {
        in_channels
    }
}

// ---------------------------------------------------------------------------
// Pooling and resizing

type Shape4 = (usize, usize, usize, usize);

/// 2x2 stride-2 max pooling with floor semantics (25 -> 12).
#[derive(Default)]
pub struct MaxPool2 {
    /// Winning input index per output, and the input shape.
    argmax: Option<(Vec<usize>, Shape4)>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    fn run(x: &Tensor) -> (Tensor, Vec<usize>) {
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut y = Tensor::zeros(x.n, oh, ow, x.c);
        let mut arg = vec![0; y.data.len()];
        for b in 0..x.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ch in 0..x.c {
                        let mut best = f64::NEG_INFINITY;
                        let mut bi = 0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let i = x.idx(b, 2 * oy + dy, 2 * ox + dx, ch);
                                if x.data[i] > best {
                                    best = x.data[i];
                                    bi = i;
                                }
                            }
                        }
                        let o = y.idx(b, oy, ox, ch);
                        y.data[o] = best;
                        arg[o] = bi;
                    }
                }
            }
        }
        (y, arg)
    }
}

impl Layer for MaxPool2 {
    fn infer(&self, x: &Tensor) -> Tensor {
        Self::run(x).0
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Tensor {
        let (y, arg) = Self::run(x);
        self.argmax = Some((arg, x.shape()));
        y
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let (arg, (n, h, w, c)) = self.argmax.as_ref().expect("forward before backward");
        let mut gx = Tensor::zeros(*n, *h, *w, *c);
        for (g, &i) in gy.data.iter().zip(arg) {
            gx.data[i] += g;
        }
        gx
    }

    fn out_channels(&self, in_channels: usize) -> usize {
        in_channels
    }

    fn pattern(&self, h: &mut dyn Hasher) {
        if let Some((arg, _)) = &self.argmax {
            arg.iter().for_each(|&i| h.write_usize(i));
        }
    }
}

/// 3x3 stride-1 max pooling, same output size (padding never wins).
#[derive(Default)]
pub struct MaxPool3s1 {
    argmax: Option<Vec<usize>>,
}

impl MaxPool3s1 {
    pub fn new() -> Self {
        Self::default()
    }

    fn run(x: &Tensor) -> (Tensor, Vec<usize>) {
        let mut y = Tensor::zeros(x.n, x.h, x.w, x.c);
        let mut arg = vec![0; y.data.len()];
        for b in 0..x.n {
            for oy in 0..x.h {
                for ox in 0..x.w {
                    for ch in 0..x.c {
                        let mut best = f64::NEG_INFINITY;
                        let mut bi = 0;
                        for iy in oy.saturating_sub(1)..=(oy + 1).min(x.h - 1) {
                            for ix in ox.saturating_sub(1)..=(ox + 1).min(x.w - 1) {
                                let i = x.idx(b, iy, ix, ch);
                                if x.data[i] > best {
                                    best = x.data[i];
                                    bi = i;
                                }
                            }
                        }
                        let o = y.idx(b, oy, ox, ch);
                        y.data[o] = best;
                        arg[o] = bi;
                    }
                }
            }
        }
        (y, arg)
    }
}

impl Layer for MaxPool3s1 {
    fn infer(&self, x: &Tensor) -> Tensor {
        Self::run(x).0
    }

    fn forward(&mut self, x: &Tensor, _ctx: &mut TrainCtx) -> Tensor {
        let (y, arg) = Self::run(x);
        self.argmax = Some(arg);
        y
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let arg = self.argmax.as_ref().expect("forward before backward");
        let mut gx = Tensor::zeros(gy.n, gy.h, gy.w, gy.c);
        for (g, &i) in gy.data.iter().zip(arg) {
            gx.data[i] += g;
        }
        gx
    }

    fn out_channels(&self, in_channels: usize) -> usize {
        in_channels
    }

    fn pattern(&self, h: &mut dyn Hasher) {
        if let Some(arg) = &self.argmax {
            arg.iter().for_each(|&i| h.write_usize(i));
        }
    }
}

/// Nearest-neighbor x2 upsampling, zero-padded on the bottom/right up to a
/// target size (12 -> 24 + 1 = 25).
pub fn upsample2(x: &Tensor, th: usize, tw: usize) -> Tensor {
    assert!(th >= 2 * x.h && tw >= 2 * x.w, "upsample target too small");
    let mut y = Tensor::zeros(x.n, th, tw, x.c);
    for b in 0..x.n {
        for oy in 0..2 * x.h {
            for ox in 0..2 * x.w {
                let src = x.idx(b, oy / 2, ox / 2, 0);
                let dst = y.idx(b, oy, ox, 0);
                y.data[dst..dst + x.c].copy_from_slice(&x.data[src..src + x.c]);
            }
        }
    }
    y
}

pub fn upsample2_backward(gy: &Tensor, h: usize, w: usize) -> Tensor {
    let mut gx = Tensor::zeros(gy.n, h, w, gy.c);
    for b in 0..gy.n {
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                let src = gy.idx(b, oy, ox, 0);
                let dst = gx.idx(b, oy / 2, ox / 2, 0);
                for ch in 0..gy.c {
                    gx.data[dst + ch] += gy.data[src + ch];
                }
            }
        }
    }
    gx
}

/// Learned x2 upsampling: 2x2 kernels at stride 2, weights `[cout][2][2][cin]`,
/// zero-padded to the target size.
pub struct ConvTranspose2 {
    pub cin: usize,
    pub cout: usize,
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl ConvTranspose2 {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            cin,
            cout,
            weight: Param::new(
                format!("{name}.weight"),
                vec![cout, 2, 2, cin],
                he_normal(rng, cin, cout * 4 * cin),
                true,
            ),
            bias: Param::new(format!("{name}.bias"), vec![cout], vec![0.0; cout], true),
            cache: None,
        }
    }

    pub fn infer_to(&self, x: &Tensor, th: usize, tw: usize) -> Tensor {
        assert_eq!(x.c, self.cin, "conv-transpose input channels");
        assert!(th >= 2 * x.h && tw >= 2 * x.w, "conv-transpose target too small");
        let (cin, cout) = (self.cin, self.cout);
        let mut y = Tensor::zeros(x.n, th, tw, cout);
        for b in 0..x.n {
            for iy in 0..x.h {
                for ix in 0..x.w {
                    let base = x.idx(b, iy, ix, 0);
                    let px = &x.data[base..base + cin];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let o = y.idx(b, 2 * iy + dy, 2 * ix + dx, 0);
                            for co in 0..cout {
                                let wo = ((co * 2 + dy) * 2 + dx) * cin;
                                let wk = &self.weight.value[wo..wo + cin];
                                y.data[o + co] =
                                    self.bias.value[co] + wk.iter().zip(px).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
            }
        }
        y
    }

    pub fn forward_to(&mut self, x: &Tensor, th: usize, tw: usize) -> Tensor {
        let y = self.infer_to(x, th, tw);
        self.cache = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let x = self.cache.as_ref().expect("forward before backward");
        let (cin, cout) = (self.cin, self.cout);
        let mut gx = Tensor::zeros(x.n, x.h, x.w, cin);
        for b in 0..x.n {
            for iy in 0..x.h {
                for ix in 0..x.w {
                    let base = x.idx(b, iy, ix, 0);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let o = gy.idx(b, 2 * iy + dy, 2 * ix + dx, 0);
                            for co in 0..cout {
                                let g = gy.data[o + co];
                                if g == 0.0 {
                                    continue;
                                }
                                self.bias.grad[co] += g;
                                let wo = ((co * 2 + dy) * 2 + dx) * cin;
                                for ci in 0..cin {
                                    self.weight.grad[wo + ci] += g * x.data[base + ci];
                                    gx.data[base + ci] += g * self.weight.value[wo + ci];
                                }
                            }
                        }
                    }
                }
            }
        }
        gx
    }

    pub fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    pub fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
}

// ---------------------------------------------------------------------------
// Containers

/// Layers applied in order.
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Self { layers }
    }
}

impl Layer for Sequential {
    fn infer(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for l in &self.layers {
            cur = l.infer(&cur);
        }
        cur
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Tensor {
        let mut cur = x.clone();
        for l in &mut self.layers {
            cur = l.forward(&cur, ctx);
        }
        cur
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let mut g = gy.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    fn out_channels(&self, in_channels: usize) -> usize {
        self.layers.iter().fold(in_channels, |c, l| l.out_channels(c))
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.iter_mut().for_each(|l| l.visit(f));
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.iter().for_each(|l| l.visit_ref(f));
    }

    fn pattern(&self, h: &mut dyn Hasher) {
        self.layers.iter().for_each(|l| l.pattern(h));
    }
}

/// Parallel branches on the same input, outputs concatenated along channels.
pub struct Branches {
    pub branches: Vec<Box<dyn Layer>>,
    widths: Vec<usize>,
}

impl Branches {
    pub fn new(branches: Vec<Box<dyn Layer>>) -> Self {
        Self {
            branches,
            widths: Vec::new(),
        }
    }
}

impl Layer for Branches {
    fn infer(&self, x: &Tensor) -> Tensor {
        let outs: Vec<Tensor> = self.branches.iter().map(|b| b.infer(x)).collect();
        concat_many(&outs).expect("branch outputs share spatial size")
    }

    fn forward(&mut self, x: &Tensor, ctx: &mut TrainCtx) -> Tensor {
        let outs: Vec<Tensor> = self.branches.iter_mut().map(|b| b.forward(x, ctx)).collect();
        self.widths = outs.iter().map(|t| t.c).collect();
        concat_many(&outs).expect("branch outputs share spatial size")
    }

    fn backward(&mut self, gy: &Tensor) -> Tensor {
        let parts = split_channels(gy, &self.widths);
        let mut gx: Option<Tensor> = None;
        for (b, g) in self.branches.iter_mut().zip(&parts) {
            let gi = b.backward(g);
            match gx.as_mut() {
                Some(acc) => add_assign(acc, &gi),
                None => gx = Some(gi),
            }
        }
        gx.expect("at least one branch")
    }

    fn out_channels(&self, in_channels: usize) -> usize {
        self.branches.iter().map(|b| b.out_channels(in_channels)).sum()
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.branches.iter_mut().for_each(|l| l.visit(f));
    }

    fn visit_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.branches.iter().for_each(|l| l.visit_ref(f));
    }

    fn pattern(&self, h: &mut dyn Hasher) {
        self.branches.iter().for_each(|l| l.pattern(h));
    }
}
