//! Sequential layers with exact reverse-mode gradients.
//!
//! Conv3 is fixed at kernel 3, stride 1, pad 1 (same-size output) and runs
//! as im2col + matmul; MaxPool3 is fixed at window 2, stride 2. Conv tensors
//! are `[N, C, D, H, W]`, dense tensors `[N, F]`. Train-mode forwards return
//! caches the backward pass consumes; eval-mode forwards are pure (batch
//! norm reads running statistics and mutates nothing).

use rand_chacha::ChaCha8Rng;

use crate::linalg::{matmul_abt_acc, matmul_acc, matmul_atb_acc};
use crate::tensor::{Scalar, Tensor};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

// ── Dense ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub w: Tensor<T>, // [out, in]
    pub b: Tensor<T>, // [out]
    pub gw: Tensor<T>,
    pub gb: Tensor<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = Tensor::uniform(&[out_dim, in_dim], glorot_limit(in_dim, out_dim), rng);
        Self {
            w,
            b: Tensor::zeros(&[out_dim]),
            gw: Tensor::zeros(&[out_dim, in_dim]),
            gb: Tensor::zeros(&[out_dim]),
            in_dim,
            out_dim,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize, NnError> {
        if x.shape().len() != 2 || x.shape()[1] != self.in_dim {
            return Err(NnError::shape(format!("[N, {}]", self.in_dim), x.shape()));
        }
        Ok(x.shape()[0])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.check(x)?;
        let mut y = Tensor::zeros(&[n, self.out_dim]);
        matmul_abt_acc(
            x.data(),
            self.w.data(),
            y.data_mut(),
            n,
            self.in_dim,
            self.out_dim,
        );
        for row in 0..n {
            let y_row = &mut y.data_mut()[row * self.out_dim..(row + 1) * self.out_dim];
            for (v, b) in y_row.iter_mut().zip(self.b.data()) {
                *v = *v + *b;
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.check(x)?;
        if dy.shape() != [n, self.out_dim] {
            return Err(NnError::shape(
                format!("[{n}, {}]", self.out_dim),
                dy.shape(),
            ));
        }
        // dW += dyᵀ · x, db += column sums of dy, dx = dy · W
        matmul_atb_acc(
            dy.data(),
            x.data(),
            self.gw.data_mut(),
            n,
            self.out_dim,
            self.in_dim,
        );
        for row in 0..n {
            let dy_row = &dy.data()[row * self.out_dim..(row + 1) * self.out_dim];
            for (g, d) in self.gb.data_mut().iter_mut().zip(dy_row) {
                *g = *g + *d;
            }
        }
        let mut dx = Tensor::zeros(&[n, self.in_dim]);
        matmul_acc(
            dy.data(),
            self.w.data(),
            dx.data_mut(),
            n,
            self.out_dim,
            self.in_dim,
        );
        Ok(dx)
    }
}

// ── Conv3 (k3 s1 p1) ─────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Conv3<T> {
    pub w: Tensor<T>, // [out_ch, in_ch·27]
    pub b: Tensor<T>, // [out_ch]
    pub gw: Tensor<T>,
    pub gb: Tensor<T>,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl<T: Scalar> Conv3<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let k = in_ch * 27;
        let limit = glorot_limit(k, out_ch * 27);
        Self {
            w: Tensor::uniform(&[out_ch, k], limit, rng),
            b: Tensor::zeros(&[out_ch]),
            gw: Tensor::zeros(&[out_ch, k]),
            gb: Tensor::zeros(&[out_ch]),
            in_ch,
            out_ch,
        }
    }

    fn spatial(&self, x: &Tensor<T>) -> Result<[usize; 4], NnError> {
        let s = x.shape();
        if s.len() != 5 || s[1] != self.in_ch {
            return Err(NnError::shape(format!("[N, {}, D, H, W]", self.in_ch), s));
        }
        Ok([s[0], s[2], s[3], s[4]])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let [n, d, h, w] = self.spatial(x)?;
        let m = d * h * w;
        let k = self.in_ch * 27;
        let mut y = Tensor::zeros(&[n, self.out_ch, d, h, w]);
        let mut cols = vec![T::zero(); k * m];
        for s in 0..n {
            let x_n = &x.data()[s * self.in_ch * m..(s + 1) * self.in_ch * m];
            im2col(x_n, self.in_ch, d, h, w, &mut cols);
            let y_n = &mut y.data_mut()[s * self.out_ch * m..(s + 1) * self.out_ch * m];
            matmul_acc(self.w.data(), &cols, y_n, self.out_ch, k, m);
            for o in 0..self.out_ch {
                let bias = self.b.data()[o];
                for v in &mut y_n[o * m..(o + 1) * m] {
                    *v = *v + bias;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let [n, d, h, w] = self.spatial(x)?;
        let m = d * h * w;
        let k = self.in_ch * 27;
        if dy.shape() != [n, self.out_ch, d, h, w] {
            return Err(NnError::shape(
                format!("[{n}, {}, {d}, {h}, {w}]", self.out_ch),
                dy.shape(),
            ));
        }
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = vec![T::zero(); k * m];
        let mut dcols = vec![T::zero(); k * m];
        for s in 0..n {
            let x_n = &x.data()[s * self.in_ch * m..(s + 1) * self.in_ch * m];
            let dy_n = &dy.data()[s * self.out_ch * m..(s + 1) * self.out_ch * m];
            im2col(x_n, self.in_ch, d, h, w, &mut cols);
            matmul_abt_acc(dy_n, &cols, self.gw.data_mut(), self.out_ch, m, k);
            for o in 0..self.out_ch {
                let mut acc = T::zero();
                for v in &dy_n[o * m..(o + 1) * m] {
                    acc = acc + *v;
                }
                self.gb.data_mut()[o] = self.gb.data()[o] + acc;
            }
            dcols.iter_mut().for_each(|v| *v = T::zero());
            matmul_atb_acc(self.w.data(), dy_n, &mut dcols, self.out_ch, k, m);
            let dx_n = &mut dx.data_mut()[s * self.in_ch * m..(s + 1) * self.in_ch * m];
            col2im_add(&dcols, self.in_ch, d, h, w, dx_n);
        }
        Ok(dx)
    }
}

/// Unfolds one sample `[C, D, H, W]` into `[C·27 × D·H·W]` columns for a
/// 3³ kernel with padding 1. Row order is (c, kd, kh, kw).
fn im2col<T: Scalar>(x: &[T], c: usize, d: usize, h: usize, w: usize, cols: &mut [T]) {
    let m = d * h * w;
    cols.iter_mut().for_each(|v| *v = T::zero());
    for ch in 0..c {
        let x_ch = &x[ch * m..(ch + 1) * m];
        for kd in 0..3usize {
            for kh in 0..3usize {
                for kw in 0..3usize {
                    let row = ((ch * 3 + kd) * 3 + kh) * 3 + kw;
                    let out = &mut cols[row * m..(row + 1) * m];
                    let dz = kd as isize - 1;
                    let dyy = kh as isize - 1;
                    let dxx = kw as isize - 1;
                    for od in 0..d {
                        let sd = od as isize + dz;
                        if sd < 0 || sd >= d as isize {
                            continue;
                        }
                        for oh in 0..h {
                            let sh = oh as isize + dyy;
                            if sh < 0 || sh >= h as isize {
                                continue;
                            }
                            let dst_base = (od * h + oh) * w;
                            let src_base = (sd as usize * h + sh as usize) * w;
                            let (dst_lo, src_lo, len) = if dxx < 0 {
                                (1usize, 0usize, w - 1)
                            } else if dxx > 0 {
                                (0usize, 1usize, w - 1)
                            } else {
                                (0usize, 0usize, w)
                            };
                            out[dst_base + dst_lo..dst_base + dst_lo + len]
                                .copy_from_slice(&x_ch[src_base + src_lo..src_base + src_lo + len]);
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: accumulates column gradients back onto the
/// input gradient.
fn col2im_add<T: Scalar>(cols: &[T], c: usize, d: usize, h: usize, w: usize, dx: &mut [T]) {
    let m = d * h * w;
    for ch in 0..c {
        let dx_ch = &mut dx[ch * m..(ch + 1) * m];
        for kd in 0..3usize {
            for kh in 0..3usize {
                for kw in 0..3usize {
                    let row = ((ch * 3 + kd) * 3 + kh) * 3 + kw;
                    let src = &cols[row * m..(row + 1) * m];
                    let dz = kd as isize - 1;
                    let dyy = kh as isize - 1;
                    let dxx = kw as isize - 1;
                    for od in 0..d {
                        let sd = od as isize + dz;
                        if sd < 0 || sd >= d as isize {
                            continue;
                        }
                        for oh in 0..h {
                            let sh = oh as isize + dyy;
                            if sh < 0 || sh >= h as isize {
                                continue;
                            }
                            let col_base = (od * h + oh) * w;
                            let x_base = (sd as usize * h + sh as usize) * w;
                            let (col_lo, x_lo, len) = if dxx < 0 {
                                (1usize, 0usize, w - 1)
                            } else if dxx > 0 {
                                (0usize, 1usize, w - 1)
                            } else {
                                (0usize, 0usize, w)
                            };
                            let dst = &mut dx_ch[x_base + x_lo..x_base + x_lo + len];
                            let s = &src[col_base + col_lo..col_base + col_lo + len];
                            for (a, b) in dst.iter_mut().zip(s) {
                                *a = *a + *b;
                            }
                        }
                    }
                }
            }
        }
    }
}

// ── BatchNorm over channels of [N, C, D, H, W] ───────────────────────────

#[derive(Debug, Clone)]
pub struct BatchNorm3<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub ggamma: Tensor<T>,
    pub gbeta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

pub struct BnCache<T> {
    x: Tensor<T>,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> BatchNorm3<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            ggamma: Tensor::zeros(&[channels]),
            gbeta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            channels,
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize), NnError> {
        let s = x.shape();
        if s.len() != 5 || s[1] != self.channels {
            return Err(NnError::shape(
                format!("[N, {}, D, H, W]", self.channels),
                s,
            ));
        }
        Ok((s[0], s[2] * s[3] * s[4]))
    }

    /// Train-mode forward: batch statistics normalize, running stats update.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>), NnError> {
        let (n, m) = self.check(x)?;
        let n_eff = T::from_f64c((n * m) as f64);
        let mut y = Tensor::zeros(x.shape());
        let mut means = vec![T::zero(); self.channels];
        let mut inv_stds = vec![T::zero(); self.channels];
        let eps = T::from_f64c(self.eps);
        for c in 0..self.channels {
            let mut sum = T::zero();
            for s in 0..n {
                let base = (s * self.channels + c) * m;
                for v in &x.data()[base..base + m] {
                    sum = sum + *v;
                }
            }
            let mean = sum / n_eff;
            let mut var = T::zero();
            for s in 0..n {
                let base = (s * self.channels + c) * m;
                for v in &x.data()[base..base + m] {
                    let d = *v - mean;
                    var = var + d * d;
                }
            }
            let var = var / n_eff; // biased, used for normalization and running stats
            let inv_std = T::one() / (var + eps).sqrt();
            means[c] = mean;
            inv_stds[c] = inv_std;

            let g = self.gamma.data()[c];
            let b = self.beta.data()[c];
            for s in 0..n {
                let base = (s * self.channels + c) * m;
                let xs = &x.data()[base..base + m];
                let ys = &mut y.data_mut()[base..base + m];
                for (yo, xi) in ys.iter_mut().zip(xs) {
                    *yo = g * ((*xi - mean) * inv_std) + b;
                }
            }

            let mom = T::from_f64c(self.momentum);
            let keep = T::one() - mom;
            self.running_mean.data_mut()[c] = keep * self.running_mean.data()[c] + mom * mean;
            self.running_var.data_mut()[c] = keep * self.running_var.data()[c] + mom * var;
        }
        Ok((
            y,
            BnCache {
                x: x.clone(),
                mean: means,
                inv_std: inv_stds,
            },
        ))
    }

    /// Eval-mode forward: running statistics, no mutation.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, m) = self.check(x)?;
        let mut y = Tensor::zeros(x.shape());
        let eps = T::from_f64c(self.eps);
        for c in 0..self.channels {
            let mean = self.running_mean.data()[c];
            let inv_std = T::one() / (self.running_var.data()[c] + eps).sqrt();
            let g = self.gamma.data()[c];
            let b = self.beta.data()[c];
            for s in 0..n {
                let base = (s * self.channels + c) * m;
                let xs = &x.data()[base..base + m];
                let ys = &mut y.data_mut()[base..base + m];
                for (yo, xi) in ys.iter_mut().zip(xs) {
                    *yo = g * ((*xi - mean) * inv_std) + b;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, cache: &BnCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (n, m) = self.check(&cache.x)?;
        if dy.shape() != cache.x.shape() {
            return Err(NnError::shape(format!("{:?}", cache.x.shape()), dy.shape()));
        }
        let n_eff = T::from_f64c((n * m) as f64);
        let mut dx = Tensor::zeros(cache.x.shape());
        for c in 0..self.channels {
            let mean = cache.mean[c];
            let inv_std = cache.inv_std[c];
            let g = self.gamma.data()[c];

            let mut s1 = T::zero(); // Σ dy
            let mut s2 = T::zero(); // Σ dy·x̂
            for s in 0..n {
                let base = (s * self.channels + c) * m;
                let xs = &cache.x.data()[base..base + m];
                let ds = &dy.data()[base..base + m];
                for (xi, di) in xs.iter().zip(ds) {
                    s1 = s1 + *di;
                    s2 = s2 + *di * ((*xi - mean) * inv_std);
                }
            }
            self.gbeta.data_mut()[c] = self.gbeta.data()[c] + s1;
            self.ggamma.data_mut()[c] = self.ggamma.data()[c] + s2;

            let k1 = s1 / n_eff;
            let k2 = s2 / n_eff;
            for s in 0..n {
                let base = (s * self.channels + c) * m;
                let xs = &cache.x.data()[base..base + m];
                let ds = &dy.data()[base..base + m];
                let dxs = &mut dx.data_mut()[base..base + m];
                for ((xi, di), dxo) in xs.iter().zip(ds).zip(dxs.iter_mut()) {
                    let xhat = (*xi - mean) * inv_std;
                    *dxo = g * inv_std * (*di - k1 - xhat * k2);
                }
            }
        }
        Ok(dx)
    }
}

// ── ReLU ─────────────────────────────────────────────────────────────────

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<bool>) {
    let mut y = x.clone();
    let mask: Vec<bool> = x.data().iter().map(|v| *v > T::zero()).collect();
    for (v, keep) in y.data_mut().iter_mut().zip(&mask) {
        if !*keep {
            *v = T::zero();
        }
    }
    (y, mask)
}

pub fn relu_backward<T: Scalar>(mask: &[bool], dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    if mask.len() != dy.len() {
        return Err(NnError::shape(format!("{} values", mask.len()), dy.shape()));
    }
    let mut dx = dy.clone();
    for (v, keep) in dx.data_mut().iter_mut().zip(mask) {
        if !*keep {
            *v = T::zero();
        }
    }
    Ok(dx)
}

// ── MaxPool3 (2³, stride 2) ──────────────────────────────────────────────

pub struct PoolCache {
    pub indices: Vec<u32>,
    pub in_shape: Vec<usize>,
}

pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolCache), NnError> {
    let s = x.shape();
    if s.len() != 5 || s[2] < 2 || s[3] < 2 || s[4] < 2 {
        return Err(NnError::shape("[N, C, D≥2, H≥2, W≥2]".to_string(), s));
    }
    let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, od, oh, ow]);
    let mut indices = vec![0u32; n * c * od * oh * ow];
    let mut out = 0usize;
    for s_n in 0..n {
        for ch in 0..c {
            let base = (s_n * c + ch) * d * h * w;
            for zd in 0..od {
                for zh in 0..oh {
                    for zw in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_idx = 0usize;
                        for dz in 0..2usize {
                            for dh in 0..2usize {
                                for dw in 0..2usize {
                                    let idx = base
                                        + ((zd * 2 + dz) * h + (zh * 2 + dh)) * w
                                        + (zw * 2 + dw);
                                    let v = x.data()[idx];
                                    if v > best {
                                        best = v;
                                        best_idx = idx;
                                    }
                                }
                            }
                        }
                        y.data_mut()[out] = best;
                        indices[out] = best_idx as u32;
                        out += 1;
                    }
                }
            }
        }
    }
    Ok((
        y,
        PoolCache {
            indices,
            in_shape: s.to_vec(),
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(
    cache: &PoolCache,
    dy: &Tensor<T>,
) -> Result<Tensor<T>, NnError> {
    if dy.len() != cache.indices.len() {
        return Err(NnError::shape(
            format!("{} values", cache.indices.len()),
            dy.shape(),
        ));
    }
    let mut dx = Tensor::zeros(&cache.in_shape);
    for (g, &idx) in dy.data().iter().zip(&cache.indices) {
        let slot = &mut dx.data_mut()[idx as usize];
        *slot = *slot + *g;
    }
    Ok(dx)
}

// ── Stack ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Conv3(Conv3<T>),
    BatchNorm(BatchNorm3<T>),
    Relu,
    MaxPool,
    Flatten,
}

pub enum LayerCache<T> {
    Input(Tensor<T>),
    Bn(BnCache<T>),
    Mask(Vec<bool>),
    Pool(PoolCache),
    Shape(Vec<usize>),
    None,
}

/// A sequential layer stack.
#[derive(Debug, Clone, Default)]
pub struct Stack<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Stack<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, Vec<LayerCache<T>>), NnError> {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (idx, layer) in self.layers.iter_mut().enumerate() {
            let at = |e: NnError| e.at_layer(idx);
            let (next, cache) = match layer {
                Layer::Dense(l) => {
                    let y = l.forward(&cur).map_err(at)?;
                    (y, LayerCache::Input(cur))
                }
                Layer::Conv3(l) => {
                    let y = l.forward(&cur).map_err(at)?;
                    (y, LayerCache::Input(cur))
                }
                Layer::BatchNorm(l) => match mode {
                    Mode::Train => {
                        let (y, c) = l.forward_train(&cur).map_err(at)?;
                        (y, LayerCache::Bn(c))
                    }
                    Mode::Eval => (l.forward_eval(&cur).map_err(at)?, LayerCache::None),
                },
                Layer::Relu => {
                    let (y, mask) = relu_forward(&cur);
                    (y, LayerCache::Mask(mask))
                }
                Layer::MaxPool => {
                    let (y, c) = maxpool_forward(&cur).map_err(at)?;
                    (y, LayerCache::Pool(c))
                }
                Layer::Flatten => {
                    let shape = cur.shape().to_vec();
                    if shape.len() < 2 {
                        return Err(NnError::shape("[N, ...]".to_string(), &shape).at_layer(idx));
                    }
                    let n = shape[0];
                    let rest: usize = shape[1..].iter().product();
                    (
                        cur.clone().reshaped(&[n, rest]).map_err(at)?,
                        LayerCache::Shape(shape),
                    )
                }
            };
            cur = next;
            caches.push(if mode == Mode::Train {
                cache
            } else {
                LayerCache::None
            });
        }
        Ok((cur, caches))
    }

    /// Eval-mode forward without any state mutation.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut cur = x.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let at = |e: NnError| e.at_layer(idx);
            cur = match layer {
                Layer::Dense(l) => l.forward(&cur).map_err(at)?,
                Layer::Conv3(l) => l.forward(&cur).map_err(at)?,
                Layer::BatchNorm(l) => l.forward_eval(&cur).map_err(at)?,
                Layer::Relu => relu_forward(&cur).0,
                Layer::MaxPool => maxpool_forward(&cur).map_err(at)?.0,
                Layer::Flatten => {
                    let shape = cur.shape().to_vec();
                    let n = shape[0];
                    let rest: usize = shape[1..].iter().product();
                    cur.reshaped(&[n, rest]).map_err(at)?
                }
            };
        }
        Ok(cur)
    }

    /// Reverse pass over a train-mode cache trail; accumulates parameter
    /// gradients and returns the input gradient.
    pub fn backward(
        &mut self,
        caches: Vec<LayerCache<T>>,
        dy: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        if caches.len() != self.layers.len() {
            return Err(NnError::InvalidSpec(format!(
                "cache trail has {} entries for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut grad = dy.clone();
        for (idx, (layer, cache)) in self.layers.iter_mut().zip(caches).enumerate().rev() {
            let at = |e: NnError| e.at_layer(idx);
            grad = match (layer, cache) {
                (Layer::Dense(l), LayerCache::Input(x)) => l.backward(&x, &grad).map_err(at)?,
                (Layer::Conv3(l), LayerCache::Input(x)) => l.backward(&x, &grad).map_err(at)?,
                (Layer::BatchNorm(l), LayerCache::Bn(c)) => l.backward(&c, &grad).map_err(at)?,
                (Layer::Relu, LayerCache::Mask(m)) => relu_backward(&m, &grad).map_err(at)?,
                (Layer::MaxPool, LayerCache::Pool(c)) => maxpool_backward(&c, &grad).map_err(at)?,
                (Layer::Flatten, LayerCache::Shape(s)) => grad.reshaped(&s).map_err(at)?,
                _ => {
                    return Err(NnError::InvalidSpec(format!(
                        "layer {idx}: cache kind does not match layer kind"
                    )))
                }
            };
        }
        Ok(grad)
    }

    /// (parameter, gradient) pairs in declaration order, for the optimizer.
    pub fn params(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(l) => {
                    out.push((&mut l.w, &mut l.gw));
                    out.push((&mut l.b, &mut l.gb));
                }
                Layer::Conv3(l) => {
                    out.push((&mut l.w, &mut l.gw));
                    out.push((&mut l.b, &mut l.gb));
                }
                Layer::BatchNorm(l) => {
                    out.push((&mut l.gamma, &mut l.ggamma));
                    out.push((&mut l.beta, &mut l.gbeta));
                }
                _ => {}
            }
        }
        out
    }

    /// All persistent tensors (parameters plus batch-norm running stats) in
    /// declaration order, for serialization.
    pub fn state_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense(l) => {
                    out.push(&l.w);
                    out.push(&l.b);
                }
                Layer::Conv3(l) => {
                    out.push(&l.w);
                    out.push(&l.b);
                }
                Layer::BatchNorm(l) => {
                    out.push(&l.gamma);
                    out.push(&l.beta);
                    out.push(&l.running_mean);
                    out.push(&l.running_var);
                }
                _ => {}
            }
        }
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense(l) => {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
                Layer::Conv3(l) => {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
                Layer::BatchNorm(l) => {
                    out.push(&mut l.gamma);
                    out.push(&mut l.beta);
                    out.push(&mut l.running_mean);
                    out.push(&mut l.running_var);
                }
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for (_, g) in self.params() {
            g.fill(T::zero());
        }
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        for layer in &self.layers {
            total += match layer {
                Layer::Dense(l) => l.w.len() + l.b.len(),
                Layer::Conv3(l) => l.w.len() + l.b.len(),
                Layer::BatchNorm(l) => l.gamma.len() + l.beta.len(),
                _ => 0,
            };
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn relu_clamps_and_masks() {
        let x = Tensor::from_vec(&[1, 3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        let (y, mask) = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(mask, vec![false, false, true]);
        let dy = Tensor::filled(&[1, 3], 1.0);
        let dx = relu_backward(&mask, &dy).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_picks_block_max() {
        let vals: Vec<f64> = (1..=8).map(f64::from).collect();
        let x = Tensor::from_vec(&[1, 1, 2, 2, 2], vals).unwrap();
        let (y, cache) = maxpool_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1, 1]);
        assert_eq!(y.data(), &[8.0]);
        let dy = Tensor::filled(&[1, 1, 1, 1, 1], 3.0);
        let dx = maxpool_backward(&cache, &dy).unwrap();
        assert_eq!(dx.data()[7], 3.0);
        assert_eq!(dx.data().iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn maxpool_rejects_size_one_spatial_dims() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1, 4, 4]);
        assert!(maxpool_forward(&x).is_err());
    }

    #[test]
    fn conv_identity_kernel_reproduces_input() {
        let mut conv = Conv3::<f64>::new(1, 1, &mut rng());
        conv.w.fill(0.0);
        conv.b.fill(0.0);
        // Center tap of the 3³ kernel: (kd, kh, kw) = (1, 1, 1).
        conv.w.data_mut()[(3 + 1) * 3 + 1] = 1.0;
        let vals: Vec<f64> = (0..64).map(|v| (v as f64) * 0.37 - 3.0).collect();
        let x = Tensor::from_vec(&[1, 1, 4, 4, 4], vals.clone()).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), vals.as_slice());
    }

    #[test]
    fn conv_matches_brute_force() {
        let conv = Conv3::<f64>::new(2, 3, &mut rng());
        let x = Tensor::uniform(&[2, 2, 4, 3, 5], 1.0, &mut rng());
        let y = conv.forward(&x).unwrap();

        let (n, d, h, w) = (2usize, 4usize, 3usize, 5usize);
        let m = d * h * w;
        for s in 0..n {
            for o in 0..3 {
                for zd in 0..d {
                    for zh in 0..h {
                        for zw in 0..w {
                            let mut acc = conv.b.data()[o];
                            for c in 0..2 {
                                for kd in 0..3isize {
                                    for kh in 0..3isize {
                                        for kw in 0..3isize {
                                            let sd = zd as isize + kd - 1;
                                            let sh = zh as isize + kh - 1;
                                            let sw = zw as isize + kw - 1;
                                            if sd < 0
                                                || sd >= d as isize
                                                || sh < 0
                                                || sh >= h as isize
                                                || sw < 0
                                                || sw >= w as isize
                                            {
                                                continue;
                                            }
                                            let xi = x.data()[(s * 2 + c) * m
                                                + ((sd as usize * h) + sh as usize) * w
                                                + sw as usize];
                                            let wi = conv.w.data()[o * 54
                                                + (((c * 3 + kd as usize) * 3 + kh as usize) * 3
                                                    + kw as usize)];
                                            acc += xi * wi;
                                        }
                                    }
                                }
                            }
                            let got = y.data()[(s * 3 + o) * m + (zd * h + zh) * w + zw];
                            assert!((got - acc).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dense_zero_output_grad_gives_zero_param_grads() {
        let mut dense = Dense::<f64>::new(4, 3, &mut rng());
        let x = Tensor::uniform(&[2, 4], 1.0, &mut rng());
        let dy = Tensor::zeros(&[2, 3]);
        let dx = dense.backward(&x, &dy).unwrap();
        assert!(dense.gw.data().iter().all(|v| *v == 0.0));
        assert!(dense.gb.data().iter().all(|v| *v == 0.0));
        assert!(dx.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batchnorm_eval_is_pure_and_uses_running_stats() {
        let mut bn = BatchNorm3::<f64>::new(2);
        let x = Tensor::uniform(&[3, 2, 2, 2, 2], 2.0, &mut rng());
        let (_, _) = bn.forward_train(&x).unwrap();
        let rm = bn.running_mean.clone();
        let rv = bn.running_var.clone();
        let y1 = bn.forward_eval(&x).unwrap();
        let y2 = bn.forward_eval(&x).unwrap();
        assert_eq!(y1, y2);
        assert_eq!(bn.running_mean, rm);
        assert_eq!(bn.running_var, rv);
    }

    #[test]
    fn batchnorm_train_normalizes_batch() {
        let mut bn = BatchNorm3::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 1, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let (y, _) = bn.forward_train(&x).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4); // eps shrinks variance slightly
    }

    #[test]
    fn stack_shape_errors_carry_layer_index() {
        let mut stack = Stack::new(vec![
            Layer::Dense(Dense::<f64>::new(4, 3, &mut rng())),
            Layer::Dense(Dense::<f64>::new(5, 2, &mut rng())),
        ]);
        let x = Tensor::zeros(&[1, 4]);
        let err = match stack.forward(&x, Mode::Train) {
            Err(e) => e,
            Ok(_) => panic!("expected shape error"),
        };
        match err {
            NnError::ShapeMismatch { layer: Some(1), .. } => {}
            other => panic!("expected layer-1 shape error, got {other:?}"),
        }
    }

    #[test]
    fn conv_trunk_spatial_trace_28_14_7_3() {
        let mut stack = Stack::new(vec![
            Layer::Conv3(Conv3::<f32>::new(1, 2, &mut rng())),
            Layer::MaxPool,
            Layer::Conv3(Conv3::<f32>::new(2, 2, &mut rng())),
            Layer::MaxPool,
            Layer::Conv3(Conv3::<f32>::new(2, 2, &mut rng())),
            Layer::MaxPool,
        ]);
        let x = Tensor::zeros(&[1, 1, 28, 28, 28]);
        let (y, _) = stack.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3, 3, 3]);
    }
}
