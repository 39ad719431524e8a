//! Layers with explicit forward passes and hand-written backward passes.
//!
//! Every backward takes the forward inputs (or a cache), the upstream
//! gradient, an optional gradient accumulator shaped like the layer, and an
//! optional slot for the input gradient. Skipping the accumulator is how
//! frozen parameters stay frozen.

use crate::nn::param::{child, ParamBlocks};
use crate::tensor::{Real, Tensor};
use rand::Rng;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn silu_tensor<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(silu)
}

/// Uniform fan-in init bound: `1 / sqrt(fan_in)`.
fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// `y += a * x` over equal-length slices; elementwise, so it vectorizes.
#[inline]
fn axpy<T: Real>(y: &mut [T], x: &[T], a: T) {
    debug_assert_eq!(y.len(), x.len());
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

/// Dot product with four independent partial sums (fixed order, so results
/// are deterministic).
#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut s0 = T::zero();
    let mut s1 = T::zero();
    let mut s2 = T::zero();
    let mut s3 = T::zero();
    let chunks = n / 4;
    for i in 0..chunks {
        let k = 4 * i;
        s0 = s0 + a[k] * b[k];
        s1 = s1 + a[k + 1] * b[k + 1];
        s2 = s2 + a[k + 2] * b[k + 2];
        s3 = s3 + a[k + 3] * b[k + 3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for k in chunks * 4..n {
        s = s + a[k] * b[k];
    }
    s
}

fn draw_uniform<T: Real, R: Rng>(rng: &mut R, bound: f64) -> T {
    T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound)
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// 2D convolution, square kernel, zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[c_out][c_in][k][k]`
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeroed(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self {
            c_in,
            c_out,
            k,
            stride,
            pad,
            w: vec![T::zero(); c_out * c_in * k * k],
            b: vec![T::zero(); c_out],
        }
    }

    pub fn init_fan_in<R: Rng>(&mut self, rng: &mut R) {
        let bound = fan_in_bound(self.c_in * self.k * self.k);
        for w in self.w.iter_mut() {
            *w = draw_uniform::<T, _>(rng, bound);
        }
        for b in self.b.iter_mut() {
            *b = T::zero();
        }
    }

    pub fn out_size(&self, h_in: usize, w_in: usize) -> (usize, usize) {
        (
            (h_in + 2 * self.pad - self.k) / self.stride + 1,
            (w_in + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    /// Output index range `[lo, hi)` such that `o*stride + kk - pad` stays in
    /// `[0, n_in)`.
    #[inline]
    fn bounds(&self, kk: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo_num = self.pad as isize - kk as isize;
        let lo = if lo_num <= 0 {
            0
        } else {
            ((lo_num + s - 1) / s) as usize
        };
        let hi_num = n_in as isize - 1 + self.pad as isize - kk as isize;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = ((hi_num / s) + 1).min(n_out as isize).max(0) as usize;
        (lo.min(hi), hi)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.channels(), self.c_in, "conv input channels");
        let (h_in, w_in) = (x.height(), x.width());
        let (h_out, w_out) = self.out_size(h_in, w_in);
        let mut y = Tensor::zeros(self.c_out, h_out, w_out);
        for oc in 0..self.c_out {
            let bias = self.b[oc];
            let yplane = y.plane_mut(oc);
            for v in yplane.iter_mut() {
                *v = bias;
            }
            for ic in 0..self.c_in {
                let xplane = x.plane(ic);
                let wbase = (oc * self.c_in + ic) * self.k * self.k;
                for ky in 0..self.k {
                    let (oy_lo, oy_hi) = self.bounds(ky, h_in, h_out);
                    for kx in 0..self.k {
                        let wv = self.w[wbase + ky * self.k + kx];
                        if wv == T::zero() {
                            continue; // zero convolutions cost nothing
                        }
                        let (ox_lo, ox_hi) = self.bounds(kx, w_in, w_out);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * self.stride + ky - self.pad;
                            let yrow = &mut yplane[oy * w_out..oy * w_out + w_out];
                            let xrow = &xplane[iy * w_in..iy * w_in + w_in];
                            if self.stride == 1 {
                                let ix_lo = (ox_lo as isize + kx as isize - self.pad as isize)
                                    as usize;
                                let n = ox_hi - ox_lo;
                                axpy(
                                    &mut yrow[ox_lo..ox_hi],
                                    &xrow[ix_lo..ix_lo + n],
                                    wv,
                                );
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * self.stride + kx - self.pad;
                                    yrow[ox] = yrow[ox] + wv * xrow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and the input gradient
    /// into `dx` (when provided).
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        mut grad: Option<&mut Conv2d<T>>,
        mut dx: Option<&mut Tensor<T>>,
    ) {
        let (h_in, w_in) = (x.height(), x.width());
        let (h_out, w_out) = (dy.height(), dy.width());
        debug_assert_eq!(dy.channels(), self.c_out);
        for oc in 0..self.c_out {
            let dyplane = dy.plane(oc);
            if let Some(g) = grad.as_deref_mut() {
                let mut acc = T::zero();
                for &v in dyplane {
                    acc = acc + v;
                }
                g.b[oc] = g.b[oc] + acc;
            }
            for ic in 0..self.c_in {
                let xplane = x.plane(ic);
                let wbase = (oc * self.c_in + ic) * self.k * self.k;
                for ky in 0..self.k {
                    let (oy_lo, oy_hi) = self.bounds(ky, h_in, h_out);
                    for kx in 0..self.k {
                        let (ox_lo, ox_hi) = self.bounds(kx, w_in, w_out);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let n = ox_hi - ox_lo;
                        if let Some(g) = grad.as_deref_mut() {
                            let mut acc = T::zero();
                            for oy in oy_lo..oy_hi {
                                let iy = oy * self.stride + ky - self.pad;
                                let dyrow = &dyplane[oy * w_out..oy * w_out + w_out];
                                let xrow = &xplane[iy * w_in..iy * w_in + w_in];
                                if self.stride == 1 {
                                    let ix_lo = (ox_lo as isize + kx as isize
                                        - self.pad as isize)
                                        as usize;
                                    acc = acc
                                        + dot(&dyrow[ox_lo..ox_hi], &xrow[ix_lo..ix_lo + n]);
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        let ix = ox * self.stride + kx - self.pad;
                                        acc = acc + dyrow[ox] * xrow[ix];
                                    }
                                }
                            }
                            let idx = wbase + ky * self.k + kx;
                            g.w[idx] = g.w[idx] + acc;
                        }
                        if let Some(dxt) = dx.as_deref_mut() {
                            let wv = self.w[wbase + ky * self.k + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            let dxplane = dxt.plane_mut(ic);
                            for oy in oy_lo..oy_hi {
                                let iy = oy * self.stride + ky - self.pad;
                                let dxrow = &mut dxplane[iy * w_in..iy * w_in + w_in];
                                let dyrow = &dyplane[oy * w_out..oy * w_out + w_out];
                                if self.stride == 1 {
                                    let ix_lo = (ox_lo as isize + kx as isize
                                        - self.pad as isize)
                                        as usize;
                                    axpy(
                                        &mut dxrow[ix_lo..ix_lo + n],
                                        &dyrow[ox_lo..ox_hi],
                                        wv,
                                    );
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        let ix = ox * self.stride + kx - self.pad;
                                        dxrow[ix] = dxrow[ix] + wv * dyrow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> ParamBlocks<T> for Conv2d<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        out.push((child(prefix, "w"), &self.w));
        out.push((child(prefix, "b"), &self.b));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((child(prefix, "w"), &mut self.w));
        out.push((child(prefix, "b"), &mut self.b));
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out][in]`
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeroed(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![T::zero(); in_dim * out_dim],
            b: vec![T::zero(); out_dim],
        }
    }

    pub fn init_fan_in<R: Rng>(&mut self, rng: &mut R) {
        let bound = fan_in_bound(self.in_dim);
        for w in self.w.iter_mut() {
            *w = draw_uniform::<T, _>(rng, bound);
        }
        for b in self.b.iter_mut() {
            *b = T::zero();
        }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.b[o];
            for (wv, xv) in row.iter().zip(x) {
                acc = acc + *wv * *xv;
            }
            y.push(acc);
        }
        y
    }

    pub fn backward(
        &self,
        x: &[T],
        dy: &[T],
        mut grad: Option<&mut Linear<T>>,
        dx: Option<&mut [T]>,
    ) {
        if let Some(g) = grad.as_deref_mut() {
            for o in 0..self.out_dim {
                g.b[o] = g.b[o] + dy[o];
                let grow = &mut g.w[o * self.in_dim..(o + 1) * self.in_dim];
                for (gw, &xv) in grow.iter_mut().zip(x) {
                    *gw = *gw + dy[o] * xv;
                }
            }
        }
        if let Some(dxs) = dx {
            for o in 0..self.out_dim {
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                for (d, &wv) in dxs.iter_mut().zip(row) {
                    *d = *d + dy[o] * wv;
                }
            }
        }
    }
}

impl<T: Real> ParamBlocks<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        out.push((child(prefix, "w"), &self.w));
        out.push((child(prefix, "b"), &self.b));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((child(prefix, "w"), &mut self.w));
        out.push((child(prefix, "b"), &mut self.b));
    }
}

// ---------------------------------------------------------------------------
// GroupNorm (single group over all channels, per-channel affine)
// ---------------------------------------------------------------------------

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Statistics needed to replay a normalization in the backward pass.
#[derive(Debug, Clone, Copy)]
pub struct NormStats {
    pub mean: f64,
    pub inv_std: f64,
}

impl<T: Real> GroupNorm<T> {
    pub fn unit(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, NormStats) {
        debug_assert_eq!(x.channels(), self.channels);
        let n = x.len() as f64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for v in x.data() {
            let f = v.into_f64();
            sum += f;
            sum2 += f * f;
        }
        let mean = sum / n;
        let var = (sum2 / n - mean * mean).max(0.0);
        let inv_std = 1.0 / (var + NORM_EPS).sqrt();
        let mean_t = T::from_f64(mean);
        let inv_t = T::from_f64(inv_std);
        let mut y = x.clone();
        for c in 0..self.channels {
            let (g, b) = (self.gamma[c], self.beta[c]);
            for v in y.plane_mut(c) {
                *v = g * ((*v - mean_t) * inv_t) + b;
            }
        }
        (y, NormStats { mean, inv_std })
    }

    pub fn backward(
        &self,
        x: &Tensor<T>,
        stats: &NormStats,
        dy: &Tensor<T>,
        mut grad: Option<&mut GroupNorm<T>>,
        dx: Option<&mut Tensor<T>>,
    ) {
        let n = x.len() as f64;
        let mean_t = T::from_f64(stats.mean);
        let inv_t = T::from_f64(stats.inv_std);

        // dxhat = dy * gamma; accumulate the two reductions the input
        // gradient needs, plus per-channel affine gradients
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for c in 0..self.channels {
            let g = self.gamma[c];
            let xp = x.plane(c);
            let dyp = dy.plane(c);
            let mut dgamma = T::zero();
            let mut dbeta = T::zero();
            for (xv, dv) in xp.iter().zip(dyp) {
                let xhat = (*xv - mean_t) * inv_t;
                let dxhat = *dv * g;
                sum_dxhat += dxhat.into_f64();
                sum_dxhat_xhat += (dxhat * xhat).into_f64();
                dgamma = dgamma + *dv * xhat;
                dbeta = dbeta + *dv;
            }
            if let Some(g_acc) = grad.as_deref_mut() {
                g_acc.gamma[c] = g_acc.gamma[c] + dgamma;
                g_acc.beta[c] = g_acc.beta[c] + dbeta;
            }
        }
        if let Some(dxt) = dx {
            let m1 = T::from_f64(sum_dxhat / n);
            let m2 = T::from_f64(sum_dxhat_xhat / n);
            for c in 0..self.channels {
                let g = self.gamma[c];
                let xp = x.plane(c);
                let dyp = dy.plane(c);
                let dxp = dxt.plane_mut(c);
                for ((xv, dv), out) in xp.iter().zip(dyp).zip(dxp.iter_mut()) {
                    let xhat = (*xv - mean_t) * inv_t;
                    let dxhat = *dv * g;
                    *out = *out + inv_t * (dxhat - m1 - xhat * m2);
                }
            }
        }
    }
}

impl<T: Real> ParamBlocks<T> for GroupNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        out.push((child(prefix, "gamma"), &self.gamma));
        out.push((child(prefix, "beta"), &self.beta));
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        out.push((child(prefix, "gamma"), &mut self.gamma));
        out.push((child(prefix, "beta"), &mut self.beta));
    }
}

// ---------------------------------------------------------------------------
// Conv block: residual unit around conv -> +time projection -> norm -> silu
// ---------------------------------------------------------------------------

/// `y = silu(norm(conv(x)) * (1 + scale(t)) + shift(t)) + shortcut(x)`.
///
/// The timestep enters as a per-channel scale and shift on the normalized
/// features. The multiplicative handle matters: noise prediction has to
/// apply gains that vary over orders of magnitude across timesteps. The
/// shortcut is the identity when channel counts match, a 1x1 conv
/// otherwise; it carries the input scale past the normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    /// Projects the time embedding to `[scale; shift]`, `2 * c_out` wide.
    pub time: Linear<T>,
    pub norm: GroupNorm<T>,
    pub shortcut: Option<Conv2d<T>>,
}

pub struct ConvBlockCache<T> {
    pub x: Tensor<T>,
    /// conv output (input to the norm)
    pub pre_norm: Tensor<T>,
    pub stats: NormStats,
    /// modulated norm output (input to silu)
    pub pre_act: Tensor<T>,
    /// per-channel `[scale; shift]` from the time projection
    pub tb: Vec<T>,
}

impl<T: Real> ConvBlock<T> {
    pub fn new(c_in: usize, c_out: usize, time_dim: usize) -> Self {
        let shortcut = (c_in != c_out).then(|| Conv2d::zeroed(c_in, c_out, 1, 1, 0));
        Self {
            conv: Conv2d::zeroed(c_in, c_out, 3, 1, 1),
            time: Linear::zeroed(time_dim, 2 * c_out),
            norm: GroupNorm::unit(c_out),
            shortcut,
        }
    }

    pub fn init<R: Rng>(&mut self, rng: &mut R) {
        self.conv.init_fan_in(rng);
        self.time.init_fan_in(rng);
        if let Some(s) = self.shortcut.as_mut() {
            s.init_fan_in(rng);
        }
    }

    pub fn forward(&self, x: &Tensor<T>, temb: &[T]) -> (Tensor<T>, ConvBlockCache<T>) {
        let h = self.conv.forward(x);
        let tb = self.time.forward(temb);
        let c_out = h.channels();
        let (normed, stats) = self.norm.forward(&h);
        let mut modulated = normed;
        for c in 0..c_out {
            let scale = T::one() + tb[c];
            let shift = tb[c_out + c];
            for v in modulated.plane_mut(c) {
                *v = *v * scale + shift;
            }
        }
        let mut y = silu_tensor(&modulated);
        match &self.shortcut {
            None => {
                for (yv, &xv) in y.data_mut().iter_mut().zip(x.data()) {
                    *yv = *yv + xv;
                }
            }
            Some(s) => {
                let r = s.forward(x);
                for (yv, &rv) in y.data_mut().iter_mut().zip(r.data()) {
                    *yv = *yv + rv;
                }
            }
        }
        (
            y,
            ConvBlockCache {
                x: x.clone(),
                pre_norm: h,
                stats,
                pre_act: modulated,
                tb,
            },
        )
    }

    /// Backward through the residual sum, silu, time modulation, norm, and
    /// both convolutions.
    ///
    /// `dtemb` accumulates the gradient flowing into the shared time
    /// embedding; `dx` receives the input gradient when needed.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        cache: &ConvBlockCache<T>,
        temb: &[T],
        dy: &Tensor<T>,
        mut grad: Option<&mut ConvBlock<T>>,
        dtemb: Option<&mut [T]>,
        mut dx: Option<&mut Tensor<T>>,
    ) {
        // residual branch
        match &self.shortcut {
            None => {
                if let Some(dxt) = dx.as_deref_mut() {
                    for (d, &g) in dxt.data_mut().iter_mut().zip(dy.data()) {
                        *d = *d + g;
                    }
                }
            }
            Some(s) => {
                s.backward(
                    &cache.x,
                    dy,
                    grad.as_deref_mut().and_then(|g| g.shortcut.as_mut()),
                    dx.as_deref_mut(),
                );
            }
        }
        // main branch: silu
        let mut d_mod = dy.clone();
        for (d, &p) in d_mod.data_mut().iter_mut().zip(cache.pre_act.data()) {
            *d = *d * silu_grad(p);
        }
        // time modulation: normed values are replayed from the cached stats
        let c_out = d_mod.channels();
        let mean_t = T::from_f64(cache.stats.mean);
        let inv_t = T::from_f64(cache.stats.inv_std);
        let mut d_tb = vec![T::zero(); 2 * c_out];
        let mut d_normed = Tensor::zeros(c_out, d_mod.height(), d_mod.width());
        for c in 0..c_out {
            let scale = T::one() + cache.tb[c];
            let gamma = self.norm.gamma[c];
            let beta = self.norm.beta[c];
            let hp = cache.pre_norm.plane(c);
            let dp = d_mod.plane(c);
            let out = d_normed.plane_mut(c);
            let mut dscale = T::zero();
            let mut dshift = T::zero();
            for ((dv, &hv), o) in dp.iter().zip(hp).zip(out.iter_mut()) {
                let normed = gamma * ((hv - mean_t) * inv_t) + beta;
                dscale = dscale + *dv * normed;
                dshift = dshift + *dv;
                *o = *dv * scale;
            }
            d_tb[c] = dscale;
            d_tb[c_out + c] = dshift;
        }
        self.time.backward(
            temb,
            &d_tb,
            grad.as_deref_mut().map(|g| &mut g.time),
            dtemb,
        );
        let mut d_pre_norm = Tensor::zeros(
            cache.pre_norm.channels(),
            cache.pre_norm.height(),
            cache.pre_norm.width(),
        );
        self.norm.backward(
            &cache.pre_norm,
            &cache.stats,
            &d_normed,
            grad.as_deref_mut().map(|g| &mut g.norm),
            Some(&mut d_pre_norm),
        );
        self.conv.backward(
            &cache.x,
            &d_pre_norm,
            grad.as_deref_mut().map(|g| &mut g.conv),
            dx,
        );
    }
}

impl<T: Real> ParamBlocks<T> for ConvBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        self.conv.visit(&child(prefix, "conv"), out);
        self.time.visit(&child(prefix, "time"), out);
        self.norm.visit(&child(prefix, "norm"), out);
        if let Some(s) = &self.shortcut {
            s.visit(&child(prefix, "shortcut"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        self.conv.visit_mut(&child(prefix, "conv"), out);
        self.time.visit_mut(&child(prefix, "time"), out);
        self.norm.visit_mut(&child(prefix, "norm"), out);
        if let Some(s) = &mut self.shortcut {
            s.visit_mut(&child(prefix, "shortcut"), out);
        }
    }
}

// ---------------------------------------------------------------------------
// Spatial helpers
// ---------------------------------------------------------------------------

/// Nearest-neighbor 2x upsample.
pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = x.shape();
    let mut y = Tensor::zeros(c, h * 2, w * 2);
    for ci in 0..c {
        let xp = x.plane(ci);
        let yp = y.plane_mut(ci);
        for iy in 0..h {
            for ix in 0..w {
                let v = xp[iy * w + ix];
                let base = (2 * iy) * (2 * w) + 2 * ix;
                yp[base] = v;
                yp[base + 1] = v;
                yp[base + 2 * w] = v;
                yp[base + 2 * w + 1] = v;
            }
        }
    }
    y
}

/// Backward of [`upsample2`]: each input cell collects its 2x2 patch.
pub fn upsample2_backward<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let (c, h2, w2) = dy.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dyp = dy.plane(ci);
        let dxp = dx.plane_mut(ci);
        for iy in 0..h {
            for ix in 0..w {
                let base = (2 * iy) * w2 + 2 * ix;
                dxp[iy * w + ix] =
                    dyp[base] + dyp[base + 1] + dyp[base + w2] + dyp[base + w2 + 1];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Brute-force convolution used as an independent oracle.
    fn conv_naive<T: Real>(conv: &Conv2d<T>, x: &Tensor<T>) -> Tensor<T> {
        let (h_in, w_in) = (x.height(), x.width());
        let (h_out, w_out) = conv.out_size(h_in, w_in);
        let mut y = Tensor::zeros(conv.c_out, h_out, w_out);
        for oc in 0..conv.c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = conv.b[oc];
                    for ic in 0..conv.c_in {
                        for ky in 0..conv.k {
                            for kx in 0..conv.k {
                                let iy = oy as isize * conv.stride as isize + ky as isize
                                    - conv.pad as isize;
                                let ix = ox as isize * conv.stride as isize + kx as isize
                                    - conv.pad as isize;
                                if iy < 0 || ix < 0 || iy >= h_in as isize || ix >= w_in as isize {
                                    continue;
                                }
                                let wv =
                                    conv.w[((oc * conv.c_in + ic) * conv.k + ky) * conv.k + kx];
                                acc = acc + wv * x.get(ic, iy as usize, ix as usize);
                            }
                        }
                    }
                    y.set(oc, oy, ox, acc);
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut r = rng::stream(3, &[]);
        for (k, stride, pad, h, w) in [
            (3usize, 1usize, 1usize, 7usize, 9usize),
            (3, 2, 1, 8, 8),
            (1, 1, 0, 5, 6),
            (3, 1, 1, 3, 3),
            (3, 2, 1, 7, 5),
        ] {
            let mut conv = Conv2d::<f64>::zeroed(2, 3, k, stride, pad);
            conv.init_fan_in(&mut r);
            for b in conv.b.iter_mut() {
                *b = 0.1;
            }
            let x = Tensor::<f64>::randn(2, h, w, &mut r);
            let fast = conv.forward(&x);
            let slow = conv_naive(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for i in 0..fast.len() {
                assert!(
                    (fast.data()[i] - slow.data()[i]).abs() < 1e-12,
                    "k={k} s={stride} idx={i}"
                );
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut r = rng::stream(4, &[]);
        let mut conv = Conv2d::<f64>::zeroed(2, 2, 3, 1, 1);
        conv.init_fan_in(&mut r);
        let x = Tensor::<f64>::randn(2, 5, 5, &mut r);
        let dy = Tensor::<f64>::randn(2, 5, 5, &mut r);
        let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
            let y = c.forward(x);
            y.data()
                .iter()
                .zip(dy.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut grad = conv.zeros_like();
        let mut dx = Tensor::<f64>::zeros(2, 5, 5);
        conv.backward(&x, &dy, Some(&mut grad), Some(&mut dx));
        let h = 1e-6;
        for wi in [0usize, 7, 16, 35] {
            let mut cp = conv.clone();
            cp.w[wi] += h;
            let up = loss(&cp, &x);
            cp.w[wi] -= 2.0 * h;
            let dn = loss(&cp, &x);
            let fd = (up - dn) / (2.0 * h);
            assert!((grad.w[wi] - fd).abs() < 1e-6, "w[{wi}] {} vs {}", grad.w[wi], fd);
        }
        for xi in [0usize, 12, 24, 49] {
            let mut xp = x.clone();
            xp.data_mut()[xi] += h;
            let up = loss(&conv, &xp);
            xp.data_mut()[xi] -= 2.0 * h;
            let dn = loss(&conv, &xp);
            let fd = (up - dn) / (2.0 * h);
            assert!((dx.data()[xi] - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn groupnorm_normalizes_and_backprops() {
        let mut r = rng::stream(5, &[]);
        let gn = GroupNorm::<f64>::unit(3);
        let x = Tensor::<f64>::randn(3, 4, 4, &mut r).map(|v| v * 2.0 + 0.5);
        let (y, stats) = gn.forward(&x);
        let n = y.len() as f64;
        let mean: f64 = y.data().iter().sum::<f64>() / n;
        let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-3); // eps shifts variance slightly below 1

        let dy = Tensor::<f64>::randn(3, 4, 4, &mut r);
        let mut dx = Tensor::<f64>::zeros(3, 4, 4);
        let mut grad = gn.zeros_like();
        gn.backward(&x, &stats, &dy, Some(&mut grad), Some(&mut dx));
        let loss = |x: &Tensor<f64>| -> f64 {
            let (y, _) = gn.forward(x);
            y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for xi in [0usize, 5, 33, 47] {
            let mut xp = x.clone();
            xp.data_mut()[xi] += h;
            let up = loss(&xp);
            xp.data_mut()[xi] -= 2.0 * h;
            let dn = loss(&xp);
            let fd = (up - dn) / (2.0 * h);
            assert!((dx.data()[xi] - fd).abs() < 1e-6, "x[{xi}]");
        }
    }

    #[test]
    fn upsample_round_trip_shapes() {
        let mut r = rng::stream(6, &[]);
        let x = Tensor::<f64>::randn(2, 3, 5, &mut r);
        let y = upsample2(&x);
        assert_eq!(y.shape(), (2, 6, 10));
        assert_eq!(y.get(0, 0, 0), x.get(0, 0, 0));
        assert_eq!(y.get(0, 5, 9), x.get(0, 2, 4));
        let dx = upsample2_backward(&y);
        for i in 0..x.len() {
            assert!((dx.data()[i] - 4.0 * x.data()[i]).abs() < 1e-12);
        }
    }
}
