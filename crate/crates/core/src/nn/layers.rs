//! Forward/backward kernels for the layers used by the U-Net.

use super::params::{Grads, Init, LayoutBuilder, ParamId, ParamStore};
use super::tensor::{gemm, Act, MatMut, MatRef, Real};

/// Upper bound on im2col buffer elements; larger batches are processed in
/// sample chunks.
const COL_BUDGET: usize = 1 << 23;

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).fast_exp())
}

pub(crate) fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

pub(crate) fn silu_grad<T: Real>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

/// `dy * silu'(x)` elementwise.
pub(crate) fn silu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter().zip(dy).map(|(&x, &d)| d * silu_grad(x)).collect()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub(crate) fn new(
        b: &mut LayoutBuilder,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        zero_init: bool,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let init = if zero_init { Init::Zeros } else { Init::FanIn(fan_in) };
        let weight = b.add(format!("{name}.weight"), &[c_out, c_in, kernel, kernel], init);
        let bias = b.add(format!("{name}.bias"), &[c_out], Init::Zeros);
        Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
            stride,
            pad: kernel / 2,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    fn chunk(&self, x: &Act<impl Real>) -> usize {
        let (ho, wo) = self.out_hw(x.h, x.w);
        let per_sample = self.c_in * self.kernel * self.kernel * ho * wo;
        (COL_BUDGET / per_sample.max(1)).clamp(1, x.n.max(1))
    }

    /// im2col for samples `n0..n0+nc`: rows (ci, ky, kx), cols (n, oy, ox).
    fn im2col<T: Real>(&self, x: &Act<T>, n0: usize, nc: usize, col: &mut Vec<T>) {
        let (ho, wo) = self.out_hw(x.h, x.w);
        let k = self.kernel;
        let cols = nc * ho * wo;
        col.clear();
        col.resize(self.c_in * k * k * cols, T::zero());
        let plane = x.plane();
        let hw = x.hw();
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for dn in 0..nc {
                        let src = &x.data[ci * plane + (n0 + dn) * hw..][..hw];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            let out_row = &mut dst[(dn * ho + oy) * wo..][..wo];
                            if iy < 0 || iy >= x.h as isize {
                                out_row.fill(T::zero());
                                continue;
                            }
                            let src_row = &src[iy as usize * x.w..][..x.w];
                            if self.stride == 1 {
                                // valid ox satisfy 0 <= ox + kx - pad < w
                                let lo = self.pad.saturating_sub(kx).min(wo);
                                let hi = (x.w + self.pad).saturating_sub(kx).clamp(lo, wo);
                                out_row[..lo].fill(T::zero());
                                out_row[hi..].fill(T::zero());
                                let start = lo + kx - self.pad;
                                out_row[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                                continue;
                            }
                            for (ox, o) in out_row.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                *o = if ix < 0 || ix >= x.w as isize {
                                    T::zero()
                                } else {
                                    src_row[ix as usize]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], dx: &mut Act<T>, n0: usize, nc: usize) {
        let (ho, wo) = self.out_hw(dx.h, dx.w);
        let k = self.kernel;
        let cols = nc * ho * wo;
        let plane = dx.plane();
        let (h, w, hw) = (dx.h, dx.w, dx.hw());
        for ci in 0..self.c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * cols..(row + 1) * cols];
                    for dn in 0..nc {
                        let dst = &mut dx.data[ci * plane + (n0 + dn) * hw..][..hw];
                        for oy in 0..ho {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = &mut dst[iy as usize * w..][..w];
                            let src_row = &src[(dn * ho + oy) * wo..][..wo];
                            if self.stride == 1 {
                                let lo = self.pad.saturating_sub(kx).min(wo);
                                let hi = (w + self.pad).saturating_sub(kx).clamp(lo, wo);
                                let start = lo + kx - self.pad;
                                for (d, &v) in dst_row[start..start + hi - lo].iter_mut().zip(&src_row[lo..hi]) {
                                    *d += v;
                                }
                                continue;
                            }
                            for (ox, &v) in src_row.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst_row[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Act<T>) -> Act<T> {
        assert_eq!(x.c, self.c_in, "conv input channels");
        let (ho, wo) = self.out_hw(x.h, x.w);
        let mut out = Act::zeros(self.c_out, x.n, ho, wo);
        let out_plane = out.plane();
        let kk = self.c_in * self.kernel * self.kernel;
        let weight = MatRef::row_major(p.get(self.weight), self.c_out, kk);
        let chunk = self.chunk(x);
        let mut col = Vec::new();
        for n0 in (0..x.n).step_by(chunk) {
            let nc = chunk.min(x.n - n0);
            let cols = nc * ho * wo;
            let dst = MatMut::strided(&mut out.data[n0 * ho * wo..], self.c_out, cols, out_plane);
            if self.is_pointwise() {
                let src = MatRef::strided(&x.data[n0 * x.hw()..], self.c_in, cols, x.plane());
                gemm(T::one(), weight, src, T::zero(), dst);
            } else {
                self.im2col(x, n0, nc, &mut col);
                gemm(T::one(), weight, MatRef::row_major(&col, kk, cols), T::zero(), dst);
            }
        }
        let bias = p.get(self.bias);
        for (co, &b) in bias.iter().enumerate() {
            if b != T::zero() {
                for v in &mut out.data[co * out_plane..(co + 1) * out_plane] {
                    *v += b;
                }
            }
        }
        out
    }

    /// Accumulates weight/bias gradients; returns the input gradient.
    pub fn backward<T: Real>(&self, p: &ParamStore<T>, x: &Act<T>, dout: &Act<T>, g: &mut Grads<T>) -> Act<T> {
        let (ho, wo) = self.out_hw(x.h, x.w);
        assert_eq!((dout.c, dout.n, dout.h, dout.w), (self.c_out, x.n, ho, wo), "conv dout");
        let out_plane = dout.plane();
        let kk = self.c_in * self.kernel * self.kernel;
        {
            let db = g.get_mut(self.bias);
            for (co, d) in db.iter_mut().enumerate() {
                *d += dout.data[co * out_plane..(co + 1) * out_plane]
                    .iter()
                    .copied()
                    .sum::<T>();
            }
        }
        let mut dx = Act::zeros(x.c, x.n, x.h, x.w);
        let weight = MatRef::row_major(p.get(self.weight), self.c_out, kk);
        let chunk = self.chunk(x);
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        for n0 in (0..x.n).step_by(chunk) {
            let nc = chunk.min(x.n - n0);
            let cols = nc * ho * wo;
            let dy = MatRef::strided(&dout.data[n0 * ho * wo..], self.c_out, cols, out_plane);
            if self.is_pointwise() {
                let src = MatRef::strided(&x.data[n0 * x.hw()..], self.c_in, cols, x.plane());
                let dw = MatMut::row_major(g.get_mut(self.weight), self.c_out, kk);
                gemm(T::one(), dy, src.t(), T::one(), dw);
                let dst = MatMut::strided(&mut dx.data[n0 * x.hw()..], self.c_in, cols, x.plane());
                gemm(T::one(), weight.t(), dy, T::zero(), dst);
            } else {
                self.im2col(x, n0, nc, &mut col);
                let dw = MatMut::row_major(g.get_mut(self.weight), self.c_out, kk);
                gemm(T::one(), dy, MatRef::row_major(&col, kk, cols).t(), T::one(), dw);
                dcol.clear();
                dcol.resize(kk * cols, T::zero());
                gemm(
                    T::one(),
                    weight.t(),
                    dy,
                    T::zero(),
                    MatMut::row_major(&mut dcol, kk, cols),
                );
                self.col2im(&dcol, &mut dx, n0, nc);
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub groups: usize,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct GnCache<T> {
    xhat: Act<T>,
    /// 1/std per (sample, group), indexed `n * groups + g`.
    rstd: Vec<T>,
}

impl GroupNorm {
    pub(crate) fn new(b: &mut LayoutBuilder, name: &str, channels: usize, groups: usize) -> Self {
        assert!(
            groups > 0 && channels.is_multiple_of(groups),
            "{name}: {channels} channels not divisible by {groups} groups"
        );
        Self {
            gamma: b.add(format!("{name}.gamma"), &[channels], Init::Ones),
            beta: b.add(format!("{name}.beta"), &[channels], Init::Zeros),
            channels,
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Act<T>) -> (Act<T>, GnCache<T>) {
        assert_eq!(x.c, self.channels, "groupnorm channels");
        let cpg = self.channels / self.groups;
        let (plane, hw) = (x.plane(), x.hw());
        let count = (cpg * hw) as f64;
        let mut xhat = Act::zeros(x.c, x.n, x.h, x.w);
        let mut out = Act::zeros(x.c, x.n, x.h, x.w);
        let mut rstd = vec![T::zero(); x.n * self.groups];
        let (gamma, beta) = (p.get(self.gamma), p.get(self.beta));
        for n in 0..x.n {
            for grp in 0..self.groups {
                let chans = grp * cpg..(grp + 1) * cpg;
                let mut sum = 0.0;
                for c in chans.clone() {
                    sum += x.data[c * plane + n * hw..][..hw]
                        .iter()
                        .map(|v| v.to_f64().unwrap())
                        .sum::<f64>();
                }
                let mean = sum / count;
                let mut var = 0.0;
                for c in chans.clone() {
                    var += x.data[c * plane + n * hw..][..hw]
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let r = 1.0 / (var / count + self.eps).sqrt();
                rstd[n * self.groups + grp] = T::lit(r);
                let (mean_t, r_t) = (T::lit(mean), T::lit(r));
                for c in chans {
                    let off = c * plane + n * hw;
                    for i in off..off + hw {
                        let xh = (x.data[i] - mean_t) * r_t;
                        xhat.data[i] = xh;
                        out.data[i] = xh * gamma[c] + beta[c];
                    }
                }
            }
        }
        (out, GnCache { xhat, rstd })
    }

    pub fn backward<T: Real>(&self, p: &ParamStore<T>, cache: &GnCache<T>, dout: &Act<T>, g: &mut Grads<T>) -> Act<T> {
        let xhat = &cache.xhat;
        assert!(xhat.same_shape(dout), "groupnorm dout");
        let cpg = self.channels / self.groups;
        let (plane, hw) = (xhat.plane(), xhat.hw());
        let gamma = p.get(self.gamma);
        let mut dgamma = vec![T::zero(); self.channels];
        let mut dbeta = vec![T::zero(); self.channels];
        for c in 0..self.channels {
            let d = &dout.data[c * plane..(c + 1) * plane];
            let xh = &xhat.data[c * plane..(c + 1) * plane];
            dgamma[c] = d.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
            dbeta[c] = d.iter().copied().sum::<T>();
        }
        for (acc, v) in g.get_mut(self.gamma).iter_mut().zip(dgamma) {
            *acc += v;
        }
        for (acc, v) in g.get_mut(self.beta).iter_mut().zip(dbeta) {
            *acc += v;
        }
        let mut dx = Act::zeros(xhat.c, xhat.n, xhat.h, xhat.w);
        let inv_count = T::lit(1.0 / (cpg * hw) as f64);
        for n in 0..xhat.n {
            for grp in 0..self.groups {
                let chans = grp * cpg..(grp + 1) * cpg;
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for c in chans.clone() {
                    let off = c * plane + n * hw;
                    for i in off..off + hw {
                        let dxh = dout.data[i] * gamma[c];
                        m1 += dxh;
                        m2 += dxh * xhat.data[i];
                    }
                }
                m1 *= inv_count;
                m2 *= inv_count;
                let r = cache.rstd[n * self.groups + grp];
                for c in chans {
                    let off = c * plane + n * hw;
                    for i in off..off + hw {
                        let dxh = dout.data[i] * gamma[c];
                        dx.data[i] = r * (dxh - m1 - xhat.data[i] * m2);
                    }
                }
            }
        }
        dx
    }
}

/// Dense layer on row-major `[N, in]` matrices.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub(crate) fn new(b: &mut LayoutBuilder, name: &str, d_in: usize, d_out: usize) -> Self {
        Self {
            weight: b.add(format!("{name}.weight"), &[d_out, d_in], Init::FanIn(d_in)),
            bias: b.add(format!("{name}.bias"), &[d_out], Init::Zeros),
            d_in,
            d_out,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &[T], n: usize) -> Vec<T> {
        assert_eq!(x.len(), n * self.d_in, "linear input");
        let mut out = Vec::with_capacity(n * self.d_out);
        for _ in 0..n {
            out.extend_from_slice(p.get(self.bias));
        }
        gemm(
            T::one(),
            MatRef::row_major(x, n, self.d_in),
            MatRef::row_major(p.get(self.weight), self.d_out, self.d_in).t(),
            T::one(),
            MatMut::row_major(&mut out, n, self.d_out),
        );
        out
    }

    pub fn backward<T: Real>(&self, p: &ParamStore<T>, x: &[T], dout: &[T], n: usize, g: &mut Grads<T>) -> Vec<T> {
        assert_eq!(dout.len(), n * self.d_out, "linear dout");
        let dy = MatRef::row_major(dout, n, self.d_out);
        gemm(
            T::one(),
            dy.t(),
            MatRef::row_major(x, n, self.d_in),
            T::one(),
            MatMut::row_major(g.get_mut(self.weight), self.d_out, self.d_in),
        );
        let db = g.get_mut(self.bias);
        for row in dout.chunks_exact(self.d_out) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        let mut dx = vec![T::zero(); n * self.d_in];
        gemm(
            T::one(),
            dy,
            MatRef::row_major(p.get(self.weight), self.d_out, self.d_in),
            T::zero(),
            MatMut::row_major(&mut dx, n, self.d_in),
        );
        dx
    }
}

pub(crate) fn upsample_nearest<T: Real>(x: &Act<T>) -> Act<T> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Act::zeros(x.c, x.n, h2, w2);
    for (src, dst) in x.data.chunks_exact(x.hw()).zip(out.data.chunks_exact_mut(h2 * w2)) {
        for y in 0..h2 {
            for xx in 0..w2 {
                dst[y * w2 + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest_backward<T: Real>(dout: &Act<T>) -> Act<T> {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut dx = Act::zeros(dout.c, dout.n, h, w);
    for (src, dst) in dout.data.chunks_exact(dout.hw()).zip(dx.data.chunks_exact_mut(h * w)) {
        for y in 0..dout.h {
            for xx in 0..dout.w {
                dst[(y / 2) * w + xx / 2] += src[y * dout.w + xx];
            }
        }
    }
    dx
}

/// Sinusoidal timestep features, `[N, dim]` row-major.
pub(crate) fn timestep_embedding<T: Real>(t: &[usize], dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut out = vec![T::zero(); t.len() * dim];
    for (row, &step) in out.chunks_exact_mut(dim).zip(t) {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let arg = step as f64 * freq;
            row[i] = T::lit(arg.sin());
            row[half + i] = T::lit(arg.cos());
        }
    }
    out
}

/// Pre-norm multi-head self-attention over spatial positions, residual.
#[derive(Debug, Clone)]
pub struct Attention {
    pub norm: GroupNorm,
    pub qkv: Conv2d,
    pub proj: Conv2d,
    pub heads: usize,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct AttnCache<T> {
    gn: GnCache<T>,
    normed: Act<T>,
    qkv: Act<T>,
    attended: Act<T>,
}

impl Attention {
    pub(crate) fn new(b: &mut LayoutBuilder, name: &str, channels: usize, heads: usize, groups: usize) -> Self {
        assert!(
            heads > 0 && channels.is_multiple_of(heads),
            "{name}: {channels} channels not divisible by {heads} heads"
        );
        Self {
            norm: GroupNorm::new(b, &format!("{name}.norm"), channels, groups),
            qkv: Conv2d::new(b, &format!("{name}.qkv"), channels, 3 * channels, 1, 1, false),
            proj: Conv2d::new(b, &format!("{name}.proj"), channels, channels, 1, 1, false),
            heads,
            channels,
        }
    }

    fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    /// Row-softmaxed `[hw, hw]` attention weights of head `h`, sample `n`.
    fn weights<T: Real>(&self, qkv: &Act<T>, n: usize, h: usize, probs: &mut Vec<T>) {
        let (d, hw, plane) = (self.head_dim(), qkv.hw(), qkv.plane());
        let q = MatRef::strided(&qkv.data[(h * d) * plane + n * hw..], d, hw, plane);
        let k = MatRef::strided(&qkv.data[(self.channels + h * d) * plane + n * hw..], d, hw, plane);
        probs.clear();
        probs.resize(hw * hw, T::zero());
        let scale = T::lit(1.0 / (d as f64).sqrt());
        gemm(scale, q.t(), k, T::zero(), MatMut::row_major(probs, hw, hw));
        for row in probs.chunks_exact_mut(hw) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            // separate passes so the exp loop vectorizes
            for v in row.iter_mut() {
                *v = (*v - max).fast_exp();
            }
            let sum = row.iter().copied().sum::<T>();
            let inv = T::one() / sum;
            for v in row.iter_mut() {
                *v *= inv;
            }
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamStore<T>, x: &Act<T>) -> (Act<T>, AttnCache<T>) {
        let (normed, gn) = self.norm.forward(p, x);
        let qkv = self.qkv.forward(p, &normed);
        let (d, hw, plane) = (self.head_dim(), x.hw(), x.plane());
        let mut attended = Act::zeros(x.c, x.n, x.h, x.w);
        let mut probs = Vec::new();
        for n in 0..x.n {
            for h in 0..self.heads {
                self.weights(&qkv, n, h, &mut probs);
                let v = MatRef::strided(&qkv.data[(2 * self.channels + h * d) * plane + n * hw..], d, hw, plane);
                let o = MatMut::strided(&mut attended.data[(h * d) * plane + n * hw..], d, hw, plane);
                // o = v * P^T
                gemm(T::one(), v, MatRef::row_major(&probs, hw, hw).t(), T::zero(), o);
            }
        }
        let mut out = self.proj.forward(p, &attended);
        out.add_assign(x);
        (
            out,
            AttnCache {
                gn,
                normed,
                qkv,
                attended,
            },
        )
    }

    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &AttnCache<T>,
        dout: &Act<T>,
        g: &mut Grads<T>,
    ) -> Act<T> {
        let d_att = self.proj.backward(p, &cache.attended, dout, g);
        let qkv = &cache.qkv;
        let (d, hw, plane) = (self.head_dim(), qkv.hw(), qkv.plane());
        let c = self.channels;
        let mut dqkv = Act::zeros(qkv.c, qkv.n, qkv.h, qkv.w);
        let scale = T::lit(1.0 / (d as f64).sqrt());
        let mut probs = Vec::new();
        let mut dprobs = vec![T::zero(); hw * hw];
        for n in 0..qkv.n {
            for h in 0..self.heads {
                self.weights(qkv, n, h, &mut probs);
                let off = |base: usize| base * plane + n * hw;
                let q = MatRef::strided(&qkv.data[off(h * d)..], d, hw, plane);
                let k = MatRef::strided(&qkv.data[off(c + h * d)..], d, hw, plane);
                let v = MatRef::strided(&qkv.data[off(2 * c + h * d)..], d, hw, plane);
                let dout_h = MatRef::strided(&d_att.data[off(h * d)..], d, hw, plane);
                let p_mat = MatRef::row_major(&probs, hw, hw);
                // dv = dO * P
                gemm(
                    T::one(),
                    dout_h,
                    p_mat,
                    T::zero(),
                    MatMut::strided(&mut dqkv.data[off(2 * c + h * d)..], d, hw, plane),
                );
                // dP = dO^T * v
                gemm(
                    T::one(),
                    dout_h.t(),
                    v,
                    T::zero(),
                    MatMut::row_major(&mut dprobs, hw, hw),
                );
                // dS = P * (dP - rowsum(dP * P))
                for (prow, drow) in probs.chunks_exact(hw).zip(dprobs.chunks_exact_mut(hw)) {
                    let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                    for (dv, &pv) in drow.iter_mut().zip(prow) {
                        *dv = pv * (*dv - dot);
                    }
                }
                let ds = MatRef::row_major(&dprobs, hw, hw);
                // dq = scale * k * dS^T ; dk = scale * q * dS
                gemm(
                    scale,
                    k,
                    ds.t(),
                    T::zero(),
                    MatMut::strided(&mut dqkv.data[off(h * d)..], d, hw, plane),
                );
                gemm(
                    scale,
                    q,
                    ds,
                    T::zero(),
                    MatMut::strided(&mut dqkv.data[off(c + h * d)..], d, hw, plane),
                );
            }
        }
        let dnormed = self.qkv.backward(p, &cache.normed, &dqkv, g);
        let mut dx = self.norm.backward(p, &cache.gn, &dnormed, g);
        dx.add_assign(dout);
        dx
    }
}
