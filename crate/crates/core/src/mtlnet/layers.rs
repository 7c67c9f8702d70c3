//! Network layers with explicit forward caches and reverse-mode backward passes.
//!
//! Feature maps are channels-last: a `t x f x c` map is stored as `t*f` rows
//! of `c` values.

use rand::Rng;

use super::tensor::{add_col_sums, add_row_bias, gemm, matmul, Real, Tensor};

#[inline]
pub fn elu<T: Real>(x: T) -> T {
    x.elu()
}

/// Derivative of ELU expressed through its output.
#[inline]
pub fn elu_grad_from_output<T: Real>(y: T) -> T {
    if y > T::zero() {
        T::one()
    } else {
        y + T::one()
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn uniform<T: Real, R: Rng>(rng: &mut R, shape: &[usize], limit: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.random_range(-limit..=limit))).collect();
    Tensor { shape: shape.to_vec(), data }
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng>(rng: &mut R, n_in: usize, n_out: usize) -> Self {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        Self { w: uniform(rng, &[n_in, n_out], limit), b: Tensor::zeros(&[n_out]) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: Tensor::zeros(&self.w.shape), b: Tensor::zeros(&self.b.shape) }
    }

    pub fn n_in(&self) -> usize {
        self.w.shape[0]
    }

    pub fn n_out(&self) -> usize {
        self.w.shape[1]
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        let mut y = matmul(x, (rows, self.n_in()), false, &self.w.data, (self.n_in(), self.n_out()), false);
        add_row_bias(&mut y, &self.b.data);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[T], dy: &[T], rows: usize, grad: &mut Self) -> Vec<T> {
        let (n_in, n_out) = (self.n_in(), self.n_out());
        gemm(x, (rows, n_in), true, dy, (rows, n_out), false, T::one(), &mut grad.w.data);
        add_col_sums(dy, &mut grad.b.data);
        matmul(dy, (rows, n_out), false, &self.w.data, (n_in, n_out), true)
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<T>); 2] {
        [("w", &self.w), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.w, &mut self.b]
    }
}

/// 3x3 'same' convolution followed by ELU.
#[derive(Debug, Clone)]
pub struct Conv<T> {
    /// `[9 * c_in, c_out]`, rows ordered (dt, df, c_in).
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

pub struct ConvCache<T> {
    cols: Vec<T>,
    y: Vec<T>,
}

impl<T> ConvCache<T> {
    pub fn output(&self) -> &[T] {
        &self.y
    }

    pub fn into_output(self) -> Vec<T> {
        self.y
    }
}

const K: usize = 3;

/// Source bin range `[lo, hi)` covered by a 3-wide kernel centred on `fi`,
/// and the kernel offset of `lo`.
#[inline]
fn kernel_span(fi: usize, f: usize) -> (usize, usize, usize) {
    let lo = fi.saturating_sub(1);
    let hi = (fi + 2).min(f);
    (lo, hi, lo + 1 - fi)
}

fn im2col<T: Real>(x: &[T], t: usize, f: usize, c: usize) -> Vec<T> {
    let mut cols = Vec::with_capacity(t * f * K * K * c);
    for ti in 0..t {
        for fi in 0..f {
            let (lo, hi, off) = kernel_span(fi, f);
            for dt in 0..K {
                let st = ti as isize + dt as isize - 1;
                if st < 0 || st >= t as isize {
                    cols.resize(cols.len() + K * c, T::zero());
                    continue;
                }
                let row = st as usize * f * c;
                cols.resize(cols.len() + off * c, T::zero());
                cols.extend_from_slice(&x[row + lo * c..row + hi * c]);
                cols.resize(cols.len() + (K - off - (hi - lo)) * c, T::zero());
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], t: usize, f: usize, c: usize) -> Vec<T> {
    let width = K * K * c;
    let mut x = vec![T::zero(); t * f * c];
    for ti in 0..t {
        for dt in 0..K {
            let st = ti as isize + dt as isize - 1;
            if st < 0 || st >= t as isize {
                continue;
            }
            let dst_row = &mut x[st as usize * f * c..(st as usize + 1) * f * c];
            for fi in 0..f {
                let (lo, hi, off) = kernel_span(fi, f);
                let src = (ti * f + fi) * width + (dt * K + off) * c;
                for (d, s) in dst_row[lo * c..hi * c].iter_mut().zip(&cols[src..src + (hi - lo) * c]) {
                    *d += *s;
                }
            }
        }
    }
    x
}

impl<T: Real> Conv<T> {
    pub fn new<R: Rng>(rng: &mut R, c_in: usize, c_out: usize) -> Self {
        let limit = (6.0 / (K * K * c_in) as f64).sqrt();
        Self { w: uniform(rng, &[K * K * c_in, c_out], limit), b: Tensor::zeros(&[c_out]) }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: Tensor::zeros(&self.w.shape), b: Tensor::zeros(&self.b.shape) }
    }

    pub fn c_in(&self) -> usize {
        self.w.shape[0] / (K * K)
    }

    pub fn c_out(&self) -> usize {
        self.w.shape[1]
    }

    pub fn forward(&self, x: &[T], t: usize, f: usize) -> ConvCache<T> {
        let cols = im2col(x, t, f, self.c_in());
        let mut y = matmul(&cols, (t * f, K * K * self.c_in()), false, &self.w.data, (K * K * self.c_in(), self.c_out()), false);
        add_row_bias(&mut y, &self.b.data);
        y.iter_mut().for_each(|v| *v = elu(*v));
        ConvCache { cols, y }
    }

    /// Consumes `dy` (gradient w.r.t. the post-ELU output). Returns `dL/dx`
    /// when `need_dx` is set.
    pub fn backward(&self, cache: &ConvCache<T>, mut dy: Vec<T>, t: usize, f: usize, grad: &mut Self, need_dx: bool) -> Option<Vec<T>> {
        let width = K * K * self.c_in();
        let c_out = self.c_out();
        for (d, y) in dy.iter_mut().zip(&cache.y) {
            *d *= elu_grad_from_output(*y);
        }
        gemm(&cache.cols, (t * f, width), true, &dy, (t * f, c_out), false, T::one(), &mut grad.w.data);
        add_col_sums(&dy, &mut grad.b.data);
        if !need_dx {
            return None;
        }
        let dcols = matmul(&dy, (t * f, c_out), false, &self.w.data, (width, c_out), true);
        Some(col2im(&dcols, t, f, self.c_in()))
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<T>); 2] {
        [("w", &self.w), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 2] {
        [&mut self.w, &mut self.b]
    }
}

/// 1x2 ceil-mode max pooling along frequency. Returns the pooled map and the
/// flat source index of every output cell.
pub fn pool_freq<T: Real>(x: &[T], t: usize, f: usize, c: usize) -> (Vec<T>, Vec<u32>) {
    let fo = f.div_ceil(2);
    let mut y = Vec::with_capacity(t * fo * c);
    let mut arg = Vec::with_capacity(t * fo * c);
    for ti in 0..t {
        for fi in 0..fo {
            let a = (ti * f + 2 * fi) * c;
            let second = 2 * fi + 1 < f;
            for ci in 0..c {
                let mut best = a + ci;
                if second && x[a + c + ci] > x[best] {
                    best = a + c + ci;
                }
                y.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (y, arg)
}

pub fn unpool_freq<T: Real>(dy: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (d, &i) in dy.iter().zip(arg) {
        dx[i as usize] += *d;
    }
    dx
}

/// Unidirectional LSTM with gate order (i, f, g, o).
#[derive(Debug, Clone)]
pub struct Lstm<T> {
    pub wx: Tensor<T>,
    pub wh: Tensor<T>,
    pub b: Tensor<T>,
}

pub struct LstmCache<T> {
    x: Vec<T>,
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
    steps: usize,
}

impl<T> LstmCache<T> {
    pub fn hidden(&self) -> &[T] {
        &self.h
    }
}

impl<T: Real> Lstm<T> {
    pub fn new<R: Rng>(rng: &mut R, n_in: usize, units: usize) -> Self {
        let lx = (6.0 / (n_in + 4 * units) as f64).sqrt();
        let lh = 1.0 / (units as f64).sqrt();
        let mut b = Tensor::zeros(&[4 * units]);
        b.data[units..2 * units].iter_mut().for_each(|v| *v = T::one());
        Self { wx: uniform(rng, &[n_in, 4 * units], lx), wh: uniform(rng, &[units, 4 * units], lh), b }
    }

    pub fn zeros_like(&self) -> Self {
        Self { wx: Tensor::zeros(&self.wx.shape), wh: Tensor::zeros(&self.wh.shape), b: Tensor::zeros(&self.b.shape) }
    }

    pub fn units(&self) -> usize {
        self.wh.shape[0]
    }

    pub fn n_in(&self) -> usize {
        self.wx.shape[0]
    }

    pub fn forward(&self, x: Vec<T>, steps: usize) -> LstmCache<T> {
        let h_n = self.units();
        let g_n = 4 * h_n;
        let mut gates = matmul(&x, (steps, self.n_in()), false, &self.wx.data, (self.n_in(), g_n), false);
        add_row_bias(&mut gates, &self.b.data);
        let mut c = vec![T::zero(); steps * h_n];
        let mut tanh_c = vec![T::zero(); steps * h_n];
        let mut h = vec![T::zero(); steps * h_n];
        for s in 0..steps {
            if s > 0 {
                let (prev, _) = h.split_at(s * h_n);
                let h_prev = &prev[(s - 1) * h_n..];
                gemm(h_prev, (1, h_n), false, &self.wh.data, (h_n, g_n), false, T::one(), &mut gates[s * g_n..(s + 1) * g_n]);
            }
            let g = &mut gates[s * g_n..(s + 1) * g_n];
            for j in 0..h_n {
                g[j] = sigmoid(g[j]);
                g[h_n + j] = sigmoid(g[h_n + j]);
                g[2 * h_n + j] = g[2 * h_n + j].tanh();
                g[3 * h_n + j] = sigmoid(g[3 * h_n + j]);
                let c_prev = if s > 0 { c[(s - 1) * h_n + j] } else { T::zero() };
                let cv = g[h_n + j] * c_prev + g[j] * g[2 * h_n + j];
                c[s * h_n + j] = cv;
                let tc = cv.tanh();
                tanh_c[s * h_n + j] = tc;
                h[s * h_n + j] = g[3 * h_n + j] * tc;
            }
        }
        LstmCache { x, gates, c, tanh_c, h, steps }
    }

    pub fn backward(&self, cache: &LstmCache<T>, dh_out: &[T], grad: &mut Self) -> Vec<T> {
        let h_n = self.units();
        let g_n = 4 * h_n;
        let steps = cache.steps;
        let mut dgates = vec![T::zero(); steps * g_n];
        let mut dh_next = vec![T::zero(); h_n];
        let mut dc_next = vec![T::zero(); h_n];
        for s in (0..steps).rev() {
            let g = &cache.gates[s * g_n..(s + 1) * g_n];
            let dg = &mut dgates[s * g_n..(s + 1) * g_n];
            for j in 0..h_n {
                let dh = dh_out[s * h_n + j] + dh_next[j];
                let (i, fg, gg, o) = (g[j], g[h_n + j], g[2 * h_n + j], g[3 * h_n + j]);
                let tc = cache.tanh_c[s * h_n + j];
                let dc = dc_next[j] + dh * o * (T::one() - tc * tc);
                let c_prev = if s > 0 { cache.c[(s - 1) * h_n + j] } else { T::zero() };
                dg[j] = dc * gg * i * (T::one() - i);
                dg[h_n + j] = dc * c_prev * fg * (T::one() - fg);
                dg[2 * h_n + j] = dc * i * (T::one() - gg * gg);
                dg[3 * h_n + j] = dh * tc * o * (T::one() - o);
                dc_next[j] = dc * fg;
            }
            if s > 0 {
                dh_next = matmul(dg, (1, g_n), false, &self.wh.data, (h_n, g_n), true);
            }
        }
        if steps > 1 {
            gemm(&cache.h[..(steps - 1) * h_n], (steps - 1, h_n), true, &dgates[g_n..], (steps - 1, g_n), false, T::one(), &mut grad.wh.data);
        }
        gemm(&cache.x, (steps, self.n_in()), true, &dgates, (steps, g_n), false, T::one(), &mut grad.wx.data);
        add_col_sums(&dgates, &mut grad.b.data);
        matmul(&dgates, (steps, g_n), false, &self.wx.data, (self.n_in(), g_n), true)
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<T>); 3] {
        [("wx", &self.wx), ("wh", &self.wh), ("b", &self.b)]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 3] {
        [&mut self.wx, &mut self.wh, &mut self.b]
    }
}

/// Reverses the row order of a `rows x width` matrix.
pub fn reverse_rows<T: Copy>(x: &[T], width: usize) -> Vec<T> {
    x.chunks_exact(width).rev().flatten().copied().collect()
}

/// Single-head scaled dot-product self-attention over time with a residual
/// connection and layer normalization.
#[derive(Debug, Clone)]
pub struct Attention<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln_g: Tensor<T>,
    pub ln_b: Tensor<T>,
}

pub struct AttentionCache<T> {
    x: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    a: Vec<T>,
    ctx: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    y: Vec<T>,
    steps: usize,
}

impl<T> AttentionCache<T> {
    pub fn output(&self) -> &[T] {
        &self.y
    }

    pub fn weights(&self) -> &[T] {
        &self.a
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Real> Attention<T> {
    pub fn new<R: Rng>(rng: &mut R, d_model: usize, d_att: usize) -> Self {
        let l = (6.0 / (d_model + d_att) as f64).sqrt();
        Self {
            wq: uniform(rng, &[d_model, d_att], l),
            wk: uniform(rng, &[d_model, d_att], l),
            wv: uniform(rng, &[d_model, d_att], l),
            wo: uniform(rng, &[d_att, d_model], l),
            bo: Tensor::zeros(&[d_model]),
            ln_g: Tensor::filled(&[d_model], T::one()),
            ln_b: Tensor::zeros(&[d_model]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            wq: Tensor::zeros(&self.wq.shape),
            wk: Tensor::zeros(&self.wk.shape),
            wv: Tensor::zeros(&self.wv.shape),
            wo: Tensor::zeros(&self.wo.shape),
            bo: Tensor::zeros(&self.bo.shape),
            ln_g: Tensor::zeros(&self.ln_g.shape),
            ln_b: Tensor::zeros(&self.ln_b.shape),
        }
    }

    pub fn d_model(&self) -> usize {
        self.wq.shape[0]
    }

    pub fn d_att(&self) -> usize {
        self.wq.shape[1]
    }

    pub fn forward(&self, x: Vec<T>, steps: usize) -> AttentionCache<T> {
        let (dm, da) = (self.d_model(), self.d_att());
        let q = matmul(&x, (steps, dm), false, &self.wq.data, (dm, da), false);
        let k = matmul(&x, (steps, dm), false, &self.wk.data, (dm, da), false);
        let v = matmul(&x, (steps, dm), false, &self.wv.data, (dm, da), false);
        let scale = T::one() / T::lit(da as f64).sqrt();
        let mut a = matmul(&q, (steps, da), false, &k, (steps, da), true);
        for row in a.chunks_exact_mut(steps) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max) * scale;
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v * scale - mx).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let ctx = matmul(&a, (steps, steps), false, &v, (steps, da), false);
        let mut r = matmul(&ctx, (steps, da), false, &self.wo.data, (da, dm), false);
        add_row_bias(&mut r, &self.bo.data);
        for (rv, xv) in r.iter_mut().zip(&x) {
            *rv += *xv;
        }
        let n = T::lit(dm as f64);
        let eps = T::lit(LAYER_NORM_EPS);
        let mut inv_std = Vec::with_capacity(steps);
        let mut y = vec![T::zero(); steps * dm];
        for (s, row) in r.chunks_exact_mut(dm).enumerate() {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * is;
                y[s * dm + j] = *v * self.ln_g.data[j] + self.ln_b.data[j];
            }
        }
        AttentionCache { x, q, k, v, a, ctx, xhat: r, inv_std, y, steps }
    }

    pub fn backward(&self, cache: &AttentionCache<T>, dy: &[T], grad: &mut Self) -> Vec<T> {
        let (dm, da, steps) = (self.d_model(), self.d_att(), cache.steps);
        let n = T::lit(dm as f64);
        let mut dr = vec![T::zero(); steps * dm];
        for s in 0..steps {
            let xh = &cache.xhat[s * dm..(s + 1) * dm];
            let dyr = &dy[s * dm..(s + 1) * dm];
            let mut mean_d = T::zero();
            let mut mean_dx = T::zero();
            for j in 0..dm {
                grad.ln_g.data[j] += dyr[j] * xh[j];
                grad.ln_b.data[j] += dyr[j];
                let dxh = dyr[j] * self.ln_g.data[j];
                mean_d += dxh;
                mean_dx += dxh * xh[j];
            }
            mean_d /= n;
            mean_dx /= n;
            for j in 0..dm {
                let dxh = dyr[j] * self.ln_g.data[j];
                dr[s * dm + j] = cache.inv_std[s] * (dxh - mean_d - xh[j] * mean_dx);
            }
        }
        gemm(&cache.ctx, (steps, da), true, &dr, (steps, dm), false, T::one(), &mut grad.wo.data);
        add_col_sums(&dr, &mut grad.bo.data);
        let dctx = matmul(&dr, (steps, dm), false, &self.wo.data, (da, dm), true);
        let mut ds = matmul(&dctx, (steps, da), false, &cache.v, (steps, da), true);
        let dv = matmul(&cache.a, (steps, steps), true, &dctx, (steps, da), false);
        let scale = T::one() / T::lit(da as f64).sqrt();
        for (row_d, row_a) in ds.chunks_exact_mut(steps).zip(cache.a.chunks_exact(steps)) {
            let dot: T = row_d.iter().zip(row_a).map(|(d, a)| *d * *a).sum();
            for (d, a) in row_d.iter_mut().zip(row_a) {
                *d = *a * (*d - dot) * scale;
            }
        }
        let dq = matmul(&ds, (steps, steps), false, &cache.k, (steps, da), false);
        let dk = matmul(&ds, (steps, steps), true, &cache.q, (steps, da), false);
        let mut dx = dr;
        for (w, gw, d) in [(&self.wq, &mut grad.wq, &dq), (&self.wk, &mut grad.wk, &dk), (&self.wv, &mut grad.wv, &dv)] {
            gemm(&cache.x, (steps, dm), true, d, (steps, da), false, T::one(), &mut gw.data);
            gemm(d, (steps, da), false, &w.data, (dm, da), true, T::one(), &mut dx);
        }
        dx
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<T>); 7] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln_g", &self.ln_g),
            ("ln_b", &self.ln_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 7] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo, &mut self.bo, &mut self.ln_g, &mut self.ln_b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_is_ceil_mode_and_routes_gradient_to_argmax() {
        // t=1, f=3, c=1
        let x = [1.0f64, 3.0, 2.0];
        let (y, arg) = pool_freq(&x, 1, 3, 1);
        assert_eq!(y, vec![3.0, 2.0]);
        let dx = unpool_freq(&[1.0, 5.0], &arg, 3);
        assert_eq!(dx, vec![0.0, 1.0, 5.0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let (t, f, c) = (3, 4, 2);
        let x: Vec<f64> = (0..t * f * c).map(|i| (i as f64).sin()).collect();
        let cols = im2col(&x, t, f, c);
        let u: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let lhs: f64 = cols.iter().zip(&u).map(|(a, b)| a * b).sum();
        let back = col2im(&u, t, f, c);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn attention_rows_are_distributions_and_output_is_normalized() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let att = Attention::<f64>::new(&mut rng, 6, 4);
        let x: Vec<f64> = (0..5 * 6).map(|i| (i as f64 * 0.7).sin()).collect();
        let cache = att.forward(x, 5);
        for row in cache.weights().chunks_exact(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for row in cache.output().chunks_exact(6) {
            let mean = row.iter().sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-9);
        }
    }
}
