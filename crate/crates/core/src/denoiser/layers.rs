//! Building blocks with hand-written reverse passes.
//!
//! Activations are channel-major `[C][N]` buffers. Parameter tensors live in a
//! [`ParameterSet`]; layers hold their indices. Backward passes accumulate
//! into the gradient buffers they are given.

use rand::Rng;

use super::linalg::{gemm, mm, View};
use super::params::{Init, ParameterSet};

type Grads = [Vec<f64>];

pub(crate) const GN_EPS: f64 = 1e-5;
const MAX_GROUPS: usize = 8;

pub(crate) fn group_count(c: usize) -> usize {
    (1..=MAX_GROUPS.min(c)).rev().find(|g| c.is_multiple_of(*g)).unwrap_or(1)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub(crate) fn silu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

/// `[R][C]` to `[C][R]`.
pub(crate) fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    pub ci: usize,
    pub co: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    w: usize,
    b: usize,
}

pub(crate) struct ConvCache {
    cols: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        p: &mut ParameterSet,
        name: &str,
        ci: usize,
        co: usize,
        k: usize,
        stride: usize,
        pad: usize,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((ci * k) as f64).sqrt();
        let w_init = if zero { Init::Zeros } else { Init::Uniform(bound) };
        let w = p.register(format!("{name}.w"), vec![co, ci, k], w_init, rng);
        let b = p.register(format!("{name}.b"), vec![co], Init::Zeros, rng);
        Conv { ci, co, k, stride, pad, w, b }
    }

    pub fn out_len(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn forward(&self, p: &ParameterSet, x: &[f64], n: usize) -> (Vec<f64>, ConvCache) {
        debug_assert_eq!(x.len(), self.ci * n);
        let no = self.out_len(n);
        let rows = self.ci * self.k;
        let mut cols = vec![0.0; rows * no];
        for c in 0..self.ci {
            for j in 0..self.k {
                let r = c * self.k + j;
                for o in 0..no {
                    let src = (o * self.stride + j) as isize - self.pad as isize;
                    if src >= 0 && (src as usize) < n {
                        cols[r * no + o] = x[c * n + src as usize];
                    }
                }
            }
        }
        let bias = &p.values[self.b];
        let mut y = vec![0.0; self.co * no];
        for c in 0..self.co {
            y[c * no..(c + 1) * no].fill(bias[c]);
        }
        mm(self.co, rows, no, &p.values[self.w], false, &cols, false, &mut y, true);
        (y, ConvCache { cols, n_in: n, n_out: no })
    }

    pub fn backward(&self, p: &ParameterSet, cache: &ConvCache, dy: &[f64], g: &mut Grads) -> Vec<f64> {
        let (n, no) = (cache.n_in, cache.n_out);
        let rows = self.ci * self.k;
        mm(self.co, no, rows, dy, false, &cache.cols, true, &mut g[self.w], true);
        let db = &mut g[self.b];
        for c in 0..self.co {
            db[c] += dy[c * no..(c + 1) * no].iter().sum::<f64>();
        }
        let mut dcols = vec![0.0; rows * no];
        mm(rows, self.co, no, &p.values[self.w], true, dy, false, &mut dcols, false);
        let mut dx = vec![0.0; self.ci * n];
        for c in 0..self.ci {
            for j in 0..self.k {
                let r = c * self.k + j;
                for o in 0..no {
                    let src = (o * self.stride + j) as isize - self.pad as isize;
                    if src >= 0 && (src as usize) < n {
                        dx[c * n + src as usize] += dcols[r * no + o];
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GroupNorm {
    pub c: usize,
    groups: usize,
    gamma: usize,
    beta: usize,
}

pub(crate) struct GnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    n: usize,
}

impl GroupNorm {
    pub fn new<R: Rng>(p: &mut ParameterSet, name: &str, c: usize, rng: &mut R) -> Self {
        let gamma = p.register(format!("{name}.g"), vec![c], Init::Ones, rng);
        let beta = p.register(format!("{name}.b"), vec![c], Init::Zeros, rng);
        GroupNorm {
            c,
            groups: group_count(c),
            gamma,
            beta,
        }
    }

    pub fn forward(&self, p: &ParameterSet, x: &[f64], n: usize) -> (Vec<f64>, GnCache) {
        let per = self.c / self.groups;
        let m = (per * n) as f64;
        let (gamma, beta) = (&p.values[self.gamma], &p.values[self.beta]);
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for gi in 0..self.groups {
            let span = gi * per * n..(gi + 1) * per * n;
            let xs = &x[span.clone()];
            let mean = xs.iter().sum::<f64>() / m;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let is = 1.0 / (var + GN_EPS).sqrt();
            inv_std.push(is);
            for (o, v) in xhat[span].iter_mut().zip(xs) {
                *o = (v - mean) * is;
            }
        }
        for c in 0..self.c {
            for i in 0..n {
                y[c * n + i] = gamma[c] * xhat[c * n + i] + beta[c];
            }
        }
        (y, GnCache { xhat, inv_std, n })
    }

    pub fn backward(&self, p: &ParameterSet, cache: &GnCache, dy: &[f64], g: &mut Grads) -> Vec<f64> {
        let n = cache.n;
        let per = self.c / self.groups;
        let m = (per * n) as f64;
        let gamma = &p.values[self.gamma];
        {
            let dg = &mut g[self.gamma];
            for c in 0..self.c {
                let r = c * n..(c + 1) * n;
                dg[c] += dy[r.clone()].iter().zip(&cache.xhat[r]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        {
            let db = &mut g[self.beta];
            for c in 0..self.c {
                db[c] += dy[c * n..(c + 1) * n].iter().sum::<f64>();
            }
        }
        let mut dxhat = vec![0.0; dy.len()];
        for c in 0..self.c {
            for i in 0..n {
                dxhat[c * n + i] = dy[c * n + i] * gamma[c];
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for gi in 0..self.groups {
            let span = gi * per * n..(gi + 1) * per * n;
            let dh = &dxhat[span.clone()];
            let xh = &cache.xhat[span.clone()];
            let s1 = dh.iter().sum::<f64>();
            let s2 = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>();
            let is = cache.inv_std[gi];
            for ((o, d), x) in dx[span].iter_mut().zip(dh).zip(xh) {
                *o = is / m * (m * d - s1 - x * s2);
            }
        }
        dx
    }
}

/// Row-batched affine map `Y = X W^T + b`, `X: [R][i]`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub i: usize,
    pub o: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new<R: Rng>(p: &mut ParameterSet, name: &str, i: usize, o: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (i as f64).sqrt();
        let w = p.register(format!("{name}.w"), vec![o, i], Init::Uniform(bound), rng);
        let b = p.register(format!("{name}.b"), vec![o], Init::Zeros, rng);
        Linear { i, o, w, b }
    }

    pub fn forward(&self, p: &ParameterSet, x: &[f64], rows: usize) -> Vec<f64> {
        let bias = &p.values[self.b];
        let mut y = Vec::with_capacity(rows * self.o);
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        mm(rows, self.i, self.o, x, false, &p.values[self.w], true, &mut y, true);
        y
    }

    /// Returns `dX` when `need_dx`, otherwise an empty vector.
    pub fn backward(&self, p: &ParameterSet, x: &[f64], rows: usize, dy: &[f64], g: &mut Grads, need_dx: bool) -> Vec<f64> {
        mm(self.o, rows, self.i, dy, true, x, false, &mut g[self.w], true);
        let db = &mut g[self.b];
        for r in 0..rows {
            for (d, v) in db.iter_mut().zip(&dy[r * self.o..(r + 1) * self.o]) {
                *d += v;
            }
        }
        if !need_dx {
            return Vec::new();
        }
        let mut dx = vec![0.0; rows * self.i];
        mm(rows, self.o, self.i, dy, false, &p.values[self.w], false, &mut dx, false);
        dx
    }
}

/// Multi-head scaled dot-product attention from `Xq: [Nq][dq]` onto
/// `Xk: [Nk][dk]`, returning `[Nq][c]`.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    pub c: usize,
    pub heads: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

pub(crate) struct AttnCache {
    xq: Vec<f64>,
    xk: Vec<f64>,
    nq: usize,
    nk: usize,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Softmax weights, `heads x Nq x Nk`.
    probs: Vec<f64>,
    o: Vec<f64>,
}

impl Attention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(p: &mut ParameterSet, name: &str, dq: usize, dk: usize, c: usize, heads: usize, rng: &mut R) -> Self {
        Attention {
            c,
            heads,
            q: Linear::new(p, &format!("{name}.q"), dq, c, rng),
            k: Linear::new(p, &format!("{name}.k"), dk, c, rng),
            v: Linear::new(p, &format!("{name}.v"), dk, c, rng),
            out: Linear::new(p, &format!("{name}.o"), c, c, rng),
        }
    }

    fn scale(&self) -> f64 {
        1.0 / ((self.c / self.heads) as f64).sqrt()
    }

    pub fn forward(&self, p: &ParameterSet, xq: Vec<f64>, nq: usize, xk: Vec<f64>, nk: usize) -> (Vec<f64>, AttnCache) {
        let (c, dh) = (self.c, self.c / self.heads);
        let q = self.q.forward(p, &xq, nq);
        let k = self.k.forward(p, &xk, nk);
        let v = self.v.forward(p, &xk, nk);
        let mut probs = vec![0.0; self.heads * nq * nk];
        let mut o = vec![0.0; nq * c];
        for h in 0..self.heads {
            let ph = &mut probs[h * nq * nk..(h + 1) * nq * nk];
            gemm(
                nq,
                dh,
                nk,
                self.scale(),
                View { data: &q[h * dh..], rs: c, cs: 1 },
                View { data: &k[h * dh..], rs: 1, cs: c },
                0.0,
                ph,
                nk,
                1,
            );
            for row in ph.chunks_mut(nk) {
                let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for e in row.iter_mut() {
                    *e = (*e - mx).exp();
                    sum += *e;
                }
                for e in row.iter_mut() {
                    *e /= sum;
                }
            }
            gemm(
                nq,
                nk,
                dh,
                1.0,
                View { data: ph, rs: nk, cs: 1 },
                View { data: &v[h * dh..], rs: c, cs: 1 },
                0.0,
                &mut o[h * dh..],
                c,
                1,
            );
        }
        let y = self.out.forward(p, &o, nq);
        (y, AttnCache { xq, xk, nq, nk, q, k, v, probs, o })
    }

    /// Returns `(dXq, dXk)`; `dXk` is empty unless `need_dxk`.
    pub fn backward(&self, p: &ParameterSet, cache: &AttnCache, dy: &[f64], g: &mut Grads, need_dxk: bool) -> (Vec<f64>, Vec<f64>) {
        let (c, dh) = (self.c, self.c / self.heads);
        let (nq, nk) = (cache.nq, cache.nk);
        let scale = self.scale();
        let d_o = self.out.backward(p, &cache.o, nq, dy, g, true);
        let mut dq = vec![0.0; nq * c];
        let mut dk = vec![0.0; nk * c];
        let mut dv = vec![0.0; nk * c];
        let mut dp = vec![0.0; nq * nk];
        for h in 0..self.heads {
            let ph = &cache.probs[h * nq * nk..(h + 1) * nq * nk];
            // dP = dO_h V_h^T
            gemm(
                nq,
                dh,
                nk,
                1.0,
                View { data: &d_o[h * dh..], rs: c, cs: 1 },
                View { data: &cache.v[h * dh..], rs: 1, cs: c },
                0.0,
                &mut dp,
                nk,
                1,
            );
            // dV_h = P^T dO_h
            gemm(
                nk,
                nq,
                dh,
                1.0,
                View { data: ph, rs: 1, cs: nk },
                View { data: &d_o[h * dh..], rs: c, cs: 1 },
                0.0,
                &mut dv[h * dh..],
                c,
                1,
            );
            // dS = P (dP - rowsum(dP P))
            for (prow, drow) in ph.chunks(nk).zip(dp.chunks_mut(nk)) {
                let dot: f64 = prow.iter().zip(drow.iter()).map(|(a, b)| a * b).sum();
                for (d, pv) in drow.iter_mut().zip(prow) {
                    *d = pv * (*d - dot);
                }
            }
            gemm(
                nq,
                nk,
                dh,
                scale,
                View { data: &dp, rs: nk, cs: 1 },
                View { data: &cache.k[h * dh..], rs: c, cs: 1 },
                0.0,
                &mut dq[h * dh..],
                c,
                1,
            );
            gemm(
                nk,
                nq,
                dh,
                scale,
                View { data: &dp, rs: 1, cs: nk },
                View { data: &cache.q[h * dh..], rs: c, cs: 1 },
                0.0,
                &mut dk[h * dh..],
                c,
                1,
            );
        }
        let dxq = self.q.backward(p, &cache.xq, nq, &dq, g, true);
        let mut dxk = self.k.backward(p, &cache.xk, nk, &dk, g, need_dxk);
        let dxv = self.v.backward(p, &cache.xk, nk, &dv, g, need_dxk);
        for (a, b) in dxk.iter_mut().zip(&dxv) {
            *a += b;
        }
        (dxq, dxk)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn group_counts() {
        assert_eq!(group_count(8), 8);
        assert_eq!(group_count(12), 6);
        assert_eq!(group_count(3), 3);
        assert_eq!(group_count(64), 8);
        assert_eq!(group_count(7), 7);
        assert_eq!(group_count(11), 1);
    }

    #[test]
    fn silu_derivative_matches_difference() {
        let xs = [-4.0, -0.3, 0.0, 0.7, 5.0];
        let d = silu_backward(&xs, &[1.0; 5]);
        for (x, g) in xs.iter().zip(d) {
            let h = 1e-6;
            let fd = (silu(&[x + h])[0] - silu(&[x - h])[0]) / (2.0 * h);
            assert!((fd - g).abs() < 1e-8);
        }
    }

    /// Direct convolution followed by its hand-derived transpose.
    #[test]
    fn conv_matches_direct_sum_and_transpose() {
        let mut rng = crate::seed::rng(3);
        for &(stride, pad, n) in &[(1, 1, 7), (2, 1, 8), (1, 0, 5)] {
            let mut p = ParameterSet::empty();
            let conv = Conv::new(&mut p, "c", 2, 3, 3, stride, pad, false, &mut rng);
            p.values[1] = rand_vec(&mut rng, 3);
            let x = rand_vec(&mut rng, 2 * n);
            let (y, cache) = conv.forward(&p, &x, n);
            let no = conv.out_len(n);
            let w = &p.values[0];
            let at = |c: usize, i: isize| if i < 0 || i >= n as isize { 0.0 } else { x[c * n + i as usize] };
            for o in 0..3 {
                for t in 0..no {
                    let mut s = p.values[1][o];
                    for c in 0..2 {
                        for j in 0..3 {
                            s += w[(o * 2 + c) * 3 + j] * at(c, (t * stride + j) as isize - pad as isize);
                        }
                    }
                    assert!((y[o * no + t] - s).abs() < 1e-12);
                }
            }
            let dy = rand_vec(&mut rng, 3 * no);
            let mut g = p.zeros_like();
            let dx = conv.backward(&p, &cache, &dy, &mut g);
            for c in 0..2 {
                for i in 0..n {
                    let mut s = 0.0;
                    for o in 0..3 {
                        for t in 0..no {
                            let j = i as isize + pad as isize - (t * stride) as isize;
                            if (0..3).contains(&j) {
                                s += w[(o * 2 + c) * 3 + j as usize] * dy[o * no + t];
                            }
                        }
                    }
                    assert!((dx[c * n + i] - s).abs() < 1e-12);
                }
            }
            for o in 0..3 {
                for c in 0..2 {
                    for j in 0..3 {
                        let mut s = 0.0;
                        for t in 0..no {
                            s += dy[o * no + t] * at(c, (t * stride + j) as isize - pad as isize);
                        }
                        assert!((g[0][(o * 2 + c) * 3 + j] - s).abs() < 1e-12);
                    }
                }
                let s: f64 = dy[o * no..(o + 1) * no].iter().sum();
                assert!((g[1][o] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn group_norm_output_is_standardized() {
        let mut rng = crate::seed::rng(5);
        let mut p = ParameterSet::empty();
        let gn = GroupNorm::new(&mut p, "gn", 4, &mut rng);
        let x: Vec<f64> = rand_vec(&mut rng, 4 * 10).iter().map(|v| 3.0 * v + 2.0).collect();
        let (y, _) = gn.forward(&p, &x, 10);
        for c in 0..4 {
            let row = &y[c * 10..(c + 1) * 10];
            let mean: f64 = row.iter().sum::<f64>() / 10.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::seed::rng(6);
        let mut p = ParameterSet::empty();
        let attn = Attention::new(&mut p, "a", 5, 7, 4, 2, &mut rng);
        let (_, cache) = attn.forward(&p, rand_vec(&mut rng, 3 * 5), 3, rand_vec(&mut rng, 6 * 7), 6);
        for row in cache.probs.chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
