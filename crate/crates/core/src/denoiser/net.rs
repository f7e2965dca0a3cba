//! The 1D U-Net: forward with a tape, and the matching reverse pass.

use rand::Rng;

use super::layers::{silu, silu_backward, transpose, Attention, AttnCache, Conv, ConvCache, GnCache, GroupNorm, Linear};
use super::params::ParameterSet;
use super::{sinusoidal_embed, CondTokens, DenoiserConfig, COND_DIM};
use crate::conditioning::{positional_tag, TAG_DIM_1D};
use crate::diffusion::InputRow;
use crate::error::{Error, Result};

type Grads = [Vec<f64>];

struct ResBlock {
    co: usize,
    gn1: GroupNorm,
    conv1: Conv,
    proj: Linear,
    gn2: GroupNorm,
    conv2: Conv,
    skip: Option<Conv>,
}

struct ResCache {
    g1: GnCache,
    a: Vec<f64>,
    c1: ConvCache,
    g2: GnCache,
    b2: Vec<f64>,
    c2: ConvCache,
    skip: Option<ConvCache>,
    n: usize,
}

impl ResBlock {
    fn new<R: Rng>(p: &mut ParameterSet, name: &str, ci: usize, co: usize, temb: usize, rng: &mut R) -> Self {
        ResBlock {
            co,
            gn1: GroupNorm::new(p, &format!("{name}.gn1"), ci, rng),
            conv1: Conv::new(p, &format!("{name}.conv1"), ci, co, 3, 1, 1, false, rng),
            proj: Linear::new(p, &format!("{name}.temb"), temb, co, rng),
            gn2: GroupNorm::new(p, &format!("{name}.gn2"), co, rng),
            conv2: Conv::new(p, &format!("{name}.conv2"), co, co, 3, 1, 1, false, rng),
            skip: (ci != co).then(|| Conv::new(p, &format!("{name}.skip"), ci, co, 1, 1, 0, false, rng)),
        }
    }

    fn forward(&self, p: &ParameterSet, x: &[f64], n: usize, st: &[f64]) -> (Vec<f64>, ResCache) {
        let (a, g1) = self.gn1.forward(p, x, n);
        let (mut h, c1) = self.conv1.forward(p, &silu(&a), n);
        let shift = self.proj.forward(p, st, 1);
        for (row, s) in h.chunks_mut(n).zip(&shift) {
            row.iter_mut().for_each(|v| *v += s);
        }
        let (b2, g2) = self.gn2.forward(p, &h, n);
        let (mut out, c2) = self.conv2.forward(p, &silu(&b2), n);
        let skip = match &self.skip {
            Some(conv) => {
                let (s, cache) = conv.forward(p, x, n);
                out.iter_mut().zip(&s).for_each(|(o, v)| *o += v);
                Some(cache)
            }
            None => {
                out.iter_mut().zip(x).for_each(|(o, v)| *o += v);
                None
            }
        };
        (out, ResCache { g1, a, c1, g2, b2, c2, skip, n })
    }

    fn backward(&self, p: &ParameterSet, cache: &ResCache, st: &[f64], dout: &[f64], g: &mut Grads, dst: &mut [f64]) -> Vec<f64> {
        let n = cache.n;
        let ds2 = self.conv2.backward(p, &cache.c2, dout, g);
        let dh = self.gn2.backward(p, &cache.g2, &silu_backward(&cache.b2, &ds2), g);
        let dshift: Vec<f64> = (0..self.co).map(|c| dh[c * n..(c + 1) * n].iter().sum()).collect();
        let d = self.proj.backward(p, st, 1, &dshift, g, true);
        dst.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        let ds = self.conv1.backward(p, &cache.c1, &dh, g);
        let mut dx = self.gn1.backward(p, &cache.g1, &silu_backward(&cache.a, &ds), g);
        match (&self.skip, &cache.skip) {
            (Some(conv), Some(sc)) => {
                let d = conv.backward(p, sc, dout, g);
                dx.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
            }
            _ => dx.iter_mut().zip(dout).for_each(|(a, b)| *a += b),
        }
        dx
    }
}

/// Residual attention over a normalized copy of the activations. Self
/// attention uses them as keys too; cross attention appends a time tag to the
/// queries and attends to the conditioning tokens.
struct AttnBlock {
    c: usize,
    gn: GroupNorm,
    attn: Attention,
    cross: bool,
}

struct AttnBlockCache {
    gn: GnCache,
    attn: AttnCache,
    n: usize,
}

impl AttnBlock {
    fn new<R: Rng>(p: &mut ParameterSet, name: &str, c: usize, heads: usize, cross: bool, rng: &mut R) -> Self {
        let (dq, dk) = if cross { (c + TAG_DIM_1D, COND_DIM) } else { (c, c) };
        AttnBlock {
            c,
            gn: GroupNorm::new(p, &format!("{name}.gn"), c, rng),
            attn: Attention::new(p, &format!("{name}.attn"), dq, dk, c, heads, rng),
            cross,
        }
    }

    fn forward(&self, p: &ParameterSet, h: &[f64], n: usize, qtag: &[f64], tokens: &CondTokens) -> (Vec<f64>, AttnBlockCache) {
        let c = self.c;
        let (g, gn) = self.gn.forward(p, h, n);
        let gt = transpose(c, n, &g);
        let (y, attn) = if self.cross {
            let dq = c + TAG_DIM_1D;
            let mut xq = vec![0.0; n * dq];
            for i in 0..n {
                xq[i * dq..i * dq + c].copy_from_slice(&gt[i * c..(i + 1) * c]);
                xq[i * dq + c..(i + 1) * dq].copy_from_slice(&qtag[i * TAG_DIM_1D..(i + 1) * TAG_DIM_1D]);
            }
            self.attn.forward(p, xq, n, tokens.data.clone(), tokens.count)
        } else {
            self.attn.forward(p, gt.clone(), n, gt, n)
        };
        let mut out = h.to_vec();
        for i in 0..n {
            for ch in 0..c {
                out[ch * n + i] += y[i * c + ch];
            }
        }
        (out, AttnBlockCache { gn, attn, n })
    }

    fn backward(&self, p: &ParameterSet, cache: &AttnBlockCache, dout: &[f64], g: &mut Grads) -> Vec<f64> {
        let (c, n) = (self.c, cache.n);
        let dy = transpose(c, n, dout);
        let (dxq, dxk) = self.attn.backward(p, &cache.attn, &dy, g, !self.cross);
        let mut dgt = vec![0.0; n * c];
        if self.cross {
            let dq = c + TAG_DIM_1D;
            for i in 0..n {
                dgt[i * c..(i + 1) * c].copy_from_slice(&dxq[i * dq..i * dq + c]);
            }
        } else {
            for ((d, a), b) in dgt.iter_mut().zip(&dxq).zip(&dxk) {
                *d = a + b;
            }
        }
        let dg = transpose(n, c, &dgt);
        let mut dh = self.gn.backward(p, &cache.gn, &dg, g);
        dh.iter_mut().zip(dout).for_each(|(a, b)| *a += b);
        dh
    }
}

struct EncLevel {
    res: ResBlock,
    self_attn: Option<AttnBlock>,
    cross: AttnBlock,
    down: Option<Conv>,
}

struct DecLevel {
    level: usize,
    res: ResBlock,
    self_attn: Option<AttnBlock>,
    cross: AttnBlock,
}

struct LevelCache {
    res: ResCache,
    self_attn: Option<AttnBlockCache>,
    cross: AttnBlockCache,
    down: Option<ConvCache>,
}

pub(crate) struct Network {
    widths: Vec<usize>,
    temb_in: usize,
    temb1: Linear,
    temb2: Linear,
    conv_in: Conv,
    enc: Vec<EncLevel>,
    dec: Vec<DecLevel>,
    gn_out: GroupNorm,
    conv_out: Conv,
}

/// Everything the reverse pass needs from one forward evaluation.
pub struct Tape {
    pub(super) t: usize,
    pub(super) input: Vec<InputRow>,
    n: usize,
    np: usize,
    emb: Vec<f64>,
    a1: Vec<f64>,
    s1: Vec<f64>,
    a2: Vec<f64>,
    st: Vec<f64>,
    conv_in: ConvCache,
    enc: Vec<LevelCache>,
    dec: Vec<LevelCache>,
    gn_out: GnCache,
    out_a: Vec<f64>,
    conv_out: ConvCache,
}

fn check_finite(v: &[f64], layer: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("activation {} of layer {layer} is {}", i, v[i])));
    }
    Ok(())
}

fn upsample(h: &[f64], c: usize, n: usize) -> Vec<f64> {
    let mut u = vec![0.0; c * 2 * n];
    for ch in 0..c {
        for i in 0..2 * n {
            u[ch * 2 * n + i] = h[ch * n + i / 2];
        }
    }
    u
}

fn upsample_backward(du: &[f64], c: usize, n: usize) -> Vec<f64> {
    let mut d = vec![0.0; c * n];
    for ch in 0..c {
        for i in 0..n {
            d[ch * n + i] = du[ch * 2 * n + 2 * i] + du[ch * 2 * n + 2 * i + 1];
        }
    }
    d
}

impl Network {
    pub fn build<R: Rng>(cfg: &DenoiserConfig, rng: &mut R) -> (Self, ParameterSet) {
        let mut p = ParameterSet::empty();
        let widths = cfg.widths();
        let levels = widths.len();
        let c0 = widths[0];
        let temb = cfg.temb_dim();
        let temb1 = Linear::new(&mut p, "temb.0", c0, temb, rng);
        let temb2 = Linear::new(&mut p, "temb.1", temb, temb, rng);
        let conv_in = Conv::new(&mut p, "in", super::IN_CHANNELS, c0, 3, 1, 1, false, rng);
        let mut enc = Vec::with_capacity(levels);
        let mut prev = c0;
        for (l, &c) in widths.iter().enumerate() {
            let name = format!("enc.{l}");
            enc.push(EncLevel {
                res: ResBlock::new(&mut p, &format!("{name}.res"), prev, c, temb, rng),
                self_attn: cfg
                    .attn_levels
                    .contains(&l)
                    .then(|| AttnBlock::new(&mut p, &format!("{name}.self"), c, cfg.heads, false, rng)),
                cross: AttnBlock::new(&mut p, &format!("{name}.cross"), c, cfg.heads, true, rng),
                down: (l + 1 < levels).then(|| Conv::new(&mut p, &format!("{name}.down"), c, c, 3, 2, 1, false, rng)),
            });
            prev = c;
        }
        let mut dec = Vec::new();
        for l in (0..levels.saturating_sub(1)).rev() {
            let name = format!("dec.{l}");
            let c = widths[l];
            dec.push(DecLevel {
                level: l,
                res: ResBlock::new(&mut p, &format!("{name}.res"), widths[l + 1] + c, c, temb, rng),
                self_attn: cfg
                    .attn_levels
                    .contains(&l)
                    .then(|| AttnBlock::new(&mut p, &format!("{name}.self"), c, cfg.heads, false, rng)),
                cross: AttnBlock::new(&mut p, &format!("{name}.cross"), c, cfg.heads, true, rng),
            });
        }
        let gn_out = GroupNorm::new(&mut p, "out.gn", c0, rng);
        let conv_out = Conv::new(&mut p, "out.conv", c0, 2, 1, 1, 0, true, rng);
        let net = Network {
            widths,
            temb_in: c0,
            temb1,
            temb2,
            conv_in,
            enc,
            dec,
            gn_out,
            conv_out,
        };
        (net, p)
    }

    fn padded_len(&self, n: usize) -> usize {
        let f = 1usize << (self.widths.len() - 1);
        n.div_ceil(f) * f
    }

    /// Time tags for the positions of level `l`, measured in window lengths.
    fn query_tags(&self, level: usize, np: usize, n: usize) -> Vec<f64> {
        let s = 1usize << level;
        let nl = np / s;
        let mut tags = vec![0.0; nl * TAG_DIM_1D];
        for i in 0..nl {
            let center = (i as f64 + 0.5) * s as f64 - 0.5;
            positional_tag(center / n as f64, &mut tags[i * TAG_DIM_1D..(i + 1) * TAG_DIM_1D]);
        }
        tags
    }

    pub fn forward(&self, p: &ParameterSet, input: &[InputRow], t: usize, tokens: &CondTokens) -> Result<(Vec<[f64; 2]>, Tape)> {
        let n = input.len();
        let np = self.padded_len(n);
        let levels = self.widths.len();

        let mut x0 = vec![0.0; super::IN_CHANNELS * np];
        for (i, r) in input.iter().enumerate() {
            x0[i] = 2.0 * r[0] - 1.0;
            x0[np + i] = 2.0 * r[1] - 1.0;
            x0[2 * np + i] = r[2];
        }
        check_finite(&x0, "input")?;

        let emb = sinusoidal_embed(t as f64, self.temb_in)?;
        let a1 = self.temb1.forward(p, &emb, 1);
        let s1 = silu(&a1);
        let a2 = self.temb2.forward(p, &s1, 1);
        let st = silu(&a2);

        let qtags: Vec<Vec<f64>> = (0..levels).map(|l| self.query_tags(l, np, n)).collect();

        let (mut h, conv_in) = self.conv_in.forward(p, &x0, np);
        let mut skips = Vec::with_capacity(levels);
        let mut enc = Vec::with_capacity(levels);
        let mut len = np;
        for (l, lvl) in self.enc.iter().enumerate() {
            let (o, res) = lvl.res.forward(p, &h, len, &st);
            h = o;
            let self_attn = match &lvl.self_attn {
                Some(b) => {
                    let (o, c) = b.forward(p, &h, len, &[], tokens);
                    h = o;
                    Some(c)
                }
                None => None,
            };
            let (o, cross) = lvl.cross.forward(p, &h, len, &qtags[l], tokens);
            h = o;
            check_finite(&h, &format!("enc.{l}"))?;
            let down = match &lvl.down {
                Some(conv) => {
                    skips.push(h.clone());
                    let (o, c) = conv.forward(p, &h, len);
                    h = o;
                    len /= 2;
                    Some(c)
                }
                None => None,
            };
            enc.push(LevelCache { res, self_attn, cross, down });
        }

        let mut dec = Vec::with_capacity(self.dec.len());
        for lvl in &self.dec {
            let l = lvl.level;
            let up = upsample(&h, self.widths[l + 1], len);
            len *= 2;
            let mut cat = up;
            cat.extend_from_slice(&skips[l]);
            let (o, res) = lvl.res.forward(p, &cat, len, &st);
            h = o;
            let self_attn = match &lvl.self_attn {
                Some(b) => {
                    let (o, c) = b.forward(p, &h, len, &[], tokens);
                    h = o;
                    Some(c)
                }
                None => None,
            };
            let (o, cross) = lvl.cross.forward(p, &h, len, &qtags[l], tokens);
            h = o;
            check_finite(&h, &format!("dec.{l}"))?;
            dec.push(LevelCache {
                res,
                self_attn,
                cross,
                down: None,
            });
        }

        let (g, gn_out) = self.gn_out.forward(p, &h, np);
        let (y, conv_out) = self.conv_out.forward(p, &silu(&g), np);
        check_finite(&y, "out")?;
        let pred = (0..n).map(|i| [y[i], y[np + i]]).collect();
        Ok((
            pred,
            Tape {
                t,
                input: input.to_vec(),
                n,
                np,
                emb,
                a1,
                s1,
                a2,
                st,
                conv_in,
                enc,
                dec,
                gn_out,
                out_a: g,
                conv_out,
            },
        ))
    }

    /// Accumulates parameter gradients into `g` and returns the gradient with
    /// respect to the input rows.
    pub fn backward(&self, p: &ParameterSet, tape: &Tape, dpred: &[[f64; 2]], g: &mut Grads) -> Result<Vec<InputRow>> {
        if dpred.len() != tape.n {
            return Err(Error::shape("denoiser output gradient", tape.n, dpred.len()));
        }
        let (n, np) = (tape.n, tape.np);
        let levels = self.widths.len();
        let mut dy = vec![0.0; 2 * np];
        for (i, d) in dpred.iter().enumerate() {
            dy[i] = d[0];
            dy[np + i] = d[1];
        }
        let ds = self.conv_out.backward(p, &tape.conv_out, &dy, g);
        let mut dh = self.gn_out.backward(p, &tape.gn_out, &silu_backward(&tape.out_a, &ds), g);
        let mut dst = vec![0.0; tape.st.len()];
        let mut dskips: Vec<Vec<f64>> = vec![Vec::new(); levels];

        let mut len = np;
        for (lvl, cache) in self.dec.iter().zip(&tape.dec).rev() {
            let l = lvl.level;
            dh = lvl.cross.backward(p, &cache.cross, &dh, g);
            if let (Some(b), Some(c)) = (&lvl.self_attn, &cache.self_attn) {
                dh = b.backward(p, c, &dh, g);
            }
            let dcat = lvl.res.backward(p, &cache.res, &tape.st, &dh, g, &mut dst);
            let cu = self.widths[l + 1];
            dskips[l] = dcat[cu * len..].to_vec();
            dh = upsample_backward(&dcat[..cu * len], cu, len / 2);
            len /= 2;
        }

        for (l, (lvl, cache)) in self.enc.iter().zip(&tape.enc).enumerate().rev() {
            if let (Some(conv), Some(c)) = (&lvl.down, &cache.down) {
                let mut d = conv.backward(p, c, &dh, g);
                d.iter_mut().zip(&dskips[l]).for_each(|(a, b)| *a += b);
                dh = d;
                len *= 2;
            }
            dh = lvl.cross.backward(p, &cache.cross, &dh, g);
            if let (Some(b), Some(c)) = (&lvl.self_attn, &cache.self_attn) {
                dh = b.backward(p, c, &dh, g);
            }
            dh = lvl.res.backward(p, &cache.res, &tape.st, &dh, g, &mut dst);
        }
        debug_assert_eq!(len, np);
        let dx0 = self.conv_in.backward(p, &tape.conv_in, &dh, g);

        let da2 = silu_backward(&tape.a2, &dst);
        let ds1 = self.temb2.backward(p, &tape.s1, 1, &da2, g, true);
        let da1 = silu_backward(&tape.a1, &ds1);
        self.temb1.backward(p, &tape.emb, 1, &da1, g, false);

        Ok((0..n)
            .map(|i| [2.0 * dx0[i], 2.0 * dx0[np + i], dx0[2 * np + i]])
            .collect())
    }
}
