//! Noise-prediction network: a 1D convolutional U-Net with timestep
//! embedding, self-attention at chosen levels and cross-attention onto the
//! saliency tokens at every level. Gradients are exact and hand-derived.

mod checkpoint;
mod layers;
mod linalg;
mod net;
mod params;
mod train;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use checkpoint::{load_checkpoint, read_gzdf, save_checkpoint, write_gzdf, GzdfFile, GzdfTensor, GZDF_MAGIC, GZDF_VERSION};
pub use net::Tape;
pub use params::{adam_step, to_f32_grid, AdamConfig, ParameterSet};
pub use train::{train, TrainConfig, TrainSet, TrainWindow};

use crate::conditioning::{positional_tag, TAG_DIM_1D, TOKEN_DIM};
use crate::diffusion::{InputRow, NoisePredictor, NoiseSchedule, WindowCond};
use crate::error::{Error, Result};
use net::Network;

/// `x`, `y` and the history flag.
pub const IN_CHANNELS: usize = 3;
/// Token features plus a time tag relative to the window start.
pub const COND_DIM: usize = TOKEN_DIM + TAG_DIM_1D;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub base_width: usize,
    pub level_mults: Vec<usize>,
    /// Levels (0 = finest) that get a self-attention block.
    pub attn_levels: Vec<usize>,
    pub cond_dim: usize,
    pub heads: usize,
    pub window_len: usize,
    /// Output preconditioning; `None` keeps the plain zero-initialized output.
    pub precondition: Option<Precondition>,
}

/// Analytic skip plus scaled residual for the predicted noise:
/// `eps = s(t) (x_t - sqrt(abar) mu) + c(t) F` on noisy rows, with
/// `v = abar sd^2 + 1 - abar`, `s = sqrt(1 - abar) / v` and
/// `c = sqrt(abar sd^2 / v)`. The skip is the best linear noise estimate for
/// data of mean `mu` and spread `sd`, so a network error in `F` at high noise
/// is damped by `c` instead of being integrated along the whole DDIM ladder.
#[derive(Debug, Clone, PartialEq)]
pub struct Precondition {
    pub schedule: NoiseSchedule,
    pub data_mean: f64,
    pub data_std: f64,
}

impl Precondition {
    /// `(s, c, sqrt(abar) * mu)` at step `t`.
    fn coefficients(&self, t: usize) -> (f64, f64, f64) {
        let ab = self.schedule.alpha_bar(t);
        let sd2 = self.data_std * self.data_std;
        let v = ab * sd2 + 1.0 - ab;
        ((1.0 - ab).sqrt() / v, (ab * sd2 / v).sqrt(), ab.sqrt() * self.data_mean)
    }

    /// `1 / c(t)^2`: turns the noise MSE into the MSE of `F`, whose target
    /// has unit spread at every step. Unweighted, an `x0` error at high noise
    /// costs almost nothing and the model never learns to follow the history.
    pub fn loss_weight(&self, t: usize) -> f64 {
        let (_, c, _) = self.coefficients(t);
        1.0 / (c * c)
    }
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            base_width: 32,
            level_mults: vec![1, 2, 4],
            attn_levels: vec![2],
            cond_dim: COND_DIM,
            heads: 4,
            window_len: 135,
            precondition: None,
        }
    }
}

impl DenoiserConfig {
    /// Smallest configuration used for gradient checks.
    pub fn tiny(window_len: usize) -> Self {
        DenoiserConfig {
            base_width: 8,
            level_mults: vec![1, 2],
            attn_levels: vec![1],
            cond_dim: COND_DIM,
            heads: 2,
            window_len,
            precondition: None,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        self.level_mults.iter().map(|m| m * self.base_width).collect()
    }

    pub fn temb_dim(&self) -> usize {
        4 * self.base_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.level_mults.is_empty() || self.level_mults.contains(&0) {
            return Err(Error::invalid("denoiser widths must be positive and at least one level is required"));
        }
        if !self.base_width.is_multiple_of(2) {
            return Err(Error::invalid(format!("base_width {} must be even for the timestep embedding", self.base_width)));
        }
        if self.heads == 0 {
            return Err(Error::invalid("attention needs at least one head"));
        }
        for w in self.widths() {
            if w % self.heads != 0 {
                return Err(Error::invalid(format!("width {w} not divisible by {} heads", self.heads)));
            }
        }
        if let Some(l) = self.attn_levels.iter().find(|&&l| l >= self.level_mults.len()) {
            return Err(Error::invalid(format!("attention level {l} exceeds {} levels", self.level_mults.len())));
        }
        if self.cond_dim != COND_DIM {
            return Err(Error::invalid(format!("cond_dim must be {COND_DIM}, got {}", self.cond_dim)));
        }
        if self.window_len == 0 {
            return Err(Error::invalid("window_len must be positive"));
        }
        if let Some(p) = &self.precondition {
            if !(p.data_std > 0.0 && p.data_std.is_finite() && p.data_mean.is_finite()) {
                return Err(Error::invalid("preconditioning needs a finite mean and a positive spread"));
            }
        }
        Ok(())
    }
}

/// Component `2i` is `sin(t / 10000^(2i/dim))`, component `2i+1` the cosine.
pub fn sinusoidal_embed(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!("embedding dimension {dim} must be even and positive")));
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid(format!("timestep {t} must be non-negative")));
    }
    let mut out = vec![0.0; dim];
    for i in 0..dim / 2 {
        let a = t / 10000f64.powf(2.0 * i as f64 / dim as f64);
        out[2 * i] = a.sin();
        out[2 * i + 1] = a.cos();
    }
    Ok(out)
}

/// Keys/values for cross-attention, `count x COND_DIM`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CondTokens {
    pub data: Vec<f64>,
    pub count: usize,
}

/// Tokens of every set inside the window, each tagged with its frame offset
/// relative to the window length.
pub fn window_tokens(cond: &WindowCond<'_>) -> Result<CondTokens> {
    let lat = cond.latents;
    let sets = lat.sets_in(cond.frame_start, cond.len);
    if sets.is_empty() {
        return Err(Error::invalid(format!(
            "no conditioning frames in window {}..{}",
            cond.frame_start,
            cond.frame_start + cond.len
        )));
    }
    let per = lat.tokens_per_set();
    let mut data = vec![0.0; sets.len() * per * COND_DIM];
    let mut tag = [0.0; TAG_DIM_1D];
    let mut row = 0;
    for set in sets {
        positional_tag((set.frame - cond.frame_start) as f64 / cond.len as f64, &mut tag);
        for tok in 0..per {
            let r = &mut data[row * COND_DIM..(row + 1) * COND_DIM];
            lat.token_features(set, tok, &mut r[..TOKEN_DIM]);
            r[TOKEN_DIM..].copy_from_slice(&tag);
            row += 1;
        }
    }
    Ok(CondTokens { data, count: row })
}

pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParameterSet,
    net: Network,
}

impl std::fmt::Debug for Denoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Denoiser")
            .field("config", &self.config)
            .field("parameters", &self.params.scalar_count())
            .field("step", &self.params.step)
            .finish()
    }
}

impl Denoiser {
    /// Fresh network. The final projection starts at zero.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = crate::seed::rng_for(seed, &[0x6e6e_696e_6974]);
        let (net, params) = Network::build(&config, &mut rng);
        Ok(Denoiser { config, params, net })
    }

    /// Wrap existing parameters, checking names and shapes against `config`.
    pub fn from_params(config: DenoiserConfig, params: ParameterSet) -> Result<Self> {
        let fresh = Denoiser::new(config, 0)?;
        if fresh.params.names() != params.names() {
            return Err(Error::invalid("parameter names do not match the denoiser layout"));
        }
        for i in 0..params.len() {
            if fresh.params.shape(i) != params.shape(i) {
                return Err(Error::shape(
                    format!("parameter {}", params.name(i)),
                    format!("{:?}", fresh.params.shape(i)),
                    format!("{:?}", params.shape(i)),
                ));
            }
        }
        Ok(Denoiser {
            config: fresh.config,
            params,
            net: fresh.net,
        })
    }

    fn check_input(&self, input: &[InputRow], tokens: &CondTokens) -> Result<()> {
        if input.len() != self.config.window_len {
            return Err(Error::shape("denoiser input rows", self.config.window_len, input.len()));
        }
        if tokens.count == 0 || tokens.data.len() != tokens.count * COND_DIM {
            return Err(Error::shape("conditioning tokens", tokens.count * COND_DIM, tokens.data.len()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[InputRow], t: usize, tokens: &CondTokens) -> Result<Vec<[f64; 2]>> {
        Ok(self.forward_tape(input, t, tokens)?.0)
    }

    pub fn forward_tape(&self, input: &[InputRow], t: usize, tokens: &CondTokens) -> Result<(Vec<[f64; 2]>, Tape)> {
        self.check_input(input, tokens)?;
        let (mut pred, tape) = self.net.forward(&self.params, input, t, tokens)?;
        if let Some(pc) = &self.config.precondition {
            pc.schedule.check_step(t)?;
            let (s, c, shift) = pc.coefficients(t);
            for (p, r) in pred.iter_mut().zip(input) {
                let noisy = 1.0 - r[2];
                for ch in 0..2 {
                    p[ch] = noisy * s * (r[ch] - shift) + c * p[ch];
                }
            }
        }
        Ok((pred, tape))
    }

    /// Parameter gradients (fresh buffers) and input gradient of
    /// `sum(dpred * pred)` for the pass recorded in `tape`.
    pub fn backward(&self, tape: &Tape, dpred: &[[f64; 2]]) -> Result<(Vec<Vec<f64>>, Vec<InputRow>)> {
        let mut g = self.params.zeros_like();
        let Some(pc) = &self.config.precondition else {
            let dx = self.net.backward(&self.params, tape, dpred, &mut g)?;
            return Ok((g, dx));
        };
        let (s, c, shift) = pc.coefficients(tape.t);
        let dnet: Vec<[f64; 2]> = dpred.iter().map(|d| [c * d[0], c * d[1]]).collect();
        let mut dx = self.net.backward(&self.params, tape, &dnet, &mut g)?;
        for ((dxi, d), r) in dx.iter_mut().zip(dpred).zip(&tape.input) {
            let noisy = 1.0 - r[2];
            for ch in 0..2 {
                dxi[ch] += noisy * s * d[ch];
                dxi[2] -= s * (r[ch] - shift) * d[ch];
            }
        }
        Ok((g, dx))
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, input: &[InputRow], t: usize, cond: &WindowCond<'_>) -> Result<Vec<[f64; 2]>> {
        let tokens = window_tokens(cond)?;
        self.forward(input, t, &tokens)
    }
}

/// Per-tensor gradient agreement: `max |analytic - numeric|` divided by the
/// larger of the two tensors' max magnitudes. The divisor is floored at
/// `GRAD_CHECK_FLOOR` times the largest analytic magnitude in the network, so
/// tensors whose gradient vanishes identically (a bias followed by a
/// per-channel normalization, attention key biases) compare difference noise
/// against the network's gradient scale rather than against itself.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub tensors: Vec<(String, f64)>,
    pub input: f64,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.1).fold(self.input, f64::max)
    }
}

pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn rel_error(a: &[f64], n: &[f64], floor: f64) -> f64 {
    let diff = a.iter().zip(n).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = max_abs(a).max(max_abs(n)).max(floor);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compare reverse-mode gradients of `L = sum(R * pred)`, `R ~ N(0, 1)`,
/// against central differences with step `h` for every parameter scalar and
/// every input coordinate.
pub fn finite_difference_check(
    model: &mut Denoiser,
    input: &[InputRow],
    t: usize,
    tokens: &CondTokens,
    seed: u64,
    h: f64,
) -> Result<GradCheck> {
    let mut rng = crate::seed::rng(seed);
    let r: Vec<[f64; 2]> = (0..input.len())
        .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
        .collect();
    let loss = |m: &Denoiser, x: &[InputRow]| -> Result<f64> {
        let y = m.forward(x, t, tokens)?;
        Ok(y.iter().zip(&r).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).sum())
    };
    let (_, tape) = model.forward_tape(input, t, tokens)?;
    let (grads, dx) = model.backward(&tape, &r)?;

    let floor = GRAD_CHECK_FLOOR * grads.iter().map(|g| max_abs(g)).fold(max_abs(&flat(&dx)), f64::max);
    let mut tensors = Vec::with_capacity(model.params.len());
    for i in 0..model.params.len() {
        let mut numeric = vec![0.0; grads[i].len()];
        for j in 0..numeric.len() {
            let orig = model.params.values[i][j];
            model.params.values[i][j] = orig + h;
            let up = loss(model, input)?;
            model.params.values[i][j] = orig - h;
            let dn = loss(model, input)?;
            model.params.values[i][j] = orig;
            numeric[j] = (up - dn) / (2.0 * h);
        }
        tensors.push((model.params.name(i).to_string(), rel_error(&grads[i], &numeric, floor)));
    }

    let mut x = input.to_vec();
    let mut an = Vec::new();
    let mut nu = Vec::new();
    for i in 0..x.len() {
        for c in 0..IN_CHANNELS {
            let orig = x[i][c];
            x[i][c] = orig + h;
            let up = loss(model, &x)?;
            x[i][c] = orig - h;
            let dn = loss(model, &x)?;
            x[i][c] = orig;
            an.push(dx[i][c]);
            nu.push((up - dn) / (2.0 * h));
        }
    }
    Ok(GradCheck {
        tensors,
        input: rel_error(&an, &nu, floor),
    })
}

fn flat(rows: &[InputRow]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

/// Add `U(-scale, scale)` noise to every parameter so that zero-initialized
/// layers carry gradient signal.
pub fn perturb_parameters(params: &mut ParameterSet, seed: u64, scale: f64) {
    let mut rng = crate::seed::rng(seed);
    for v in params.values.iter_mut() {
        for x in v.iter_mut() {
            *x += rng.gen_range(-scale..=scale);
        }
    }
}
