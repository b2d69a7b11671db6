//! One-step refinement of the decoded sequence.
//!
//! Frames are reshaped into per-frame patch tokens, the type-bias embedding
//! is added, and the single-step denoising closed form
//! `z0 = (z~ - sqrt(1 - abar_n) * eps(z~, n)) / sqrt(abar_n)` is applied with a
//! pluggable noise predictor. The bias is then removed (scaled by
//! `1 / sqrt(abar_n)`, since it passed through the division) and tokens are
//! reshaped back to frames and clamped.
//!
//! In the default direct mode the degraded tokens are treated as the noisy
//! latent `z^n = sqrt(abar_n) * z`. With the zero predictor the whole stage is
//! then the identity up to rounding, and with the smoothing predictor it
//! reduces to `(1 - g) z + g G(z)` for a Gaussian blur `G` and a per-token gain
//! `g` read from component 0 of the type bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bytes::{Reader, Writer};
use crate::conv::Conv3d;
use crate::error::{Error, Result};
use crate::frame::{Frame, FrameSequence};
use crate::fte::{build_type_map, embed_types, FteWeights, TypeEmbedding};
use crate::plane::{convolve_axis, gaussian_taps};
use crate::schedule::GopSchedule;

/// Linear-beta diffusion schedule with cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta_i` interpolates linearly from `beta_start` (i = 1) to `beta_end`
    /// (i = N); `abar_n = prod_{i <= n} (1 - beta_i)`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!("invalid noise schedule: {steps} steps, beta {beta_start}..{beta_end}")));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| if steps == 1 { beta_start } else { beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64 })
            .collect();
        let mut acc = 1.0;
        let alpha_bar = beta
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { beta, alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// `beta_n` for `1 <= n <= N`.
    pub fn beta(&self, n: usize) -> Result<f64> {
        self.check(n)?;
        if n == 0 {
            return Err(Error::Timestep { n, max: self.steps() });
        }
        Ok(self.beta[n - 1])
    }

    /// `abar_n`, with `abar_0 = 1`.
    pub fn alpha_bar(&self, n: usize) -> Result<f64> {
        self.check(n)?;
        Ok(if n == 0 { 1.0 } else { self.alpha_bar[n - 1] })
    }

    fn check(&self, n: usize) -> Result<()> {
        if n > self.steps() {
            return Err(Error::Timestep { n, max: self.steps() });
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid default schedule")
    }
}

/// Patch tokens of a frame sequence.
///
/// Token `(gt, gy, gx)` covers frames `gt*pt..`, rows `gy*ph..` and columns
/// `gx*pw..`; its vector is laid out `[c][dt][py][px]`, so
/// `D = pt * ph * pw * channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenVolume {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    patch: (usize, usize, usize),
    /// Diffusion timestep tag; 0 means clean.
    pub timestep: usize,
    data: Vec<f64>,
    bias: Option<TypeEmbedding>,
}

impl TokenVolume {
    pub fn grid(&self) -> (usize, usize, usize) {
        let (pt, ph, pw) = self.patch;
        (self.frames / pt, self.height / ph, self.width / pw)
    }

    pub fn token_dim(&self) -> usize {
        let (pt, ph, pw) = self.patch;
        pt * ph * pw * self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn token(&self, t: usize, y: usize, x: usize) -> &[f64] {
        let (_, gh, gw) = self.grid();
        let d = self.token_dim();
        let i = ((t * gh + y) * gw + x) * d;
        &self.data[i..i + d]
    }

    /// Type bias currently added to the tokens, if any.
    pub fn bias(&self) -> Option<&TypeEmbedding> {
        self.bias.as_ref()
    }

    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        if data.len() != self.data.len() {
            return Err(Error::Shape(format!("{} values for a {}-value token volume", data.len(), self.data.len())));
        }
        Ok(Self { data, ..self.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    /// Offset into `data` of pixel `(c, t, y, x)`.
    fn offset(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        let (pt, ph, pw) = self.patch;
        let (_, gh, gw) = self.grid();
        let token = ((t / pt) * gh + y / ph) * gw + x / pw;
        token * self.token_dim() + ((c * pt + t % pt) * ph + y % ph) * pw + x % pw
    }

    /// Pixel view `[c][t][y][x]`.
    pub fn to_pixels(&self, values: &[f64]) -> Vec<f64> {
        let (t, h, w, ch) = (self.frames, self.height, self.width, self.channels);
        let mut out = vec![0.0; values.len()];
        for c in 0..ch {
            for ti in 0..t {
                for y in 0..h {
                    for x in 0..w {
                        out[((c * t + ti) * h + y) * w + x] = values[self.offset(c, ti, y, x)];
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`Self::to_pixels`].
    pub fn from_pixels(&self, pixels: &[f64]) -> Vec<f64> {
        let (t, h, w, ch) = (self.frames, self.height, self.width, self.channels);
        let mut out = vec![0.0; pixels.len()];
        for c in 0..ch {
            for ti in 0..t {
                for y in 0..h {
                    for x in 0..w {
                        out[self.offset(c, ti, y, x)] = pixels[((c * t + ti) * h + y) * w + x];
                    }
                }
            }
        }
        out
    }

    /// Pixel volume dimensions `(channels, t, h, w)`.
    pub fn pixel_dims(&self) -> (usize, usize, usize, usize) {
        (self.channels, self.frames, self.height, self.width)
    }
}

pub fn tokenize(seq: &FrameSequence, patch: (usize, usize, usize)) -> Result<TokenVolume> {
    let (pt, ph, pw) = patch;
    let (t, h, w) = (seq.len(), seq.height(), seq.width());
    if pt == 0 || ph == 0 || pw == 0 || t % pt != 0 || h % ph != 0 || w % pw != 0 {
        return Err(Error::Shape(format!("{t}x{h}x{w} is not tiled by patch {patch:?}")));
    }
    let mut z = TokenVolume {
        frames: t,
        height: h,
        width: w,
        channels: seq.channels(),
        patch,
        timestep: 0,
        data: Vec::new(),
        bias: None,
    };
    let mut pixels = Vec::with_capacity(t * h * w * seq.channels());
    for c in 0..seq.channels() {
        for f in seq.iter() {
            pixels.extend(f.plane(c).iter().map(|&v| v as f64));
        }
    }
    z.data = z.from_pixels(&pixels);
    Ok(z)
}

/// Reshapes tokens back to frames, clamping to `[0, 1]`.
pub fn detokenize(z: &TokenVolume) -> Result<FrameSequence> {
    let pixels = z.to_pixels(&z.data);
    let (ch, t, h, w) = z.pixel_dims();
    let frames = (0..t)
        .map(|ti| {
            let mut data = Vec::with_capacity(ch * h * w);
            for c in 0..ch {
                let start = (c * t + ti) * h * w;
                data.extend(pixels[start..start + h * w].iter().map(|&v| v.clamp(0.0, 1.0) as f32));
            }
            Frame::from_data(w, h, ch, data)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames)
}

fn check_bias(z: &TokenVolume, c: &TypeEmbedding) -> Result<()> {
    if c.grid != z.grid() || c.dim > z.token_dim() {
        return Err(Error::Shape(format!(
            "embedding grid {:?} dim {} vs token grid {:?} dim {}",
            c.grid,
            c.dim,
            z.grid(),
            z.token_dim()
        )));
    }
    Ok(())
}

/// Adds `scale * c` to the first `c.dim` components of every token.
fn apply_bias(z: &TokenVolume, c: &TypeEmbedding, scale: f64) -> Vec<f64> {
    let d = z.token_dim();
    let mut data = z.data.clone();
    for (tok, bias) in data.chunks_mut(d).zip(c.data.chunks(c.dim)) {
        for (v, &b) in tok.iter_mut().zip(bias) {
            *v += scale * b as f64;
        }
    }
    data
}

/// `z~ = z (+) c`: element-wise addition on the first `E` token components.
pub fn add_type_bias(z: &TokenVolume, c: &TypeEmbedding) -> Result<TokenVolume> {
    check_bias(z, c)?;
    Ok(TokenVolume { data: apply_bias(z, c, 1.0), bias: Some(c.clone()), ..z.clone() })
}

/// Removes `scale * c` for the attached bias `c`.
pub fn remove_type_bias(z: &TokenVolume, scale: f64) -> Result<TokenVolume> {
    let Some(c) = &z.bias else {
        return Ok(z.clone());
    };
    Ok(TokenVolume { data: apply_bias(z, c, -scale), bias: None, ..z.clone() })
}

/// A learned-predictor stand-in: a stack of 3-D convolutions over the pixel
/// view, read from a `"SITP"` file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalPredictor {
    /// `(convolution, relu after it)`.
    pub layers: Vec<(Conv3d, bool)>,
}

const SITP_MAGIC: &[u8; 4] = b"SITP";
const SITP_VERSION: u32 = 1;

impl ExternalPredictor {
    /// `"SITP"`, `u32` version, `u32` layer count, then per layer a `u8`
    /// activation (0 none, 1 ReLU) and a convolution record.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(SITP_MAGIC).u32(SITP_VERSION).u32(self.layers.len() as u32);
        for (conv, relu) in &self.layers {
            w.u8(*relu as u8);
            conv.write(&mut w);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != SITP_MAGIC {
            return Err(Error::Malformed("missing SITP magic".into()));
        }
        let version = r.u32()?;
        if version != SITP_VERSION {
            return Err(Error::Malformed(format!("SITP version {version}")));
        }
        let n = r.u32()? as usize;
        if n == 0 || n > 256 {
            return Err(Error::Malformed(format!("{n} predictor layers")));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let relu = match r.u8()? {
                0 => false,
                1 => true,
                a => return Err(Error::Malformed(format!("activation {a}"))),
            };
            layers.push((Conv3d::read(&mut r)?, relu));
        }
        r.expect_end()?;
        for pair in layers.windows(2) {
            if pair[0].0.out_channels != pair[1].0.in_channels {
                return Err(Error::Malformed("predictor layer channels do not chain".into()));
            }
        }
        Ok(Self { layers })
    }

    fn run(&self, pixels: &[f64], dims: (usize, usize, usize, usize)) -> Result<Vec<f64>> {
        let (ch, t, h, w) = dims;
        let (first, last) = (&self.layers[0].0, &self.layers[self.layers.len() - 1].0);
        if first.in_channels != ch || last.out_channels != ch {
            return Err(Error::Shape(format!(
                "predictor maps {} to {} channels, tokens have {ch}",
                first.in_channels, last.out_channels
            )));
        }
        let mut cur: Vec<f32> = pixels.iter().map(|&v| v as f32).collect();
        for (conv, relu) in &self.layers {
            cur = conv.apply(&cur, (t, h, w))?;
            if *relu {
                cur.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(cur.into_iter().map(f64::from).collect())
    }
}

/// Noise predictor `eps(z~, n)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Zero,
    /// `eps = g (u - G u) / sqrt(1 - abar_n)`, `u = z~ - c`, with `G` a separable
    /// Gaussian blur over `(t, y, x)` of the pixel view and `g` the type-bias
    /// component 0 (1 when no bias is attached).
    Smoothing {
        sigma_spatial: f64,
        sigma_temporal: f64,
    },
    /// Returns a stored noise tensor in token layout.
    Oracle(Vec<f64>),
    External(ExternalPredictor),
}

impl Predictor {
    pub fn smoothing() -> Self {
        Predictor::Smoothing { sigma_spatial: 1.0, sigma_temporal: 0.5 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Zero => "zero",
            Predictor::Smoothing { .. } => "smoothing",
            Predictor::Oracle(_) => "oracle",
            Predictor::External(_) => "external",
        }
    }

    pub fn predict(&self, z: &TokenVolume, n: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        let out = match self {
            Predictor::Zero => vec![0.0; z.len()],
            Predictor::Oracle(eps) => {
                if eps.len() != z.len() {
                    return Err(Error::Shape(format!("oracle noise has {} values, tokens {}", eps.len(), z.len())));
                }
                eps.clone()
            }
            Predictor::Smoothing { sigma_spatial, sigma_temporal } => {
                let abar = sched.alpha_bar(n)?;
                let norm = (1.0 - abar).sqrt();
                if norm == 0.0 {
                    return Ok(vec![0.0; z.len()]);
                }
                let u = remove_type_bias(z, 1.0)?;
                let blurred = blur(&u, *sigma_spatial, *sigma_temporal);
                let d = z.token_dim();
                let mut eps: Vec<f64> = u.data.iter().zip(&blurred).map(|(a, b)| (a - b) / norm).collect();
                if let Some(c) = &z.bias {
                    for (tok, bias) in eps.chunks_mut(d).zip(c.data.chunks(c.dim)) {
                        let g = bias[0] as f64;
                        tok.iter_mut().for_each(|v| *v *= g);
                    }
                }
                eps
            }
            Predictor::External(net) => {
                let pixels = z.to_pixels(&z.data);
                let eps = net.run(&pixels, z.pixel_dims())?;
                z.from_pixels(&eps)
            }
        };
        Ok(out)
    }
}

fn blur(z: &TokenVolume, sigma_spatial: f64, sigma_temporal: f64) -> Vec<f64> {
    let (ch, t, h, w) = z.pixel_dims();
    let mut v: Vec<f32> = z.to_pixels(&z.data).into_iter().map(|x| x as f32).collect();
    let s = gaussian_taps(sigma_spatial);
    v = convolve_axis(&v, ch * t * h, w, 1, &s);
    v = convolve_axis(&v, ch * t, h, w, &s);
    v = convolve_axis(&v, ch, t, h * w, &gaussian_taps(sigma_temporal));
    z.from_pixels(&v.into_iter().map(f64::from).collect::<Vec<_>>())
}

/// `z0 = (z~ - sqrt(1 - abar_n) eps) / sqrt(abar_n)`; `n = 0` is the identity.
pub fn one_step_denoise(z_tilde: &TokenVolume, n: usize, sched: &NoiseSchedule, pred: &Predictor) -> Result<TokenVolume> {
    let abar = sched.alpha_bar(n)?;
    if n == 0 {
        return Ok(TokenVolume { timestep: 0, ..z_tilde.clone() });
    }
    let eps = pred.predict(z_tilde, n, sched)?;
    if eps.len() != z_tilde.len() {
        return Err(Error::Shape("predictor changed the token shape".into()));
    }
    let (a, b) = (abar.sqrt(), (1.0 - abar).sqrt());
    let data = z_tilde.data.iter().zip(&eps).map(|(z, e)| (z - b * e) / a).collect();
    Ok(TokenVolume { data, timestep: 0, ..z_tilde.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Treat the degraded tokens as the noisy latent: `z^n = sqrt(abar_n) z`.
    Direct,
    /// Forward-noise with seeded Gaussian noise: `z^n = sqrt(abar_n) z + sqrt(1 - abar_n) eps`.
    Noised,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub timestep: usize,
    /// Spatial patch `(ph, pw)`; the temporal patch is 1.
    pub patch: (usize, usize),
    pub mode: NoiseMode,
    pub seed: u64,
    /// Require `T = 8n + 1`, as a video-latent tokenizer would.
    pub require_8n1: bool,
    pub schedule: NoiseSchedule,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            timestep: 799,
            patch: (8, 8),
            mode: NoiseMode::Direct,
            seed: 0,
            require_8n1: false,
            schedule: NoiseSchedule::default(),
        }
    }
}

/// Forward process at timestep `n`.
pub fn noise_tokens(z: &TokenVolume, n: usize, rc: &RefineConfig, seed: u64) -> Result<TokenVolume> {
    let abar = rc.schedule.alpha_bar(n)?;
    let a = abar.sqrt();
    let mut out = match rc.mode {
        NoiseMode::Direct => z.map(|v| a * v),
        NoiseMode::Noised => {
            let b = (1.0 - abar).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = z
                .data
                .iter()
                .map(|&v| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    a * v + b * e
                })
                .collect();
            z.with_data(data)?
        }
    };
    out.timestep = n;
    Ok(out)
}

fn refine_at(
    x: &FrameSequence,
    sched: &GopSchedule,
    rc: &RefineConfig,
    weights: &FteWeights,
    pred: &Predictor,
    n: usize,
    seed: u64,
) -> Result<FrameSequence> {
    if x.len() != sched.length() {
        return Err(Error::Shape(format!("{} frames for a {}-frame schedule", x.len(), sched.length())));
    }
    if rc.require_8n1 && x.len() % 8 != 1 {
        return Err(Error::Config(format!("{} frames is not of the form 8n+1", x.len())));
    }
    let z = tokenize(x, (1, rc.patch.0, rc.patch.1))?;
    let c = embed_types(&build_type_map(sched, x.height(), x.width()), z.grid(), weights)?;
    let zn = noise_tokens(&z, n, rc, seed)?;
    let z_tilde = add_type_bias(&zn, &c)?;
    let z0 = one_step_denoise(&z_tilde, n, &rc.schedule, pred)?;
    let abar = rc.schedule.alpha_bar(n)?;
    let clean = remove_type_bias(&z0, if n == 0 { 1.0 } else { 1.0 / abar.sqrt() })?;
    detokenize(&clean)
}

/// Tokenize, add the type bias, denoise in one step at `rc.timestep`, remove
/// the bias, detokenize and clamp. Consumes no bits.
pub fn refine_sequence(
    x: &FrameSequence,
    sched: &GopSchedule,
    rc: &RefineConfig,
    weights: &FteWeights,
    pred: &Predictor,
) -> Result<FrameSequence> {
    refine_at(x, sched, rc, weights, pred, rc.timestep, rc.seed)
}

/// Repeats forward noising and one-step denoising `k` times at timesteps
/// `round(n (k - i) / k)`, `i = 0..k`. `k = 1` equals [`refine_sequence`].
pub fn refine_k_steps(
    x: &FrameSequence,
    sched: &GopSchedule,
    rc: &RefineConfig,
    weights: &FteWeights,
    pred: &Predictor,
    k: usize,
) -> Result<FrameSequence> {
    if k == 0 {
        return Err(Error::Config("step count must be >= 1".into()));
    }
    let mut cur = x.clone();
    for i in 0..k {
        let n = ((rc.timestep * (k - i)) as f64 / k as f64).round() as usize;
        cur = refine_at(&cur, sched, rc, weights, pred, n, rc.seed.wrapping_add(i as u64))?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_schedule;
    use crate::synth::{generate, GeneratorConfig, GeneratorKind};

    /// `abar_n` for the default schedule, from a 40-digit product evaluated
    /// independently.
    const ABAR_799: f64 = 0.001_557_026_917_699_189;
    const ABAR_500: f64 = 0.078_587_242_881_778_24;
    const ABAR_1000: f64 = 4.035_829_765_375_683_5e-5;

    #[test]
    fn schedule_values() {
        let s = NoiseSchedule::default();
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
        assert!((s.alpha_bar(1).unwrap() - 0.9999).abs() < 1e-15);
        for (n, v) in [(500, ABAR_500), (799, ABAR_799), (1000, ABAR_1000)] {
            assert!(((s.alpha_bar(n).unwrap() - v) / v).abs() < 1e-12, "n = {n}");
        }
        assert!(matches!(s.alpha_bar(1001), Err(Error::Timestep { .. })));
        assert_eq!(NoiseSchedule::linear(1, 0.5, 0.5).unwrap().alpha_bar(1).unwrap(), 0.5);
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
    }

    fn seq(t: usize, w: usize, h: usize, ch: usize) -> FrameSequence {
        generate(&GeneratorConfig::new(GeneratorKind::rotating(), w, h, t).with_channels(ch)).unwrap()
    }

    #[test]
    fn token_shapes_and_round_trip() {
        let s = seq(9, 64, 64, 3);
        let z = tokenize(&s, (1, 8, 8)).unwrap();
        assert_eq!(z.grid(), (9, 8, 8));
        assert_eq!(z.token_dim(), 64 * 3);
        assert_eq!(detokenize(&z).unwrap(), s);
        let one = seq(1, 16, 8, 1);
        assert_eq!(tokenize(&one, (1, 8, 8)).unwrap().grid(), (1, 1, 2));
        assert!(tokenize(&one, (1, 3, 8)).is_err());
        assert_eq!(z.from_pixels(&z.to_pixels(z.data())), z.data());
    }

    #[test]
    fn bias_touches_only_leading_components() {
        let s = seq(3, 16, 16, 1);
        let sched = build_schedule(3, 2).unwrap();
        let z = tokenize(&s, (1, 8, 8)).unwrap();
        let c = embed_types(&build_type_map(&sched, 16, 16), z.grid(), &FteWeights::default_kernel()).unwrap();
        let zt = add_type_bias(&z, &c).unwrap();
        for (a, b) in z.data().chunks(64).zip(zt.data().chunks(64)) {
            assert_eq!(&a[8..], &b[8..]);
        }
        assert_eq!(remove_type_bias(&zt, 1.0).unwrap().data(), z.data());
    }

    #[test]
    fn zero_predictor_divides_by_sqrt_abar() {
        let s = seq(2, 8, 8, 1);
        let z = tokenize(&s, (1, 8, 8)).unwrap();
        let sch = NoiseSchedule::default();
        let out = one_step_denoise(&z, 799, &sch, &Predictor::Zero).unwrap();
        let a = sch.alpha_bar(799).unwrap().sqrt();
        for (o, i) in out.data().iter().zip(z.data()) {
            assert_eq!(*o, i / a);
        }
        let same = one_step_denoise(&z, 0, &sch, &Predictor::smoothing()).unwrap();
        assert_eq!(same.data(), z.data());
    }

    #[test]
    fn identity_configuration_is_exact() {
        let s = seq(9, 16, 16, 3);
        let sched = build_schedule(9, 2).unwrap();
        let rc = RefineConfig { timestep: 0, ..Default::default() };
        let out = refine_sequence(&s, &sched, &rc, &FteWeights::zeros(), &Predictor::Zero).unwrap();
        assert_eq!(out, s);
        // also exact with the default kernel: bias is added and removed in f64
        let out = refine_sequence(&s, &sched, &rc, &FteWeights::default_kernel(), &Predictor::Zero).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn smoothing_in_direct_mode_is_a_gain_weighted_blur() {
        let s = seq(3, 16, 16, 1);
        let sched = build_schedule(3, 2).unwrap();
        let rc = RefineConfig::default();
        let pred = Predictor::smoothing();
        let out = refine_sequence(&s, &sched, &rc, &FteWeights::default_kernel(), &pred).unwrap();
        let z = tokenize(&s, (1, 8, 8)).unwrap();
        let g = blur(&z, 1.0, 0.5);
        let c = embed_types(&build_type_map(&sched, 16, 16), z.grid(), &FteWeights::default_kernel()).unwrap();
        let mut expect = z.data().to_vec();
        for ((e, gz), bias) in expect.chunks_mut(64).zip(g.chunks(64)).zip(c.data.chunks(c.dim)) {
            let gain = bias[0] as f64;
            for (v, b) in e.iter_mut().zip(gz) {
                *v = (1.0 - gain) * *v + gain * b;
            }
        }
        let expect = detokenize(&z.with_data(expect).unwrap()).unwrap();
        for (a, b) in out.iter().flat_map(|f| f.data()).zip(expect.iter().flat_map(|f| f.data())) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn noised_mode_is_seeded() {
        let s = seq(3, 16, 16, 1);
        let sched = build_schedule(3, 2).unwrap();
        let rc = RefineConfig { mode: NoiseMode::Noised, seed: 5, ..Default::default() };
        let w = FteWeights::default_kernel();
        let a = refine_sequence(&s, &sched, &rc, &w, &Predictor::smoothing()).unwrap();
        let b = refine_sequence(&s, &sched, &rc, &w, &Predictor::smoothing()).unwrap();
        assert_eq!(a, b);
        let other = RefineConfig { seed: 6, ..rc };
        assert_ne!(a, refine_sequence(&s, &sched, &other, &w, &Predictor::smoothing()).unwrap());
    }

    #[test]
    fn external_predictor_file_round_trip() {
        let mut wts = vec![0.0; 27];
        wts[13] = 0.5;
        let net = ExternalPredictor { layers: vec![(Conv3d::new(1, 1, (3, 3, 3), wts, vec![0.0]).unwrap(), false)] };
        let back = ExternalPredictor::from_bytes(&net.to_bytes()).unwrap();
        assert_eq!(back, net);
        let s = seq(2, 8, 8, 1);
        let z = tokenize(&s, (1, 8, 8)).unwrap();
        let eps = Predictor::External(back).predict(&z, 10, &NoiseSchedule::default()).unwrap();
        for (e, v) in eps.iter().zip(z.data()) {
            assert!((e - 0.5 * v).abs() < 1e-6);
        }
        let rgb = tokenize(&seq(2, 8, 8, 3), (1, 8, 8)).unwrap();
        assert!(Predictor::External(net).predict(&rgb, 10, &NoiseSchedule::default()).is_err());
    }

    #[test]
    fn eight_n_plus_one_is_optional() {
        let s = seq(6, 16, 16, 1);
        let sched = build_schedule(6, 2).unwrap();
        let w = FteWeights::default_kernel();
        assert!(refine_sequence(&s, &sched, &RefineConfig::default(), &w, &Predictor::Zero).is_ok());
        let strict = RefineConfig { require_8n1: true, ..Default::default() };
        assert!(refine_sequence(&s, &sched, &strict, &w, &Predictor::Zero).is_err());
    }

    #[test]
    fn k_steps_with_one_step_matches_single() {
        let s = seq(3, 16, 16, 1);
        let sched = build_schedule(3, 2).unwrap();
        let rc = RefineConfig::default();
        let w = FteWeights::default_kernel();
        let p = Predictor::smoothing();
        assert_eq!(refine_k_steps(&s, &sched, &rc, &w, &p, 1).unwrap(), refine_sequence(&s, &sched, &rc, &w, &p).unwrap());
        assert!(refine_k_steps(&s, &sched, &rc, &w, &p, 0).is_err());
    }
}
