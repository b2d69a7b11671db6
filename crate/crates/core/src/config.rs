//! Codec parameters and their `key = value` text form.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::schedule::SUPPORTED_INTERVALS;

/// Per-block Laplacian scale rule for P-frame residuals:
/// `b = clamp(beta0 + beta1 * sqrt(gradient_energy), scale_min, scale_max)`,
/// in pixel-value units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextParams {
    pub beta0: f64,
    pub beta1: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for ContextParams {
    fn default() -> Self {
        Self { beta0: 0.004, beta1: 0.6, scale_min: 0.002, scale_max: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub gop_length: usize,
    /// MV frames between consecutive backbone frames; 0 codes every frame as
    /// a backbone frame.
    pub mv_interval: usize,
    pub block_size: usize,
    pub quant_step_intra: f64,
    pub quant_step_inter: f64,
    /// Flow quantizer step in pixels.
    pub quant_step_flow: f64,
    pub flow_downsample: usize,
    pub pyramid_levels: usize,
    pub context: ContextParams,
    pub refine_timestep: usize,
    pub lambda: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            gop_length: 33,
            mv_interval: 2,
            block_size: 8,
            quant_step_intra: 4.0 / 255.0,
            quant_step_inter: 6.0 / 255.0,
            quant_step_flow: 0.25,
            flow_downsample: 8,
            pyramid_levels: 3,
            context: ContextParams::default(),
            refine_timestep: 799,
            lambda: 0.5,
            k1: 10.0,
            k2: 0.1,
        }
    }
}

/// Keys that change the bitstream. Only these are written to containers.
const STREAM_KEYS: &[&str] = &[
    "gop_length",
    "mv_interval",
    "block_size",
    "quant_step_intra",
    "quant_step_inter",
    "quant_step_flow",
    "flow_downsample",
    "pyramid_levels",
    "ctx_beta0",
    "ctx_beta1",
    "ctx_scale_min",
    "ctx_scale_max",
];

const OTHER_KEYS: &[&str] = &["refine_timestep", "lambda", "k1", "k2"];

impl CodecConfig {
    /// Checks coding invariants. `refine` additionally requires a GOP length of
    /// the form `8n + 1`.
    pub fn validate(&self, refine: bool) -> Result<()> {
        if self.gop_length < 3 {
            return Err(Error::Config(format!("gop_length {} < 3", self.gop_length)));
        }
        if refine && self.gop_length % 8 != 1 {
            return Err(Error::Config(format!("gop_length {} is not 8n+1, required by the refinement stage", self.gop_length)));
        }
        if self.mv_interval != 0 && !SUPPORTED_INTERVALS.contains(&self.mv_interval) {
            return Err(Error::Config(format!("mv_interval {} unsupported", self.mv_interval)));
        }
        for (name, step) in [
            ("quant_step_intra", self.quant_step_intra),
            ("quant_step_inter", self.quant_step_inter),
            ("quant_step_flow", self.quant_step_flow),
        ] {
            if !(step.is_finite() && step > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {step}")));
            }
        }
        if !self.flow_downsample.is_power_of_two() || self.flow_downsample > 128 {
            return Err(Error::Config(format!("flow_downsample {} must be a power of two <= 128", self.flow_downsample)));
        }
        if !(2..=32).contains(&self.block_size) {
            return Err(Error::Config(format!("block_size {} not in 2..=32", self.block_size)));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::Config("pyramid_levels must be >= 1".into()));
        }
        let c = &self.context;
        if !(c.scale_min > 0.0 && c.scale_min <= c.scale_max && c.beta0 >= 0.0 && c.beta1 >= 0.0) {
            return Err(Error::Config(format!("invalid context parameters {c:?}")));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "gop_length" => self.gop_length = parse(key, value)?,
            "mv_interval" => self.mv_interval = parse(key, value)?,
            "block_size" => self.block_size = parse(key, value)?,
            "quant_step_intra" => self.quant_step_intra = parse(key, value)?,
            "quant_step_inter" => self.quant_step_inter = parse(key, value)?,
            "quant_step_flow" => self.quant_step_flow = parse(key, value)?,
            "flow_downsample" => self.flow_downsample = parse(key, value)?,
            "pyramid_levels" => self.pyramid_levels = parse(key, value)?,
            "ctx_beta0" => self.context.beta0 = parse(key, value)?,
            "ctx_beta1" => self.context.beta1 = parse(key, value)?,
            "ctx_scale_min" => self.context.scale_min = parse(key, value)?,
            "ctx_scale_max" => self.context.scale_max = parse(key, value)?,
            "refine_timestep" => self.refine_timestep = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "k1" => self.k1 = parse(key, value)?,
            "k2" => self.k2 = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "gop_length" => self.gop_length.to_string(),
            "mv_interval" => self.mv_interval.to_string(),
            "block_size" => self.block_size.to_string(),
            "quant_step_intra" => self.quant_step_intra.to_string(),
            "quant_step_inter" => self.quant_step_inter.to_string(),
            "quant_step_flow" => self.quant_step_flow.to_string(),
            "flow_downsample" => self.flow_downsample.to_string(),
            "pyramid_levels" => self.pyramid_levels.to_string(),
            "ctx_beta0" => self.context.beta0.to_string(),
            "ctx_beta1" => self.context.beta1.to_string(),
            "ctx_scale_min" => self.context.scale_min.to_string(),
            "ctx_scale_max" => self.context.scale_max.to_string(),
            "refine_timestep" => self.refine_timestep.to_string(),
            "lambda" => self.lambda.to_string(),
            "k1" => self.k1.to_string(),
            "k2" => self.k2.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_str(text)?;
        Ok(cfg)
    }

    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// All keys, one per line. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn to_kv_string(&self) -> String {
        self.kv_lines(STREAM_KEYS.iter().chain(OTHER_KEYS))
    }

    /// Only the keys that influence the bitstream.
    pub fn to_stream_kv(&self) -> String {
        self.kv_lines(STREAM_KEYS.iter())
    }

    fn kv_lines<'a>(&self, keys: impl Iterator<Item = &'a &'a str>) -> String {
        let mut out = String::new();
        for k in keys {
            let _ = writeln!(out, "{k} = {}", self.get(k));
        }
        out
    }

    /// CRC-32 of [`Self::to_stream_kv`].
    pub fn stream_digest(&self) -> u32 {
        crc32fast::hash(self.to_stream_kv().as_bytes())
    }

    /// Multiplies all three quantizer steps.
    pub fn with_step_scale(&self, factor: f64) -> Self {
        let mut c = self.clone();
        c.quant_step_intra *= factor;
        c.quant_step_inter *= factor;
        c.quant_step_flow *= factor;
        c
    }
}
