//! Structural studies: prediction-chain length, MV interval, stem versus
//! direct coding, and multi-step refinement cost.
//!
//! Every runner is deterministic for a given input and configuration except
//! for the wall-clock column of the step study.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use sit_core::backbone::encode_intra;
use sit_core::metrics::{psnr, psnr_seq, ssim, ssim_seq};
use sit_core::mv::encode_mv;
use sit_core::schedule::is_compatible;
use sit_core::synth::{generate, GeneratorConfig};
use sit_core::{CodecConfig, FrameSequence};

use crate::bdrate::{bd_rate, RdCurve};
use crate::error::{HarnessError, Result};
use crate::pipeline::{encode, refine_gops, RefineOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRow {
    pub k: usize,
    pub psnr: f64,
    pub ssim: f64,
    /// Bits of the k-th link alone.
    pub link_bits: u64,
    /// Bits of all links up to `k`.
    pub cumulative_bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub generator: String,
    pub rows: Vec<ChainRow>,
}

impl ChainReport {
    pub fn psnr_non_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].psnr <= w[0].psnr)
    }

    pub fn bits_non_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].cumulative_bits >= w[0].cumulative_bits)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("generator,k,psnr,ssim,link_bits,cumulative_bits\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.4},{:.6},{},{}", self.generator, r.k, r.psnr, r.ssim, r.link_bits, r.cumulative_bits);
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let pts = self.rows.iter().map(|r| (r.k as f64, r.psnr)).collect();
        svg_line_chart(&format!("chain length ({})", self.generator), "k", "PSNR (dB)", &[(self.generator.clone(), pts)])
    }
}

/// Codes frame `k` of the generated clip through a `k`-link flow chain
/// rooted at the intra-coded frame 0: each link warps the previous link's
/// reconstruction with its own coded flow. `k = 1` is ordinary MV coding.
pub fn experiment_chain(gen: &GeneratorConfig, k_max: usize, cfg: &CodecConfig) -> Result<ChainReport> {
    if k_max < 2 {
        return Err(HarnessError::Experiment(format!("k_max {k_max} < 2")));
    }
    let mut g = gen.clone();
    g.frames = k_max + 1;
    let seq = generate(&g)?;
    let (_, mut recon) = encode_intra(seq.frame(0), cfg)?;
    let mut rows = Vec::with_capacity(k_max);
    let mut cumulative = 0;
    for k in 1..=k_max {
        let target = seq.frame(k);
        let (payload, next) = encode_mv(&recon, target, k + 1, k, cfg)?;
        cumulative += payload.total_bits();
        rows.push(ChainRow {
            k,
            psnr: psnr(target, &next)?,
            ssim: ssim(target, &next)?,
            link_bits: payload.total_bits(),
            cumulative_bits: cumulative,
        });
        recon = next;
    }
    Ok(ChainReport { generator: gen.kind.name().to_string(), rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRow {
    pub sequence: String,
    pub interval: usize,
    pub backbone: usize,
    pub frames: usize,
    pub bpp: f64,
    pub psnr: f64,
    pub ssim: f64,
}

impl IntervalRow {
    pub fn proportion(&self) -> f64 {
        self.backbone as f64 / self.frames as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalTable {
    pub rows: Vec<IntervalRow>,
}

impl IntervalTable {
    fn for_interval(&self, m: usize) -> impl Iterator<Item = &IntervalRow> {
        self.rows.iter().filter(move |r| r.interval == m)
    }

    pub fn mean_bpp(&self, m: usize) -> f64 {
        mean(self.for_interval(m).map(|r| r.bpp))
    }

    pub fn mean_ssim(&self, m: usize) -> f64 {
        mean(self.for_interval(m).map(|r| r.ssim))
    }

    /// Backbone share at interval `m`, as a percentage rounded to one decimal.
    pub fn proportion_label(&self, m: usize) -> Option<String> {
        self.for_interval(m).next().map(|r| format!("{:.1}%", 100.0 * r.proportion()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sequence,interval,backbone,frames,proportion,bpp,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.6},{:.4},{:.6}",
                r.sequence,
                r.interval,
                r.backbone,
                r.frames,
                r.proportion(),
                r.bpp,
                r.psnr,
                r.ssim
            );
        }
        out
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Codes every sequence once per interval, with the GOP spanning the whole
/// sequence. Sequences run in parallel.
pub fn experiment_interval(suite: &[(String, FrameSequence)], intervals: &[usize], cfg: &CodecConfig) -> Result<IntervalTable> {
    let jobs: Vec<(&str, &FrameSequence, usize)> =
        suite.iter().flat_map(|(name, seq)| intervals.iter().map(move |&m| (name.as_str(), seq, m))).collect();
    for &(name, seq, m) in &jobs {
        if !is_compatible(seq.len(), m) {
            return Err(HarnessError::Experiment(format!("{name}: {} frames has no schedule for interval {m}", seq.len())));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(name, seq, m)| {
            let mut c = cfg.clone();
            c.gop_length = seq.len();
            c.mv_interval = m;
            let out = encode(seq, &c)?;
            Ok(IntervalRow {
                sequence: name.to_string(),
                interval: m,
                backbone: out.report.backbone_count(),
                frames: seq.len(),
                bpp: out.report.bpp(),
                psnr: psnr_seq(seq, &out.x_tilde)?,
                ssim: ssim_seq(seq, &out.x_tilde)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntervalTable { rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemPoint {
    pub step_scale: f64,
    pub direct_bpp: f64,
    pub stem_bpp: f64,
    pub direct_ssim: f64,
    pub stem_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemReport {
    pub points: Vec<StemPoint>,
    pub direct: RdCurve,
    pub stem: RdCurve,
    /// BD-rate of stem relative to direct on the SSIM axis, in percent.
    pub bd_rate: f64,
}

impl StemReport {
    pub fn stem_cheaper_everywhere(&self) -> bool {
        self.points.iter().all(|p| p.stem_bpp < p.direct_bpp)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step_scale,direct_bpp,direct_ssim,stem_bpp,stem_ssim\n");
        for p in &self.points {
            let _ =
                writeln!(out, "{},{:.6},{:.6},{:.6},{:.6}", p.step_scale, p.direct_bpp, p.direct_ssim, p.stem_bpp, p.stem_ssim);
        }
        let _ = writeln!(out, "# bd_rate_ssim_percent,{:.3}", self.bd_rate);
        out
    }

    pub fn to_svg(&self) -> String {
        let series = [("direct", &self.direct), ("stem", &self.stem)]
            .iter()
            .map(|(n, c)| (n.to_string(), c.points().to_vec()))
            .collect::<Vec<_>>();
        svg_line_chart("stem vs direct", "bpp", "SSIM", &series)
    }
}

/// Ladder of quantizer-step multipliers used by default.
pub const DEFAULT_LADDER: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// Codes the suite at each ladder point twice: every frame through the
/// backbone codec ("direct") and with the configured MV schedule ("stem").
/// Rates and SSIM are averaged over the suite.
pub fn experiment_stem(suite: &[(String, FrameSequence)], cfg: &CodecConfig, ladder: &[f64]) -> Result<StemReport> {
    if ladder.len() < 4 {
        return Err(HarnessError::Experiment(format!("ladder has {} points; at least 4 required", ladder.len())));
    }
    if cfg.mv_interval == 0 {
        return Err(HarnessError::Experiment("stem mode needs mv_interval > 0".into()));
    }
    let jobs: Vec<(usize, usize, bool)> =
        (0..ladder.len()).flat_map(|l| (0..suite.len()).flat_map(move |s| [(l, s, false), (l, s, true)])).collect();
    let results = jobs
        .par_iter()
        .map(|&(l, s, stem)| {
            let mut c = cfg.with_step_scale(ladder[l]);
            if !stem {
                c.mv_interval = 0;
            }
            let seq = &suite[s].1;
            let out = encode(seq, &c)?;
            Ok((out.report.bpp(), ssim_seq(seq, &out.x_tilde)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = suite.len() as f64;
    let mut points = Vec::with_capacity(ladder.len());
    for (l, &scale) in ladder.iter().enumerate() {
        let (mut p, mut q) = ([0.0; 2], [0.0; 2]);
        for (&(jl, _, stem), &(bpp, s)) in jobs.iter().zip(&results) {
            if jl == l {
                p[stem as usize] += bpp / n;
                q[stem as usize] += s / n;
            }
        }
        points.push(StemPoint { step_scale: scale, direct_bpp: p[0], stem_bpp: p[1], direct_ssim: q[0], stem_ssim: q[1] });
    }
    let direct = RdCurve::new("ssim", points.iter().map(|p| (p.direct_bpp, p.direct_ssim)).collect())?;
    let stem = RdCurve::new("ssim", points.iter().map(|p| (p.stem_bpp, p.stem_ssim)).collect())?;
    let bd = bd_rate(&direct, &stem)?;
    Ok(StemReport { points, direct, stem, bd_rate: bd })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepsRow {
    pub k: usize,
    pub seconds_per_frame: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepsTable {
    pub rows: Vec<StepsRow>,
}

impl StepsTable {
    pub fn time_strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].seconds_per_frame > w[0].seconds_per_frame)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,seconds_per_frame,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6e},{:.4},{:.6}", r.k, r.seconds_per_frame, r.psnr, r.ssim);
        }
        out
    }
}

/// Encodes once, then refines with `k` denoising passes for each entry of
/// `steps`. Time is the fastest of `repeats` runs, divided by frame count.
pub fn experiment_steps(
    seq: &FrameSequence,
    cfg: &CodecConfig,
    steps: &[usize],
    opts: &RefineOptions,
    repeats: usize,
) -> Result<StepsTable> {
    let out = encode(seq, cfg)?;
    let mut rows = Vec::with_capacity(steps.len());
    for &k in steps {
        let o = RefineOptions { steps: k, ..opts.clone() };
        let mut best = f64::INFINITY;
        let mut refined = None;
        for _ in 0..repeats.max(1) {
            let t0 = Instant::now();
            let r = refine_gops(&out.gops, seq.len(), seq.width(), seq.height(), &o)?;
            best = best.min(t0.elapsed().as_secs_f64());
            refined = Some(r);
        }
        let refined = refined.expect("at least one run");
        rows.push(StepsRow {
            k,
            seconds_per_frame: best / seq.len() as f64,
            psnr: psnr_seq(seq, &refined)?,
            ssim: ssim_seq(seq, &refined)?,
        });
    }
    Ok(StepsTable { rows })
}

/// Minimal SVG line chart with linear axes.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let all = series.iter().flat_map(|s| s.1.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if x1 <= x0 {
        (x0, x1) = (x0 - 1.0, x0 + 1.0);
    }
    if y1 <= y0 {
        (y0, y1) = (y0 - 1.0, y0 + 1.0);
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<text x="{}" y="16" text-anchor="middle">{title}</text>"#, W / 2.0);
    let _ = writeln!(out, r#"<path d="M{M},{M} V{} H{}" fill="none" stroke="black"/>"#, H - M, W - M);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, pos) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(out, r#"<text x="{pos:.1}" y="{}" text-anchor="middle">{v:.4}</text>"#, H - M + 14.0);
    }
    for (v, pos) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(out, r#"<text x="{}" y="{pos:.1}" text-anchor="end">{v:.4}</text>"#, M - 4.0);
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{colour}"/>"#, path.join(" "));
        let _ = writeln!(out, r#"<text x="{}" y="{}" fill="{colour}">{name}</text>"#, W - M + 4.0, M + 14.0 * i as f64);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use sit_core::synth::{standard_suite, GeneratorKind};

    #[test]
    fn chain_first_link_is_mv_coding() {
        let cfg = CodecConfig::default();
        let gen = GeneratorConfig::new(GeneratorKind::translating(), 64, 64, 3);
        let report = experiment_chain(&gen, 2, &cfg).unwrap();
        let seq = generate(&GeneratorConfig { frames: 2, ..gen }).unwrap();
        let (_, r0) = encode_intra(seq.frame(0), &cfg).unwrap();
        let (p, r1) = encode_mv(&r0, seq.frame(1), 2, 1, &cfg).unwrap();
        assert_eq!(report.rows[0].link_bits, p.total_bits());
        assert_eq!(report.rows[0].psnr, psnr(seq.frame(1), &r1).unwrap());
        assert!(experiment_chain(&gen, 1, &cfg).is_err());
    }

    #[test]
    fn interval_rejects_incompatible_length() {
        let suite = standard_suite(32, 32, 10, 1).unwrap();
        assert!(experiment_interval(&suite[..1], &[1, 2, 4], &CodecConfig::default()).is_err());
    }

    #[test]
    fn stem_needs_four_points() {
        let suite = standard_suite(32, 32, 9, 1).unwrap();
        assert!(experiment_stem(&suite, &CodecConfig::default(), &[1.0, 2.0, 4.0]).is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = svg_line_chart("t", "x", "y", &[("a".into(), vec![(0.0, 1.0), (1.0, 2.0)])]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
    }
}
