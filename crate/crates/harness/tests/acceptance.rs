//! Acceptance suite: one PASS/FAIL line per criterion, each with its time
//! budget. Criteria run sequentially so the timings are not skewed by each
//! other. Built without the libtest harness so the lines are never captured.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sit_core::entropy::{decode_symbols, encode_symbols, SymbolModel};
use sit_core::metrics::{bpp, ewarp, loss_stage2, loss_temp, SsimDistance};
use sit_core::refine::{one_step_denoise, tokenize, NoiseSchedule, Predictor};
use sit_core::schedule::next_compatible_length;
use sit_core::synth::{generate, ground_truth_flow, standard_suite, GeneratorConfig, GeneratorKind};
use sit_core::{build_schedule, estimate_flow, warp, CodecConfig, FlowField, Frame, FrameSequence, FrameType};
use sit_harness::bdrate::{bd_rate, RdCurve};
use sit_harness::experiments::{experiment_chain, experiment_interval, experiment_stem, DEFAULT_LADDER};
use sit_harness::pipeline::{decode, encode, encode_with, RefineOptions};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

fn hash(bytes: &[u8]) -> u64 {
    let mut h = DefaultHasher::new();
    bytes.hash(&mut h);
    h.finish()
}

fn seq_hash(seq: &FrameSequence) -> u64 {
    let mut h = DefaultHasher::new();
    for f in seq {
        f.data().iter().for_each(|v| v.to_bits().hash(&mut h));
    }
    h.finish()
}

fn suite(size: usize, frames: usize) -> Vec<(String, FrameSequence)> {
    standard_suite(size, size, frames, 0x5175).unwrap()
}

fn schedule_fidelity() -> Outcome {
    use FrameType::{Mv, I, P};
    let nine = build_schedule(9, 2).map_err(fail)?;
    let long = build_schedule(33, 2).map_err(fail)?;
    let expected = [Mv, I, Mv, Mv, P, Mv, Mv, P, Mv];
    check(
        nine.types() == expected && long.backbone_count() == 11 && long.mv_count() == 22,
        format!("T=9 {:?}; T=33 {} backbone / {} MV", nine.types(), long.backbone_count(), long.mv_count()),
    )
}

fn interval_proportions() -> Outcome {
    let table = experiment_interval(&suite(32, 33), &[1, 2, 4], &CodecConfig::default()).map_err(fail)?;
    let labels: Vec<String> = [1, 2, 4].iter().map(|&m| table.proportion_label(m).unwrap_or_default()).collect();
    check(labels == ["48.5%", "33.3%", "21.2%"], format!("{labels:?}"))
}

fn oracle_inversion() -> Outcome {
    let sched = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let data: Vec<f32> = (0..2 * 16 * 16).map(|_| rng.random::<f32>()).collect();
        let frames = data.chunks(256).map(|c| Frame::from_data(16, 16, 1, c.to_vec()).unwrap()).collect();
        let z = tokenize(&FrameSequence::new(frames).unwrap(), (1, 8, 8)).map_err(fail)?;
        let eps: Vec<f64> = (0..z.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let n = rng.random_range(1..=sched.steps());
        let abar = sched.alpha_bar(n).map_err(fail)?;
        let noisy = z.data().iter().zip(&eps).map(|(v, e)| abar.sqrt() * v + (1.0 - abar).sqrt() * e).collect();
        let z0 = one_step_denoise(&z.with_data(noisy).map_err(fail)?, n, &sched, &Predictor::Oracle(eps)).map_err(fail)?;
        let peak = z.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = z0.data().iter().zip(z.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err / peak);
    }
    check(worst <= 1e-6, format!("max relative error {worst:.3e} over 1000 triples"))
}

fn zero_bit_refinement() -> Outcome {
    let cfg = CodecConfig { gop_length: 9, ..CodecConfig::default() };
    let opts = RefineOptions::new(&cfg);
    for (name, seq) in suite(48, 9) {
        let off = encode(&seq, &cfg).map_err(fail)?;
        let on = encode_with(&seq, &cfg, Some(&opts)).map_err(fail)?;
        if off.bytes != on.bytes || on.refined.is_none() {
            return Err(format!("{name}: container changed with refinement"));
        }
    }
    Ok("container bytes identical on all 5 suite sequences".into())
}

fn sample(model: &SymbolModel, n: usize, rng: &mut ChaCha8Rng) -> Vec<i32> {
    let (lo, hi) = model.direct_range();
    let table: Vec<(i32, f64)> = (lo..=hi).map(|s| (s, model.probability(s).unwrap())).collect();
    let mass: f64 = table.iter().map(|t| t.1).sum();
    (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * mass;
            for &(s, p) in &table {
                if u < p {
                    return s;
                }
                u -= p;
            }
            hi
        })
        .collect()
}

fn lossless_transport() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = SymbolModel::laplacian(8.0).map_err(fail)?;
    let symbols: Vec<i32> = (0..1_000_000).map(|_| rng.random_range(-600..=600)).collect();
    let p = encode_symbols(&symbols, &model).map_err(fail)?;
    if decode_symbols(&p, &model, symbols.len()).map_err(fail)? != symbols {
        return Err("10^6-symbol round trip differs".into());
    }
    let mut worst = 0.0f64;
    for scale in [0.25, 1.0, 3.0, 12.0] {
        let model = SymbolModel::laplacian(scale).map_err(fail)?;
        let symbols = sample(&model, 100_000, &mut rng);
        let p = encode_symbols(&symbols, &model).map_err(fail)?;
        let h = model.entropy_bits() * symbols.len() as f64;
        worst = worst.max((p.exact_bits as f64 - h).abs() / h);
    }
    check(worst <= 0.02, format!("10^6 round trip exact; worst rate gap {:.3}%", 100.0 * worst))
}

fn closed_loop() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let kinds = [
        GeneratorKind::translating(),
        GeneratorKind::rotating(),
        GeneratorKind::occluding_disc(),
        GeneratorKind::Static,
        GeneratorKind::noise_burst(),
        GeneratorKind::Noise,
    ];
    let mut seen = [false; 3];
    for i in 0..50 {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let (w, h) = (rng.random_range(17..=56), rng.random_range(17..=48));
        let frames = rng.random_range(3..=14);
        let channels = if rng.random_bool(0.3) { 3 } else { 1 };
        let gen = GeneratorConfig::new(kind, w, h, frames).with_seed(rng.random()).with_channels(channels);
        let seq = generate(&gen).map_err(fail)?;
        let mv_interval = [0, 1, 2, 4][rng.random_range(0..4)];
        let gop_length = match mv_interval {
            0 => rng.random_range(3..=12),
            m => next_compatible_length(rng.random_range(3..=12), m).map_err(fail)?,
        };
        let cfg = CodecConfig { mv_interval, gop_length, ..CodecConfig::default() };
        let out = encode(&seq, &cfg).map_err(fail)?;
        let dec = decode(&out.bytes).map_err(fail)?;
        for (e, d) in out.gops.iter().zip(&dec.gops) {
            if e.recon != d.recon {
                return Err(format!("sequence {i} ({}, {w}x{h}x{frames}): decoder drifted", kind.name()));
            }
            for &t in e.schedule.types() {
                seen[t.code() as usize] = true;
            }
        }
        if dec.gops.len() != out.gops.len() || dec.x_tilde().map_err(fail)? != out.x_tilde {
            return Err(format!("sequence {i}: reconstruction differs"));
        }
    }
    check(seen == [true; 3], format!("50 sequences bit-exact; I/P/MV seen {seen:?}"))
}

fn chain_trend() -> Outcome {
    let gen = GeneratorConfig::new(GeneratorKind::translating(), 128, 128, 10);
    let r = experiment_chain(&gen, 9, &CodecConfig::default()).map_err(fail)?;
    let psnr: Vec<String> = r.rows.iter().map(|row| format!("{:.2}", row.psnr)).collect();
    check(
        r.psnr_non_increasing() && r.bits_non_decreasing(),
        format!("PSNR k=1..9 [{}]; cumulative bits {}", psnr.join(" "), r.rows.last().unwrap().cumulative_bits),
    )
}

fn stem_direction() -> Outcome {
    let r = experiment_stem(&suite(64, 33), &CodecConfig::default(), &DEFAULT_LADDER).map_err(fail)?;
    let cheaper = r.stem_cheaper_everywhere();
    check(
        cheaper && r.bd_rate < 0.0,
        format!("stem cheaper at all {} points: {cheaper}; BD-rate(SSIM) {:.1}%", r.points.len(), r.bd_rate),
    )
}

fn interval_ordering() -> Outcome {
    let t = experiment_interval(&suite(64, 33), &[1, 2], &CodecConfig::default()).map_err(fail)?;
    let (b1, b2) = (t.mean_bpp(1), t.mean_bpp(2));
    check(b1 > b2, format!("mean bpp interval 1 {b1:.4} vs interval 2 {b2:.4}"))
}

fn bd_rate_utility() -> Outcome {
    let pts = vec![(0.05, 0.80), (0.10, 0.86), (0.20, 0.91), (0.40, 0.95)];
    let anchor = RdCurve::new("ssim", pts.clone()).map_err(fail)?;
    let doubled = RdCurve::new("ssim", pts.iter().map(|&(r, q)| (2.0 * r, q)).collect()).map_err(fail)?;
    let same = bd_rate(&anchor, &anchor).map_err(fail)?;
    let dbl = bd_rate(&anchor, &doubled).map_err(fail)?;
    check(same == 0.0 && (dbl - 100.0).abs() <= 0.5, format!("identical {same}%; doubled {dbl:.6}%"))
}

fn flow_oracles() -> Outcome {
    let f = generate(&GeneratorConfig::new(GeneratorKind::rotating(), 64, 48, 1)).map_err(fail)?.frame(0).clone();
    if warp(&f, &FlowField::zeros(64, 48)).map_err(fail)? != f {
        return Err("zero-flow warp changed the frame".into());
    }
    let mut worst = 0.0f64;
    for (vx, vy) in [(3.0, 0.0), (0.0, -2.0), (1.5, 1.0)] {
        let gen = GeneratorConfig::new(GeneratorKind::Translating { vx, vy }, 96, 96, 2);
        let seq = generate(&gen).map_err(fail)?;
        let (mx, my) = estimate_flow(seq.frame(0), seq.frame(1), 3).map_err(fail)?.interior_mean(10);
        let (gx, gy) = ground_truth_flow(&gen, 0).ok_or("no ground truth")?.interior_mean(10);
        worst = worst.max((mx - gx).abs()).max((my - gy).abs());
    }
    let e = ewarp(&generate(&GeneratorConfig::new(GeneratorKind::Static, 48, 48, 5)).map_err(fail)?).map_err(fail)?;
    check(worst <= 0.5 && e <= 1e-6, format!("zero warp exact; worst shift error {worst:.3} px; Ewarp(static) {e:.2e}"))
}

fn loss_functionals() -> Outcome {
    // dyadic values keep the offset addition exact in f32
    let seq = generate(&GeneratorConfig::new(GeneratorKind::rotating(), 32, 32, 5)).map_err(fail)?;
    let x = FrameSequence::new(
        seq.iter()
            .map(|f| {
                Frame::from_data(32, 32, 1, f.data().iter().map(|v| (v * 0.75 * 1024.0).round() / 1024.0).collect()).unwrap()
            })
            .collect(),
    )
    .map_err(fail)?;
    let shifted = FrameSequence::new(
        x.iter().map(|f| Frame::from_data(32, 32, 1, f.data().iter().map(|v| v + 0.25).collect()).unwrap()).collect(),
    )
    .map_err(fail)?;
    let lt = loss_temp(&x, &shifted).map_err(fail)?;

    let cfg = CodecConfig { gop_length: 9, ..CodecConfig::default() };
    let seq = generate(&GeneratorConfig::new(GeneratorKind::occluding_disc(), 40, 24, 11)).map_err(fail)?;
    let out = encode(&seq, &cfg).map_err(fail)?;
    let r = &out.report;
    let parts = r.residual_bits() + r.mc_flow_bits() + r.mv_flow_bits();
    let rate_bpp = bpp(r.rate_term_bits(), seq.len(), seq.height(), seq.width());
    let loss = loss_stage2(rate_bpp, &seq, &out.x_tilde, 1.0, cfg.k1, cfg.k2, &SsimDistance).map_err(fail)?;
    let accounted = parts + r.payload_header_bits() + r.framing_bits();
    check(
        lt == 0.0 && parts == r.rate_term_bits() && accounted == 8 * out.bytes.len() as u64 && loss.rate == rate_bpp,
        format!(
            "loss_temp(offset) {lt}; rate term {} = {} residual + {} mc + {} mv; total {accounted} bits = {} bytes",
            r.rate_term_bits(),
            r.residual_bits(),
            r.mc_flow_bits(),
            r.mv_flow_bits(),
            out.bytes.len()
        ),
    )
}

fn determinism() -> Outcome {
    let cfg = CodecConfig { gop_length: 9, ..CodecConfig::default() };
    let opts = RefineOptions::new(&cfg);
    let seq = generate(&GeneratorConfig::new(GeneratorKind::occluding_disc(), 48, 40, 13)).map_err(fail)?;
    let run = || -> Result<[u64; 4], String> {
        let out = encode_with(&seq, &cfg, Some(&opts)).map_err(fail)?;
        let dec = decode(&out.bytes).map_err(fail)?;
        let gen = GeneratorConfig::new(GeneratorKind::translating(), 48, 48, 6);
        let chain = experiment_chain(&gen, 5, &cfg).map_err(fail)?;
        Ok([
            hash(&out.bytes),
            seq_hash(&dec.x_tilde().map_err(fail)?),
            seq_hash(&dec.refined(&opts).map_err(fail)?),
            hash(chain.to_csv().as_bytes()),
        ])
    };
    let (a, b) = (run()?, run()?);
    check(a == b, format!("encode/decode/refine/experiment hashes {a:016x?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("schedule fidelity", Duration::from_secs(1), schedule_fidelity),
        ("interval proportions", Duration::from_secs(60), interval_proportions),
        ("oracle denoise inversion", Duration::from_secs(10), oracle_inversion),
        ("zero-bit refinement", Duration::from_secs(60), zero_bit_refinement),
        ("lossless transport", Duration::from_secs(30), lossless_transport),
        ("closed-loop codec", Duration::from_secs(120), closed_loop),
        ("chain-length trend", Duration::from_secs(60), chain_trend),
        ("stem rate direction", Duration::from_secs(300), stem_direction),
        ("interval bpp ordering", Duration::from_secs(120), interval_ordering),
        ("BD-rate utility", Duration::from_secs(1), bd_rate_utility),
        ("warping and flow oracles", Duration::from_secs(30), flow_oracles),
        ("loss functionals", Duration::from_secs(120), loss_functionals),
        ("determinism", Duration::from_secs(120), determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, run)) in criteria.into_iter().enumerate() {
        let t0 = Instant::now();
        let outcome = run();
        let elapsed = t0.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        println!("criterion {:>2} {} {name} ({:.2}s): {detail}", i + 1, if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
        if !ok {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("all {} criteria passed", criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
