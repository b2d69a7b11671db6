//! `sit`: encode, decode, inspect and measure videos, and run the studies.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (I/O, malformed or corrupted input), 3 internal error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sit_core::fte::FteWeights;
use sit_core::metrics::{ewarp, loss_temp, psnr_seq, ssim_seq, MetricsRow};
use sit_core::refine::{ExternalPredictor, NoiseMode, Predictor};
use sit_core::synth::{generate, standard_suite, GeneratorConfig, GeneratorKind};
use sit_core::CodecConfig;
use sit_harness::bdrate::{bd_rate, RdCurve};
use sit_harness::container::Container;
use sit_harness::experiments::{experiment_chain, experiment_interval, experiment_stem, experiment_steps, DEFAULT_LADDER};
use sit_harness::io::{read_video, write_video};
use sit_harness::pipeline::{decode_container, encode_with, RateReport, RefineOptions};
use sit_harness::HarnessError;

macro_rules! outf {
    ($($t:tt)*) => { out(&format!($($t)*)) };
}

macro_rules! outln {
    ($($t:tt)*) => { out(&format!("{}\n", format_args!($($t)*))) };
}

const SEED_ENV: &str = "SIT_SEED";
const DEFAULT_SEED: u64 = 0x5175;

#[derive(Parser)]
#[command(name = "sit", version, about = "Sparse-temporal video codec")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a .y4m file or image directory into a container.
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Write the per-frame rate report as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write the encoder-side refined reconstruction.
        #[arg(long)]
        refined: Option<PathBuf>,
        #[command(flatten)]
        refine: RefineArgs,
    },
    /// Decode a container to a .y4m file or image directory.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Apply the refinement stage after decoding.
        #[arg(long)]
        refine: bool,
        #[command(flatten)]
        refine_args: RefineArgs,
    },
    /// List the records of a container.
    Inspect {
        input: PathBuf,
        /// Print the per-frame rate report as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Quality metrics of a reconstruction against its reference.
    Metrics {
        reference: PathBuf,
        distorted: PathBuf,
        /// Container whose size gives the bpp column.
        #[arg(long)]
        container: Option<PathBuf>,
        #[arg(long, default_value = "sequence")]
        name: String,
    },
    /// Write a synthetic clip.
    Synth {
        generator: String,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        clip: ClipArgs,
    },
    /// Structural studies.
    #[command(subcommand)]
    Exp(Exp),
}

#[derive(Subcommand)]
enum Exp {
    /// Quality and rate against prediction-chain length.
    Chain {
        #[arg(long, default_value = "translating")]
        generator: String,
        #[arg(long, default_value_t = 9)]
        k_max: usize,
        #[command(flatten)]
        clip: ClipArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Rate and quality for MV intervals 1, 2 and 4 on the generator suite.
    Interval {
        #[command(flatten)]
        clip: ClipArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Stem schedule against all-backbone coding over a quantizer ladder.
    Stem {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LADDER.to_vec())]
        ladder: Vec<f64>,
        #[command(flatten)]
        clip: ClipArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Refinement time and quality for several denoising step counts.
    Steps {
        #[arg(long = "steps", value_delimiter = ',', default_values_t = vec![1usize, 2, 5])]
        step_counts: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value = "translating")]
        generator: String,
        #[command(flatten)]
        clip: ClipArgs,
        #[command(flatten)]
        refine: RefineArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// BD-rate between two `bpp,quality` CSV files.
    Bdrate { anchor: PathBuf, test: PathBuf },
}

#[derive(Args, Clone)]
struct ClipArgs {
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 33)]
    frames: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    /// Generator seed; the SIT_SEED environment variable takes precedence.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Write CSV here instead of standard output.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write an SVG plot.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Noised,
}

#[derive(Args, Clone)]
struct RefineArgs {
    /// `zero`, `smoothing`, or a path to a SITP predictor file.
    #[arg(long, default_value = "smoothing")]
    predictor: String,
    /// Diffusion timestep; defaults to the configuration value.
    #[arg(long)]
    timestep: Option<usize>,
    #[arg(long, value_enum, default_value = "direct")]
    mode: ModeArg,
    /// Frame-type embedder weights (SITW); defaults to the shipped kernel.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Denoising passes.
    #[arg(long = "refine-steps", default_value_t = 1)]
    steps: usize,
}

enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        use sit_core::Error as E;
        match &e {
            HarnessError::Codec(E::Config(_)) | HarnessError::Curve(_) => Failure::Usage(e.to_string()),
            HarnessError::Codec(E::Timestep { .. }) => Failure::Usage(e.to_string()),
            HarnessError::Experiment(_) => Failure::Internal(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<sit_core::Error> for Failure {
    fn from(e: sit_core::Error) -> Self {
        HarnessError::from(e).into()
    }
}

type Outcome<T = ()> = Result<T, Failure>;

/// Writes to standard output, ignoring a closed pipe.
fn out(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn read_file(path: &Path) -> Outcome<Vec<u8>> {
    fs::read(path).map_err(|e| HarnessError::io(path, e).into())
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Outcome {
    fs::write(path, data).map_err(|e| HarnessError::io(path, e).into())
}

fn seed(arg: Option<u64>) -> Outcome<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Failure::Usage(format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(arg.unwrap_or(DEFAULT_SEED)),
    }
}

fn load_config(cli: &Cli) -> Outcome<CodecConfig> {
    let mut cfg = CodecConfig::default();
    if let Some(path) = &cli.config {
        let text = String::from_utf8(read_file(path)?).map_err(|_| Failure::Usage(format!("{} is not UTF-8", path.display())))?;
        cfg.apply_kv_str(&text)?;
    }
    for o in &cli.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects key=value, got {o:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate(false)?;
    Ok(cfg)
}

fn refine_options(args: &RefineArgs, cfg: &CodecConfig) -> Outcome<RefineOptions> {
    let mut opts = RefineOptions::new(cfg);
    opts.predictor = match args.predictor.as_str() {
        "zero" => Predictor::Zero,
        "smoothing" => Predictor::smoothing(),
        path => Predictor::External(ExternalPredictor::from_bytes(&read_file(Path::new(path))?)?),
    };
    if let Some(n) = args.timestep {
        opts.config.timestep = n;
    }
    opts.config.mode = match args.mode {
        ModeArg::Direct => NoiseMode::Direct,
        ModeArg::Noised => NoiseMode::Noised,
    };
    opts.config.seed = seed(None)?;
    if let Some(p) = &args.weights {
        opts.weights = FteWeights::from_bytes(&read_file(p)?)?;
    }
    if args.steps == 0 {
        return Err(Failure::Usage("--refine-steps must be >= 1".into()));
    }
    opts.steps = args.steps;
    opts.config.schedule.alpha_bar(opts.config.timestep)?;
    Ok(opts)
}

fn generator(name: &str, clip: &ClipArgs) -> Outcome<GeneratorConfig> {
    let kind = GeneratorKind::from_name(name).ok_or_else(|| Failure::Usage(format!("unknown generator {name:?}")))?;
    Ok(GeneratorConfig::new(kind, clip.width, clip.height, clip.frames).with_channels(clip.channels).with_seed(seed(clip.seed)?))
}

fn suite(clip: &ClipArgs) -> Outcome<Vec<(String, sit_core::FrameSequence)>> {
    let s = standard_suite(clip.width, clip.height, clip.frames, seed(clip.seed)?)?;
    if clip.channels == 1 {
        return Ok(s);
    }
    ["translating", "rotating", "occluding_disc", "static", "noise_burst"]
        .iter()
        .map(|n| Ok((n.to_string(), generate(&generator(n, clip)?)?)))
        .collect()
}

fn emit(out: &OutArgs, csv: &str, svg: impl FnOnce() -> Option<String>) -> Outcome {
    match &out.csv {
        Some(p) => write_file(p, csv)?,
        None => outf!("{csv}"),
    }
    if let Some(p) = &out.svg {
        match svg() {
            Some(s) => write_file(p, s)?,
            None => return Err(Failure::Usage("this experiment has no plot".into())),
        }
    }
    Ok(())
}

fn read_curve(path: &Path) -> Outcome<RdCurve> {
    let text = String::from_utf8(read_file(path)?).map_err(|_| Failure::Data(format!("{} is not UTF-8", path.display())))?;
    let mut pts = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut cols = line.split(',').map(str::trim);
        let (a, b) = (cols.next().unwrap_or(""), cols.next().unwrap_or(""));
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(r), Ok(q)) => pts.push((r, q)),
            _ if pts.is_empty() => continue, // header row
            _ => return Err(Failure::Data(format!("{}: bad row {line:?}", path.display()))),
        }
    }
    RdCurve::new("quality", pts).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Encode { input, output, report, refined, refine } => {
            let seq = read_video(&input)?;
            let opts = match &refined {
                Some(_) => Some(refine_options(&refine, &cfg)?),
                None => None,
            };
            let out = encode_with(&seq, &cfg, opts.as_ref())?;
            write_file(&output, &out.bytes)?;
            if let Some(p) = report {
                write_file(&p, out.report.to_csv())?;
            }
            if let (Some(p), Some(r)) = (refined, &out.refined) {
                write_video(&p, r)?;
            }
            outf!("{}", out.report.summary());
        }
        Command::Decode { input, output, refine, refine_args } => {
            let container = Container::from_bytes(&read_file(&input)?)?;
            let decoded = decode_container(&container)?;
            let seq = if refine {
                let cfg = decoded.cfg.clone();
                let mut opts = refine_options(&refine_args, &cfg)?;
                if refine_args.timestep.is_none() {
                    opts.config.timestep = cfg.refine_timestep;
                }
                decoded.refined(&opts)?
            } else {
                decoded.x_tilde()?
            };
            write_video(&output, &seq)?;
        }
        Command::Inspect { input, csv } => {
            let c = Container::from_bytes(&read_file(&input)?)?;
            let report = RateReport::from_container(&c)?;
            if csv {
                outf!("{}", report.to_csv());
            } else {
                let h = &c.header;
                outln!(
                    "SIT1 v{} {} frames ({} coded), {}x{} coded, {}x{} display, {} channel(s)",
                    sit_harness::container::VERSION,
                    h.frames,
                    h.coded_frames,
                    h.width,
                    h.height,
                    h.display_width,
                    h.display_height,
                    h.channels
                );
                outln!("mv_interval {} gop_length {} cfg digest {:08x}", h.mv_interval, h.gop_length, h.cfg_digest());
                for (r, f) in c.records.iter().zip(&report.frames) {
                    outln!(
                        "frame {:5} {:>2} {:8} bytes  residual {:8}  mc {:6}  mv {:6}  header {:5}  crc {:08x}",
                        r.index,
                        r.frame_type.to_string(),
                        r.payload.len(),
                        f.residual_bits,
                        f.mc_flow_bits,
                        f.mv_flow_bits,
                        f.header_bits,
                        crc32fast::hash(&r.payload)
                    );
                }
                outf!("{}", report.summary());
            }
        }
        Command::Metrics { reference, distorted, container, name } => {
            let x = read_video(&reference)?;
            let y = read_video(&distorted)?;
            x.ensure_same_shape(&y)?;
            let bpp = match container {
                Some(p) => RateReport::from_container(&Container::from_bytes(&read_file(&p)?)?)?.bpp(),
                None => f64::NAN,
            };
            let row = MetricsRow {
                sequence: name,
                config_hash: cfg.stream_digest(),
                bpp,
                psnr: psnr_seq(&x, &y)?,
                ssim: ssim_seq(&x, &y)?,
                ewarp: ewarp(&y)?,
                loss_temp: loss_temp(&x, &y)?,
            };
            outln!("{}\n{}", MetricsRow::HEADER, row.to_csv());
        }
        Command::Synth { generator: name, output, clip } => {
            write_video(&output, &generate(&generator(&name, &clip)?)?)?;
        }
        Command::Exp(exp) => match exp {
            Exp::Chain { generator: name, k_max, clip, out } => {
                let report = experiment_chain(&generator(&name, &clip)?, k_max, &cfg)?;
                emit(&out, &report.to_csv(), || Some(report.to_svg()))?;
            }
            Exp::Interval { clip, out } => {
                let table = experiment_interval(&suite(&clip)?, &[1, 2, 4], &cfg)?;
                emit(&out, &table.to_csv(), || None)?;
            }
            Exp::Stem { ladder, clip, out } => {
                let report = experiment_stem(&suite(&clip)?, &cfg, &ladder)?;
                emit(&out, &report.to_csv(), || Some(report.to_svg()))?;
            }
            Exp::Steps { step_counts, repeats, generator: name, clip, refine, out } => {
                let seq = generate(&generator(&name, &clip)?)?;
                let table = experiment_steps(&seq, &cfg, &step_counts, &refine_options(&refine, &cfg)?, repeats)?;
                emit(&out, &table.to_csv(), || None)?;
            }
            Exp::Bdrate { anchor, test } => {
                let pct = bd_rate(&read_curve(&anchor)?, &read_curve(&test)?)?;
                outln!("{pct:.4}");
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("sit: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("sit: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("sit: internal error: {m}");
            ExitCode::from(3)
        }
    }
}
