//! `gkv`: experiment driver for original and distributed key-value memories.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

mod config;
mod values;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use gkv_core::harness::{
    baseline_accuracy, find_iso_r, iso_table_csv, non_decreasing_in_mn, sweep_csv, sweep_json, sweep_pcm, sweep_r,
    sweep_snr, BinaryReadout, CodebookChoice, ExperimentSpec, IsoRow, SweepResult,
};
use gkv_core::{
    generate_bank, import_bank, BankFormat, CodebookMode, EmbeddingBank, GeneratorParams, Precision, PrototypeMode,
};

use config::{Settings, SEED_ENV};
use values::{parse_f64_list, parse_usize_list};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<gkv_core::Error> for Failure {
    fn from(e: gkv_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(
    name = "gkv",
    version,
    about = "Few-shot experiments with original and distributed key-value memories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic embedding bank and write it as CSV.
    GenBank(GenBankArgs),
    /// Run an accuracy sweep and write it as CSV or JSON.
    Sweep {
        #[command(subcommand)]
        axis: SweepAxis,
    },
    /// Find the smallest r whose PCM-noisy accuracy matches the noiseless original memory.
    IsoR(IsoArgs),
}

#[derive(Subcommand)]
enum SweepAxis {
    /// Noiseless accuracy against r.
    R(SweepRArgs),
    /// Accuracy against the SNR of white noise on the similarity vector.
    Snr(SweepSnrArgs),
    /// Accuracy against the PCM conductance variation.
    Pcm(SweepPcmArgs),
}

#[derive(Args)]
struct GenBankArgs {
    #[arg(long, default_value_t = 512)]
    d: usize,
    #[arg(long, default_value_t = 659)]
    classes: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    /// Per-entry SD of samples around their class prototype.
    #[arg(long, default_value_t = GeneratorParams::DEFAULT_SPREAD)]
    spread: f64,
    /// gaussian or bipolar.
    #[arg(long, default_value = "gaussian")]
    proto_mode: PrototypeMode,
    /// Generator seed [default: $GKV_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Settings shared by sweeps and iso-r. Every flag can also be set in the
/// config file under the same name.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file. Flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bank CSV of `class_id,v1,...,vd` rows. Without it an Omniglot-shaped
    /// synthetic bank is generated.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Seed of the generated bank.
    #[arg(long)]
    bank_seed: Option<u64>,
    /// Spread of the generated bank [default: calibrated for --precision].
    #[arg(long)]
    spread: Option<f64>,
    /// real, bipolar or binary.
    #[arg(long)]
    precision: Option<String>,
    /// auto, orthogonal, whitened, walsh or gaussian.
    #[arg(long)]
    codebook: Option<String>,
    /// Classes per episode (a list with `iso-r --scaling m`).
    #[arg(long)]
    m: Option<String>,
    /// Shots per class (a list with `iso-r --scaling n`).
    #[arg(long)]
    n: Option<String>,
    /// Queries per class.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Master seed [default: $GKV_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Quantize queries like the keys for bipolar/binary memories.
    #[arg(long)]
    quantize_query: Option<bool>,
    /// Binary readout: centered or raw.
    #[arg(long)]
    readout: Option<String>,
    /// Worker threads [default: all cores]. Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// csv or json (sweeps only).
    #[arg(long)]
    format: Option<String>,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved settings with their sources and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct SweepRArgs {
    #[command(flatten)]
    run: RunArgs,
    /// r values, e.g. `5:5:100` or `10,20,50`.
    #[arg(long)]
    r: Option<String>,
}

#[derive(Args)]
struct SweepSnrArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    r: Option<String>,
    /// SNR values in dB, e.g. `-20:2:20`.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
}

#[derive(Args)]
struct SweepPcmArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    r: Option<String>,
    /// Relative programming-noise SDs, e.g. `0:0.2:2.0`.
    #[arg(long)]
    variation: Option<String>,
}

#[derive(Args)]
struct IsoArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    variation: Option<String>,
    /// Vary n or m (given as a list) instead of a single problem size.
    #[arg(long)]
    scaling: Option<String>,
    /// Largest r tried for every problem size.
    #[arg(long)]
    r_max: Option<usize>,
    /// Largest r tried, as a multiple of mn, when --r-max is absent.
    #[arg(long)]
    r_max_factor: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    match run(cli, env_seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli, env_seed: Option<String>) -> Result<(), Failure> {
    match cli.command {
        Command::GenBank(args) => gen_bank(args, env_seed),
        Command::Sweep { axis } => sweep(axis, env_seed),
        Command::IsoR(args) => iso_r(args, env_seed),
    }
}

fn gen_bank(args: GenBankArgs, env_seed: Option<String>) -> Result<(), Failure> {
    let seed = match (args.seed, env_seed) {
        (Some(s), _) => s,
        (None, Some(s)) => s
            .trim()
            .parse()
            .map_err(|e| Failure::Usage(format!("invalid {SEED_ENV} `{s}`: {e}")))?,
        (None, None) => 0,
    };
    if args.spread == 0.0 {
        eprintln!("warning: spread 0 makes every sample a copy of its class prototype");
    }
    let params = GeneratorParams {
        d: args.d,
        num_classes: args.classes,
        samples_per_class: args.samples,
        within_class_sd: args.spread,
        prototype_mode: args.proto_mode,
        seed,
    };
    let bank = generate_bank(&params)?;
    bank.save(&args.out)?;
    println!("classes: {}", bank.num_classes());
    println!("samples: {}", bank.num_samples());
    println!("mean between-class |cosine|: {:.6}", bank.mean_between_class_cosine());
    Ok(())
}

/// Applies the shared flags on top of defaults, environment and config file.
fn settings(run: &RunArgs, env_seed: Option<String>, command_defaults: &[(&str, &str)]) -> Result<Settings, Failure> {
    let mut s = Settings::load(run.config.as_deref(), env_seed, command_defaults)?;
    s.flag("bank", run.bank.as_ref().map(|p| p.display()));
    s.flag("bank-seed", run.bank_seed);
    s.flag("spread", run.spread);
    s.flag("precision", run.precision.as_ref());
    s.flag("codebook", run.codebook.as_ref());
    s.flag("m", run.m.as_ref());
    s.flag("n", run.n.as_ref());
    s.flag("queries", run.queries);
    s.flag("episodes", run.episodes);
    s.flag("seed", run.seed);
    s.flag("noise-seed", run.noise_seed);
    s.flag("quantize-query", run.quantize_query);
    s.flag("readout", run.readout.as_ref());
    s.flag("workers", run.workers);
    s.flag("format", run.format.as_ref());
    s.flag("out", run.out.as_ref().map(|p| p.display()));
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

/// Fully resolved inputs of a sweep or search.
struct RunConfig {
    spec: ExperimentSpec,
    bank: EmbeddingBank,
    out: Option<PathBuf>,
    format: Format,
    workers: Option<usize>,
}

impl RunConfig {
    /// `m` and `n` are taken as given; the caller handles list-valued sizes.
    fn resolve(s: &Settings, m: usize, n: usize) -> Result<Self, Failure> {
        let precision: Precision = s.require("precision")?;
        let codebook = s.parse_with("codebook", |v| match v {
            "auto" => Ok(CodebookChoice::Auto),
            other => other
                .parse::<CodebookMode>()
                .map(CodebookChoice::Fixed)
                .map_err(|e| e.to_string()),
        })?;
        let readout = s.parse_with("readout", |v| match v {
            "centered" => Ok(BinaryReadout::Centered),
            "raw" => Ok(BinaryReadout::Raw),
            other => Err(format!("expected centered or raw, got `{other}`")),
        })?;
        let format = s.parse_with("format", |v| match v {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("expected csv or json, got `{other}`")),
        })?;
        let mut spec = ExperimentSpec {
            precision,
            codebook: codebook.unwrap_or_default(),
            m,
            n,
            queries_per_class: s.require("queries")?,
            episodes: s.require("episodes")?,
            master_seed: s.require("seed")?,
            quantize_query: s.require("quantize-query")?,
            binary_readout: readout.unwrap_or_default(),
            ..ExperimentSpec::default()
        };
        spec.noise.seed = s.require("noise-seed")?;
        spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;

        let workers: Option<usize> = s.get("workers")?;
        if workers == Some(0) {
            return Err(Failure::Usage("--workers must be >= 1".into()));
        }
        let bank = match s.raw("bank") {
            Some(path) => import_bank(path, BankFormat::Csv).with_context(|| format!("loading bank {path}"))?,
            None => {
                let mut params = GeneratorParams::omniglot_shaped_for(precision, s.require("bank-seed")?);
                if let Some(spread) = s.get("spread")? {
                    params.within_class_sd = spread;
                }
                generate_bank(&params)?
            }
        };
        Ok(Self {
            spec,
            bank,
            out: s.raw("out").map(PathBuf::from),
            format: format.unwrap_or(Format::Csv),
            workers,
        })
    }

    /// Runs `job` on a pool of the requested size.
    fn install<T: Send>(&self, job: impl FnOnce() -> T + Send) -> Result<T, Failure> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            builder = builder.num_threads(w);
        }
        let pool = builder.build().map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
        Ok(pool.install(job))
    }

    fn write(&self, text: &str) -> Result<(), Failure> {
        match &self.out {
            Some(path) => write_file(path, text),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn single(s: &Settings, key: &str) -> Result<usize, Failure> {
    s.require(key)
}

fn list<T>(s: &Settings, key: &str, parse: fn(&str) -> Result<Vec<T>, String>) -> Result<Vec<T>, Failure> {
    s.parse_with(key, parse)?
        .ok_or_else(|| Failure::Usage(format!("missing `--{key}` (flag or config key)")))
}

fn sweep(axis: SweepAxis, env_seed: Option<String>) -> Result<(), Failure> {
    let (run, defaults): (&RunArgs, &[(&str, &str)]) = match &axis {
        SweepAxis::R(a) => (&a.run, &[]),
        SweepAxis::Snr(a) => (&a.run, &[]),
        SweepAxis::Pcm(a) => (&a.run, &[("precision", "bipolar")]),
    };
    let mut s = settings(run, env_seed, defaults)?;
    match &axis {
        SweepAxis::R(a) => s.flag("r", a.r.as_ref()),
        SweepAxis::Snr(a) => {
            s.flag("r", a.r.as_ref());
            s.flag("snr", a.snr.as_ref());
        }
        SweepAxis::Pcm(a) => {
            s.flag("r", a.r.as_ref());
            s.flag("variation", a.variation.as_ref());
        }
    }
    if run.print_config {
        print!("{}", s.render());
        return Ok(());
    }
    let cfg = RunConfig::resolve(&s, single(&s, "m")?, single(&s, "n")?)?;
    let r = list(&s, "r", parse_usize_list)?;
    let result: SweepResult = match axis {
        SweepAxis::R(_) => cfg.install(|| sweep_r(&cfg.bank, &cfg.spec, &r))??,
        SweepAxis::Snr(_) => {
            let snr = list(&s, "snr", parse_f64_list)?;
            cfg.install(|| sweep_snr(&cfg.bank, &cfg.spec, &snr, &r))??
        }
        SweepAxis::Pcm(_) => {
            let variation = list(&s, "variation", parse_f64_list)?;
            if !cfg.spec.precision.is_quantized() {
                return Err(Failure::Usage("sweep pcm needs --precision bipolar or binary".into()));
            }
            cfg.install(|| sweep_pcm(&cfg.bank, &cfg.spec, &variation, &r))??
        }
    };
    let text = match cfg.format {
        Format::Csv => sweep_csv(&result),
        Format::Json => sweep_json(&result)? + "\n",
    };
    cfg.write(&text)
}

fn iso_r(args: IsoArgs, env_seed: Option<String>) -> Result<(), Failure> {
    let mut s = settings(&args.run, env_seed, &[("precision", "binary")])?;
    s.flag("variation", args.variation.as_ref());
    s.flag("scaling", args.scaling.as_ref());
    s.flag("r-max", args.r_max);
    s.flag("r-max-factor", args.r_max_factor);
    if args.run.print_config {
        print!("{}", s.render());
        return Ok(());
    }

    let scaling = s.parse_with("scaling", |v| match v {
        "n" | "m" => Ok(v.to_string()),
        other => Err(format!("expected n or m, got `{other}`")),
    })?;
    let sizes: Vec<(usize, usize)> = match scaling.as_deref() {
        Some("n") => {
            let m = single(&s, "m")?;
            list(&s, "n", parse_usize_list)?.into_iter().map(|n| (m, n)).collect()
        }
        Some("m") => {
            let n = single(&s, "n")?;
            list(&s, "m", parse_usize_list)?.into_iter().map(|m| (m, n)).collect()
        }
        _ => vec![(single(&s, "m")?, single(&s, "n")?)],
    };
    let variations = list(&s, "variation", parse_f64_list)?;
    let r_max: Option<usize> = s.get("r-max")?;
    let factor: usize = s.require("r-max-factor")?;
    if r_max == Some(0) || factor == 0 {
        return Err(Failure::Usage("--r-max and --r-max-factor must be >= 1".into()));
    }

    let (m0, n0) = sizes[0];
    let cfg = RunConfig::resolve(&s, m0, n0)?;
    if cfg.format == Format::Json {
        return Err(Failure::Usage("iso-r writes CSV only".into()));
    }
    if !cfg.spec.precision.is_quantized() {
        return Err(Failure::Usage("iso-r needs --precision bipolar or binary".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len() * variations.len());
    for (m, n) in sizes {
        let spec = ExperimentSpec {
            m,
            n,
            ..cfg.spec.clone()
        };
        spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        let baseline = cfg.install(|| baseline_accuracy(&cfg.bank, &spec))??.mean;
        let limit = r_max.unwrap_or(factor * m * n);
        for &variation in &variations {
            let search = cfg.install(|| find_iso_r(&cfg.bank, &spec, variation, baseline, limit))??;
            rows.push(IsoRow {
                m,
                n,
                variation,
                baseline,
                outcome: search.outcome,
            });
        }
    }
    if scaling.is_some() && !non_decreasing_in_mn(&rows) {
        eprintln!("warning: iso-r decreases with mn at some variation");
    }
    cfg.write(&iso_table_csv(&rows))
}
