use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nafd_core::harness::{self, ExperimentKind, ExperimentSpec};
use nafd_core::scenario::{load_config, DuplexMode, SystemConfig};
use nafd_core::Error;

/// Weighted sum-rate optimization for NAFD cell-free mmWave networks.
#[derive(Parser, Debug)]
#[command(name = "nafd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Optimize independent trials and write one record per trial.
    Run,
    /// Write the SCA trace of a single realization.
    Convergence,
    /// Mean objective against DAC resolution for both duplex modes.
    SweepBits,
    /// Per-trial objectives and empirical CDFs at two fronthaul capacities.
    Cdf,
    /// Write RAU and user positions of one deployment.
    Layout,
}

#[derive(Args, Debug)]
struct Opts {
    /// JSON system configuration; missing keys take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<DuplexMode>,
    /// DAC resolutions, e.g. `1,2,8` or `1-8`.
    #[arg(long, global = true, value_name = "LIST", value_parser = parse_bits)]
    bits: Option<BitList>,
    /// Fronthaul capacities in bps/Hz, `C` or `C_D:C_U`, comma separated.
    #[arg(long, global = true, value_name = "LIST", value_parser = parse_caps)]
    cap: Option<CapList>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Clone)]
struct BitList(Vec<u32>);

#[derive(Debug, Clone)]
struct CapList(Vec<(f64, f64)>);

fn parse_mode(s: &str) -> Result<DuplexMode, String> {
    s.parse()
}

fn parse_bits(s: &str) -> Result<BitList, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim) {
        let parse = |t: &str| {
            t.trim()
                .parse::<u32>()
                .map_err(|e| format!("bad bit count `{t}`: {e}"))
        };
        match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return Err(format!("empty range `{item}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(parse(item)?),
        }
    }
    if let Some(b) = out.iter().find(|b| !(1..=16).contains(*b)) {
        return Err(format!("{b} bits is outside 1..=16"));
    }
    Ok(BitList(out))
}

fn parse_caps(s: &str) -> Result<CapList, String> {
    let parse = |t: &str| -> Result<f64, String> {
        let v: f64 = t
            .trim()
            .parse()
            .map_err(|e| format!("bad capacity `{t}`: {e}"))?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(format!("capacity must be positive, got `{t}`"))
        }
    };
    s.split(',')
        .map(|item| match item.split_once(':') {
            Some((d, u)) => Ok((parse(d)?, parse(u)?)),
            None => parse(item).map(|c| (c, c)),
        })
        .collect::<Result<Vec<_>, _>>()
        .map(CapList)
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigIo { .. }
            | Error::ConfigParse { .. }
            | Error::InvalidConfig { .. }
            | Error::InvalidExperiment(_)
            | Error::BitsOutOfRange(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn default_out(cmd: Command) -> &'static str {
    match cmd {
        Command::Run => "trials.csv",
        Command::Convergence => "convergence.csv",
        Command::SweepBits => "sweep_bits.csv",
        Command::Cdf => "cdf_samples.csv",
        Command::Layout => "layout.csv",
    }
}

fn build_spec(cmd: Command, cfg: &SystemConfig, opts: &Opts) -> ExperimentSpec {
    let kind = match cmd {
        Command::Run | Command::Convergence => ExperimentKind::Convergence,
        Command::SweepBits => ExperimentKind::BitSweep,
        Command::Cdf => ExperimentKind::CdfCompare,
        Command::Layout => ExperimentKind::LayoutDump,
    };
    let out = opts.out.clone().unwrap_or_else(|| default_out(cmd).into());
    let mut spec = ExperimentSpec::preset(kind, cfg, out);
    if let Some(t) = opts.trials {
        spec.trials = t;
    }
    if let Some(BitList(b)) = &opts.bits {
        spec.bits_list = b.clone();
    }
    if let Some(CapList(c)) = &opts.cap {
        spec.capacities = c.clone();
    }
    if let Some(m) = opts.mode {
        spec.modes = vec![m];
    }
    spec.threads = opts.threads;
    spec
}

fn execute(cmd: Command, opts: &Opts) -> Result<String, Failure> {
    let mut cfg = match &opts.config {
        Some(path) => load_config(path)?,
        None => SystemConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let spec = build_spec(cmd, &cfg, opts);
    spec.validate()?;
    let out = spec.out_path.display().to_string();
    let summary = match cmd {
        Command::Run => {
            let batch = harness::run_records(&cfg, &spec)?;
            let vals: Vec<f64> = batch.records.iter().map(|r| r.objective_bpshz).collect();
            let (mean, se) = harness::mean_stderr(&vals);
            format!(
                "run: {} trials ({} failed), mean objective {mean:.4} ± {se:.4} bps/Hz -> {out}",
                vals.len(),
                batch.failures.len()
            )
        }
        Command::Convergence => {
            let r = harness::run_convergence(&cfg, &spec)?;
            format!(
                "convergence: final objective {:.4} bps/Hz after {} iterations{} -> {out}",
                r.final_objective,
                r.iterations,
                if r.converged { "" } else { " (iteration cap)" }
            )
        }
        Command::SweepBits => {
            let r = harness::run_bit_sweep(&cfg, &spec)?;
            let parts: Vec<String> = r
                .rows
                .iter()
                .map(|row| format!("{}/B={}: {:.3}", row.mode, row.bits, row.mean_bpshz))
                .collect();
            format!("sweep-bits: {} -> {out}", parts.join(", "))
        }
        Command::Cdf => {
            let r = harness::run_cdf_compare(&cfg, &spec)?;
            format!(
                "cdf: {} points x {} trials ({} failed) -> {out}, {}",
                r.points.len(),
                spec.trials,
                r.batch.failures.len(),
                harness::cdf_path(&spec.out_path).display()
            )
        }
        Command::Layout => {
            let layouts = harness::run_layout_dump(&cfg, &spec)?;
            format!(
                "layout: {} deployment(s), min RAU-user distance {:.2} m -> {out}",
                layouts.len(),
                layouts
                    .iter()
                    .map(|l| l.min_rau_user_distance())
                    .fold(f64::INFINITY, f64::min)
            )
        }
    };
    Ok(summary)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command, &cli.opts) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
