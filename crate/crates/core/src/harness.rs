//! Monte-Carlo experiment driver: trial execution, aggregation and CSV output.
//!
//! Trial `i` of a run draws its network from the stream `(seed, i)`, so the
//! same trial id sees the same T-RAUs, users and downlink channels under every
//! DAC resolution, capacity and duplex mode. Results are gathered in trial
//! order, which keeps every output file independent of the thread count.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::link_metrics::{draw_realization, Network, QuantModel};
use crate::sca_optimizer::{run_sca, ScaOutcome, TraceRow};
use crate::scenario::{rng_for, DuplexMode, Layout, SimRng, SystemConfig};

pub const DEFAULT_SWEEP_TRIALS: usize = 100;
pub const DEFAULT_CDF_TRIALS: usize = 200;
/// Fresh sub-seeds tried after a failed trial.
pub const MAX_REDRAWS: u64 = 5;
/// Largest tolerated fraction of failed trials.
pub const FAILURE_TOLERANCE: f64 = 0.05;

pub const TRACE_HEADER: [&str; 6] = [
    "iter",
    "surrogate_obj_bpshz",
    "true_obj_bpshz",
    "max_cdl_violation",
    "max_cul_violation",
    "max_pd_violation",
];
pub const SWEEP_HEADER: [&str; 5] = ["mode", "bits", "mean_bpshz", "stderr", "trials"];
pub const RECORD_HEADER: [&str; 10] = [
    "trial_id",
    "mode",
    "bits",
    "c_dl",
    "c_ul",
    "objective_bpshz",
    "sum_r_dl",
    "sum_r_ul",
    "sca_iters",
    "wall_ms",
];
pub const SAMPLE_HEADER: [&str; 9] = [
    "trial_id",
    "mode",
    "bits",
    "c_dl",
    "c_ul",
    "objective_bpshz",
    "sum_r_dl",
    "sum_r_ul",
    "sca_iters",
];
pub const CDF_HEADER: [&str; 7] = [
    "mode",
    "bits",
    "c_dl",
    "c_ul",
    "rank",
    "objective_bpshz",
    "cdf",
];
pub const LAYOUT_HEADER: [&str; 5] = ["mode", "role", "index", "x_m", "y_m"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExperimentKind {
    Convergence,
    BitSweep,
    CdfCompare,
    LayoutDump,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub trials: usize,
    pub bits_list: Vec<u32>,
    /// `(C_D, C_U)` pairs in bps/Hz.
    pub capacities: Vec<(f64, f64)>,
    pub modes: Vec<DuplexMode>,
    pub out_path: PathBuf,
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
}

impl ExperimentSpec {
    /// Settings of the reference figure for each kind, on top of `cfg`.
    pub fn preset(kind: ExperimentKind, cfg: &SystemConfig, out_path: impl Into<PathBuf>) -> Self {
        let (trials, bits_list, capacities, modes) = match kind {
            ExperimentKind::Convergence | ExperimentKind::LayoutDump => (
                1,
                vec![cfg.dac_bits],
                vec![(cfg.c_dl_bpshz, cfg.c_ul_bpshz)],
                vec![DuplexMode::Nafd],
            ),
            ExperimentKind::BitSweep => (
                DEFAULT_SWEEP_TRIALS,
                (1..=8).collect(),
                vec![(130.0, 130.0)],
                vec![DuplexMode::Nafd, DuplexMode::Ccfd],
            ),
            ExperimentKind::CdfCompare => (
                DEFAULT_CDF_TRIALS,
                (1..=8).collect(),
                vec![(50.0, 50.0), (130.0, 130.0)],
                vec![DuplexMode::Nafd],
            ),
        };
        Self {
            kind,
            trials,
            bits_list,
            capacities,
            modes,
            out_path: out_path.into(),
            threads: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidExperiment("trials must be >= 1".into()));
        }
        if let Some(b) = self.bits_list.iter().find(|b| !(1..=16).contains(*b)) {
            return Err(Error::BitsOutOfRange(*b));
        }
        if self.bits_list.is_empty() || self.capacities.is_empty() || self.modes.is_empty() {
            return Err(Error::InvalidExperiment(
                "bits, capacities and modes must be non-empty".into(),
            ));
        }
        if let Some((d, u)) = self
            .capacities
            .iter()
            .find(|(d, u)| !(*d > 0.0 && *u > 0.0 && d.is_finite() && u.is_finite()))
        {
            return Err(Error::InvalidExperiment(format!(
                "capacities must be positive, got ({d}, {u})"
            )));
        }
        Ok(())
    }
}

/// One point of an experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialPoint {
    pub mode: DuplexMode,
    pub bits: u32,
    pub c_dl: f64,
    pub c_ul: f64,
}

impl TrialPoint {
    pub fn config(&self, base: &SystemConfig) -> SystemConfig {
        SystemConfig {
            dac_bits: self.bits,
            c_dl_bpshz: self.c_dl,
            c_ul_bpshz: self.c_ul,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub mode: DuplexMode,
    pub bits: u32,
    pub c_dl: f64,
    pub c_ul: f64,
    pub objective_bpshz: f64,
    pub sum_r_dl: f64,
    pub sum_r_ul: f64,
    pub sca_iters: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub sca: ScaOutcome,
    /// Redraws needed before the trial succeeded.
    pub redraws: u64,
}

/// Random stream of one trial; `attempt > 0` selects a redraw.
pub fn trial_rng(seed: u64, trial_id: u64, attempt: u64) -> SimRng {
    if attempt == 0 {
        rng_for(seed, &[trial_id])
    } else {
        rng_for(seed, &[trial_id, attempt])
    }
}

/// Realizes and optimizes one trial, redrawing on failure.
pub fn run_trial(base: &SystemConfig, point: TrialPoint, trial_id: u64) -> Result<TrialOutcome> {
    let cfg = point.config(base);
    cfg.validate()?;
    let q = QuantModel::from_bits(point.bits)?;
    let mut last = None;
    for attempt in 0..=MAX_REDRAWS {
        let start = Instant::now();
        let result = Network::realize(
            &cfg,
            point.mode,
            &mut trial_rng(cfg.seed, trial_id, attempt),
        )
        .and_then(|net| run_sca(&net, q));
        match result {
            Ok(sca) => {
                let record = TrialRecord {
                    trial_id,
                    mode: point.mode,
                    bits: point.bits,
                    c_dl: point.c_dl,
                    c_ul: point.c_ul,
                    objective_bpshz: sca.report.objective,
                    sum_r_dl: sca.report.sum_dl(),
                    sum_r_ul: sca.report.sum_ul(),
                    sca_iters: sca.iterations(),
                    wall_ms: start.elapsed().as_secs_f64() * 1e3,
                };
                return Ok(TrialOutcome {
                    record,
                    sca,
                    redraws: attempt,
                });
            }
            Err(e) => {
                log::warn!(
                    "trial {trial_id} ({} B={}) attempt {attempt}: {e}",
                    point.mode,
                    point.bits
                );
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt ran"))
}

#[derive(Debug, Clone)]
pub struct TrialFailure {
    pub point: TrialPoint,
    pub trial_id: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrialBatch {
    /// Ordered by grid point, then trial id.
    pub records: Vec<TrialRecord>,
    pub failures: Vec<TrialFailure>,
}

impl TrialBatch {
    pub fn for_point(&self, point: &TrialPoint) -> impl Iterator<Item = &TrialRecord> + '_ {
        let p = *point;
        self.records.iter().filter(move |r| {
            r.mode == p.mode && r.bits == p.bits && r.c_dl == p.c_dl && r.c_ul == p.c_ul
        })
    }
}

/// Runs `trials` trials at every point, in parallel, failing the whole batch
/// when more than [`FAILURE_TOLERANCE`] of them fail.
pub fn run_trials(
    base: &SystemConfig,
    points: &[TrialPoint],
    trials: usize,
    threads: usize,
) -> Result<TrialBatch> {
    let jobs: Vec<(TrialPoint, u64)> = points
        .iter()
        .flat_map(|p| (0..trials as u64).map(move |t| (*p, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidExperiment(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<TrialRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, t)| run_trial(base, p, t).map(|o| o.record))
            .collect()
    });
    let mut batch = TrialBatch::default();
    for ((point, trial_id), r) in jobs.into_iter().zip(results) {
        match r {
            Ok(rec) => batch.records.push(rec),
            Err(e) => batch.failures.push(TrialFailure {
                point,
                trial_id,
                message: e.to_string(),
            }),
        }
    }
    let total = points.len() * trials;
    if !batch.failures.is_empty() {
        log::warn!(
            "{} of {total} trials failed and were excluded",
            batch.failures.len()
        );
    }
    if batch.failures.len() as f64 > FAILURE_TOLERANCE * total as f64 {
        return Err(Error::TooManyFailures {
            failed: batch.failures.len(),
            total,
        });
    }
    Ok(batch)
}

/// Shortest decimal representation of `v` rounded to 12 significant digits.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    rounded.to_string()
}

fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(std::io::Error::from)?;
    w.write_record(header).map_err(std::io::Error::from)?;
    for row in rows {
        w.write_record(&row).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trace_rows(trace: &[TraceRow]) -> Vec<Vec<String>> {
    trace
        .iter()
        .map(|r| {
            vec![
                r.iter.to_string(),
                fmt_sig(r.surrogate_obj_bpshz),
                fmt_sig(r.true_obj_bpshz),
                fmt_sig(r.max_cdl_violation),
                fmt_sig(r.max_cul_violation),
                fmt_sig(r.max_pd_violation),
            ]
        })
        .collect()
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    write_csv(path, &TRACE_HEADER, trace_rows(trace))
}

fn record_fields(r: &TrialRecord) -> Vec<String> {
    vec![
        r.trial_id.to_string(),
        r.mode.to_string(),
        r.bits.to_string(),
        fmt_sig(r.c_dl),
        fmt_sig(r.c_ul),
        fmt_sig(r.objective_bpshz),
        fmt_sig(r.sum_r_dl),
        fmt_sig(r.sum_r_ul),
        r.sca_iters.to_string(),
    ]
}

/// Full records including wall-clock time.
pub fn write_records_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_csv(
        path,
        &RECORD_HEADER,
        records.iter().map(|r| {
            let mut f = record_fields(r);
            f.push(fmt_sig(r.wall_ms));
            f
        }),
    )
}

/// Records without timing, so that repeated runs produce identical files.
pub fn write_samples_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_csv(path, &SAMPLE_HEADER, records.iter().map(record_fields))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub trace: Vec<TraceRow>,
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One realization, its full SCA trace written to `spec.out_path`.
pub fn run_convergence(cfg: &SystemConfig, spec: &ExperimentSpec) -> Result<ConvergenceReport> {
    spec.validate()?;
    let point = first_point(spec);
    let out = run_trial(cfg, point, 0)?;
    write_trace_csv(&spec.out_path, &out.sca.trace)?;
    Ok(ConvergenceReport {
        final_objective: out.sca.report.objective,
        iterations: out.sca.iterations(),
        converged: out.sca.converged,
        trace: out.sca.trace,
    })
}

fn first_point(spec: &ExperimentSpec) -> TrialPoint {
    TrialPoint {
        mode: spec.modes[0],
        bits: spec.bits_list[0],
        c_dl: spec.capacities[0].0,
        c_ul: spec.capacities[0].1,
    }
}

fn grid(spec: &ExperimentSpec) -> Vec<TrialPoint> {
    let mut points = Vec::new();
    for &mode in &spec.modes {
        for &(c_dl, c_ul) in &spec.capacities {
            for &bits in &spec.bits_list {
                points.push(TrialPoint {
                    mode,
                    bits,
                    c_dl,
                    c_ul,
                });
            }
        }
    }
    points
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mode: DuplexMode,
    pub bits: u32,
    pub mean_bpshz: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Mean and standard error of the mean, `(n − 1)` normalized.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub batch: TrialBatch,
}

/// Mean objective per `(mode, bits)` at the first capacity pair of `spec`.
pub fn run_bit_sweep(cfg: &SystemConfig, spec: &ExperimentSpec) -> Result<SweepReport> {
    spec.validate()?;
    let spec1 = ExperimentSpec {
        capacities: vec![spec.capacities[0]],
        ..spec.clone()
    };
    let points = grid(&spec1);
    let batch = run_trials(cfg, &points, spec.trials, spec.threads)?;
    let rows: Vec<SweepRow> = points
        .iter()
        .map(|p| {
            let vals: Vec<f64> = batch.for_point(p).map(|r| r.objective_bpshz).collect();
            let (mean, stderr) = mean_stderr(&vals);
            SweepRow {
                mode: p.mode,
                bits: p.bits,
                mean_bpshz: mean,
                stderr,
                trials: vals.len(),
            }
        })
        .collect();
    write_csv(
        &spec.out_path,
        &SWEEP_HEADER,
        rows.iter().map(|r| {
            vec![
                r.mode.to_string(),
                r.bits.to_string(),
                fmt_sig(r.mean_bpshz),
                fmt_sig(r.stderr),
                r.trials.to_string(),
            ]
        }),
    )?;
    Ok(SweepReport { rows, batch })
}

/// Sorted values with plotting positions `rank / (n + 1)`, rank from 1.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / (n + 1.0)))
        .collect()
}

/// Path of the CDF file written next to the per-sample file.
pub fn cdf_path(samples: &Path) -> PathBuf {
    let stem = samples
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("samples");
    let ext = samples
        .extension()
        .and_then(|s| s.to_str())
        .unwrap_or("csv");
    samples.with_file_name(format!("{stem}_cdf.{ext}"))
}

#[derive(Debug, Clone)]
pub struct CdfReport {
    pub points: Vec<TrialPoint>,
    pub batch: TrialBatch,
}

/// Per-trial objectives and their empirical CDF for every grid point.
pub fn run_cdf_compare(cfg: &SystemConfig, spec: &ExperimentSpec) -> Result<CdfReport> {
    spec.validate()?;
    let points = grid(spec);
    let batch = run_trials(cfg, &points, spec.trials, spec.threads)?;
    write_samples_csv(&spec.out_path, &batch.records)?;
    let mut rows = Vec::new();
    for p in &points {
        let vals: Vec<f64> = batch.for_point(p).map(|r| r.objective_bpshz).collect();
        for (rank, (x, f)) in empirical_cdf(&vals).into_iter().enumerate() {
            rows.push(vec![
                p.mode.to_string(),
                p.bits.to_string(),
                fmt_sig(p.c_dl),
                fmt_sig(p.c_ul),
                (rank + 1).to_string(),
                fmt_sig(x),
                fmt_sig(f),
            ]);
        }
    }
    write_csv(&cdf_path(&spec.out_path), &CDF_HEADER, rows)?;
    Ok(CdfReport { points, batch })
}

/// Trials at every grid point with full records, timing included.
pub fn run_records(cfg: &SystemConfig, spec: &ExperimentSpec) -> Result<TrialBatch> {
    spec.validate()?;
    let batch = run_trials(cfg, &grid(spec), spec.trials, spec.threads)?;
    write_records_csv(&spec.out_path, &batch.records)?;
    Ok(batch)
}

/// Deployment of trial 0 for each mode.
pub fn run_layout_dump(cfg: &SystemConfig, spec: &ExperimentSpec) -> Result<Vec<Layout>> {
    spec.validate()?;
    cfg.validate()?;
    let layouts = spec
        .modes
        .iter()
        .map(|&mode| draw_realization(cfg, mode, &mut trial_rng(cfg.seed, 0, 0)).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for l in &layouts {
        let groups = [
            ("trau", &l.trau_xy),
            ("rrau", &l.rrau_xy),
            ("dl_user", &l.dl_user_xy),
            ("ul_user", &l.ul_user_xy),
        ];
        for (role, pts) in groups {
            for (i, p) in pts.iter().enumerate() {
                rows.push(vec![
                    l.mode.to_string(),
                    role.to_string(),
                    i.to_string(),
                    fmt_sig(p[0]),
                    fmt_sig(p[1]),
                ]);
            }
        }
    }
    write_csv(&spec.out_path, &LAYOUT_HEADER, rows)?;
    Ok(layouts)
}
