//! `fof` command-line front end.

mod config;
mod instance;

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fof_core::eval::{
    self, precision_curve, report_header, run_benchmark, success_auc, BenchOptions, BenchReport, Sequence,
    PRECISION_THRESHOLD,
};
use fof_core::features::BBox;
use fof_core::tracker::TrackerConfig;
use log::{info, warn};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io(_) => 1,
        }
    }
}

/// Errors caused by bad input (parameters, missing or malformed data) are
/// usage errors; everything else is a runtime failure.
fn core_error(e: fof_core::Error) -> CliError {
    use fof_core::Error as E;
    match e {
        E::InvalidParameter(_) | E::Dataset(_) | E::DimensionMismatch(_) | E::GridTooSmall(_) | E::Json(_) => {
            CliError::Config(e.to_string())
        }
        other => CliError::Runtime(other.to_string()),
    }
}

#[derive(Parser)]
#[command(name = "fof", version, about = "Correlation-filter tracking with jointly learned feature codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one sequence in OTB layout.
    Track(TrackArgs),
    /// Track and score every sequence under a dataset root.
    Bench(BenchArgs),
    /// Run the joint solver on a saved instance and write its trace.
    Solve(SolveArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration value, e.g. `--set solver.gamma=5` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated ablations: noJL, noL, noTR, noSH.
    #[arg(long)]
    ablation: Option<String>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Write per-frame solver traces.
    #[arg(long)]
    emit_traces: bool,
    /// Write annotated frames.
    #[arg(long)]
    emit_frames: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    /// Sequence directory containing `img/` and optionally `groundtruth_rect.txt`.
    #[arg(long)]
    seq: PathBuf,
    /// Initial box `x,y,w,h` in 1-based pixel coordinates.
    #[arg(long, value_name = "X,Y,W,H")]
    init: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Repeat the benchmark for each value: `key=v1,v2,...`.
    #[arg(long, value_name = "KEY=V1,V2")]
    sweep: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SolveArgs {
    /// JSON instance file.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Track(a) => cmd_track(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Solve(a) => cmd_solve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fof: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn resolve(common: &Common) -> Result<TrackerConfig, CliError> {
    config::resolve(&config::Layered {
        file: common.config.as_deref(),
        sets: &common.sets,
        seed: common.seed,
        ablation: common.ablation.as_deref(),
    })
}

fn set_jobs(jobs: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn parse_init(s: &str) -> Result<BBox, CliError> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Config(format!("--init expects x,y,w,h, got `{s}`")))?;
    if v.len() != 4 {
        return Err(CliError::Config(format!("--init expects 4 numbers, got {}", v.len())));
    }
    BBox::new(v[0] - 1.0, v[1] - 1.0, v[2], v[3]).map_err(core_error)
}

#[derive(Serialize)]
struct TrackDiagnostics<'a> {
    sequence: &'a str,
    notes: &'a [String],
    frames: &'a [fof_core::tracker::FrameDiagnostics],
}

fn cmd_track(args: TrackArgs) -> Result<(), CliError> {
    let cfg = resolve(&args.common)?;
    set_jobs(args.common.jobs)?;
    let init = args.init.as_deref().map(parse_init).transpose()?;
    let seq = Sequence::load(&args.seq).map_err(core_error)?;
    if init.is_none() && seq.ground_truth.first().copied().flatten().is_none() {
        return Err(CliError::Config(format!(
            "{}: no ground truth for the first frame; pass --init x,y,w,h",
            args.seq.display()
        )));
    }
    let out = &args.common.out;
    config::echo(&cfg, out)?;
    let result = eval::track_sequence(&seq, init, &cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let opts = BenchOptions {
        tracker: cfg.clone(),
        emit_traces: args.common.emit_traces,
        emit_frames: args.common.emit_frames,
    };
    eval::write_outputs(&seq, &result, &opts, out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let diag = TrackDiagnostics { sequence: &seq.name, notes: &result.notes, frames: &result.diagnostics };
    let mut f = BufWriter::new(fs::File::create(out.join(format!("{}.diagnostics.json", seq.name)))?);
    serde_json::to_writer_pretty(&mut f, &diag).map_err(|e| CliError::Runtime(e.to_string()))?;
    f.flush()?;

    let mut stdout = io::stdout().lock();
    write!(stdout, "{}", report_header(&cfg))?;
    for n in &result.notes {
        writeln!(stdout, "# {n}")?;
    }
    write!(stdout, "{}: {} frames, {:.2} fps", seq.name, result.boxes.len(), result.fps())?;
    if seq.has_ground_truth() {
        let pr = precision_curve(&result.boxes, &seq.ground_truth).map_err(core_error)?;
        let auc = success_auc(&result.boxes, &seq.ground_truth).map_err(core_error)?;
        write!(stdout, ", PR@20 {:.4}, SR AUC {:.4}", pr.at(PRECISION_THRESHOLD).unwrap_or(0.0), auc)?;
    }
    writeln!(stdout)?;
    info!("results written to {}", out.display());
    Ok(())
}

fn bench_once(dataset: &Path, opts: &BenchOptions, out: &Path) -> Result<BenchReport, CliError> {
    config::echo(&opts.tracker, out)?;
    let report = run_benchmark(dataset, opts, out).map_err(core_error)?;
    if report.sequences.is_empty() && report.failures.is_empty() {
        warn!("no sequences under {}", dataset.display());
    }
    Ok(report)
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let cfg = resolve(&args.common)?;
    set_jobs(args.common.jobs)?;
    if !args.dataset.is_dir() {
        return Err(CliError::Config(format!("dataset root {} is not a directory", args.dataset.display())));
    }
    let out = &args.common.out;
    let base = BenchOptions { tracker: cfg, emit_traces: args.common.emit_traces, emit_frames: args.common.emit_frames };
    let mut stdout = io::stdout().lock();

    let Some(spec) = args.sweep.as_deref() else {
        let report = bench_once(&args.dataset, &base, out)?;
        write!(stdout, "{}", report_header(&base.tracker))?;
        write!(stdout, "{}", eval::format_table(&report))?;
        return if report.all_failed() {
            Err(CliError::Runtime("every sequence failed".into()))
        } else {
            Ok(())
        };
    };

    let (key, values) = config::parse_sweep(spec)?;
    let key = config::canonical_key(&key);
    // Validate every point before running any of them.
    let points: Vec<(String, TrackerConfig)> = values
        .iter()
        .map(|v| {
            let cfg = config::apply_overrides(&base.tracker, &[format!("{key}={v}")])?;
            cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
            Ok((v.clone(), cfg))
        })
        .collect::<Result<_, CliError>>()?;

    fs::create_dir_all(out)?;
    let mut table = format!("{:<16} {:>7} {:>7}\n", key, "PR@20", "SR_AUC");
    let mut csv = format!("{key},PR@20,SR_AUC,sequences,failures\n");
    let mut any_ok = false;
    for (value, tracker) in points {
        let dir = out.join(format!("{key}={value}").replace(['/', ' ', '"'], "_"));
        let opts = BenchOptions { tracker, ..base.clone() };
        let report = bench_once(&args.dataset, &opts, &dir)?;
        any_ok |= !report.all_failed();
        table.push_str(&format!("{:<16} {:>7.4} {:>7.4}\n", value, report.mean_pr20, report.mean_auc));
        csv.push_str(&format!(
            "{value},{:.4},{:.4},{},{}\n",
            report.mean_pr20,
            report.mean_auc,
            report.sequences.len(),
            report.failures.len()
        ));
    }
    fs::write(out.join("sweep.csv"), &csv)?;
    write!(stdout, "{}", report_header(&base.tracker))?;
    write!(stdout, "{table}")?;
    if any_ok {
        Ok(())
    } else {
        Err(CliError::Runtime("every sequence failed at every sweep value".into()))
    }
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let cfg = config::resolve(&config::Layered {
        file: args.config.as_deref(),
        sets: &args.sets,
        seed: None,
        ablation: None,
    })?;
    let inst = instance::Instance::load(&args.instance)?;
    let sol = inst.solve(&cfg.solver)?;
    fs::create_dir_all(&args.out)?;
    config::echo(&cfg, &args.out)?;
    let mut f = BufWriter::new(fs::File::create(args.out.join("trace.csv"))?);
    fof_core::solver::write_trace_csv(&mut f, &sol.trace)?;
    f.flush()?;
    let mut f = BufWriter::new(fs::File::create(args.out.join("filter.json"))?);
    serde_json::to_writer(&mut f, sol.filter.spatial().values()).map_err(|e| CliError::Runtime(e.to_string()))?;
    f.flush()?;

    let mut stdout = io::stdout().lock();
    writeln!(stdout, "# lambda={} gamma={} admm_iters={} nag_iters={}", cfg.solver.lambda, cfg.solver.gamma, cfg.solver.admm_iters, cfg.solver.nag_iters)?;
    for (i, r) in sol.trace.iter().enumerate() {
        writeln!(
            stdout,
            "sweep {}: objective {:.6e}, |X-BZ| {:.3e}, |p-Zc| {:.3e}, mu {:.1e}",
            i + 1,
            r.objective,
            r.coding_residual,
            r.window_residual,
            r.mu
        )?;
    }
    Ok(())
}
