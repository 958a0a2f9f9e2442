//! `noma` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! invariant error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::channel::draw_network;
use crate::config::NetworkConfig;
use crate::dataset::{
    looks_labelled, read_dataset, read_predictions, write_dataset, SampleRecord,
};
use crate::error::{Error, Result};
use crate::rate::check_feasibility_with;
use crate::solve::{
    cdf_csv, empirical_cdf, load_config, parallel_map, sample_seed, sample_sum_rates,
    solve_baseline, Method, SolveResult, SolverSettings,
};

#[derive(Debug, Parser)]
#[command(name = "noma", version, about = "Multi-cell multi-carrier NOMA resource allocation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve seeded instances with the baseline and write a labelled dataset.
    Generate(GenerateArgs),
    /// Solve one seeded instance and print its rate report as JSON.
    Solve(SolveArgs),
    /// Write the empirical sum-rate CDF of a solver or of a prediction file.
    Evaluate(EvaluateArgs),
    /// Check every record invariant of a dataset or prediction file.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// `key = value` scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Channel seed; defaults to the config's `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV of every solver trace (`round,stage,iteration,objective`).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SolverChoice {
    Baseline,
    Heuristic,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Number of samples; with `--predictions`, the first N records.
    #[arg(long)]
    samples: Option<usize>,
    /// Score this prediction file instead of running a solver.
    #[arg(long, conflicts_with = "solver")]
    predictions: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "baseline")]
    solver: SolverChoice,
    #[arg(long)]
    out: PathBuf,
    /// Base seed; defaults to the config's `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    dataset: PathBuf,
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::ConfigSyntax { .. } => 1,
        _ => 2,
    }
}

fn workers(requested: Option<usize>) -> usize {
    requested.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn resolve(config: &ConfigArg) -> Result<(NetworkConfig, SolverSettings)> {
    let (cfg, settings) = load_config(config.config.as_deref())?;
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "# resolved configuration");
    for line in cfg
        .to_kv_string()
        .lines()
        .chain(settings.to_kv_string().lines())
    {
        let _ = writeln!(err, "#   {line}");
    }
    Ok((cfg, settings))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let (cfg, settings) = resolve(&args.config)?;
    let records = parallel_map(args.samples, workers(args.workers), |i| {
        let seed = sample_seed(args.seed, i);
        let ch = draw_network(&cfg, seed)?;
        let res = solve_baseline(&ch, &cfg, &settings)?;
        Ok(SampleRecord::new(seed, &cfg, &ch, &res.alloc, res.report.sum_rate))
    })?;
    let n = write_dataset(&records, &args.out)?;
    eprintln!("wrote {n} records to {}", args.out.display());
    Ok(())
}

fn trace_csv(res: &SolveResult) -> String {
    let mut out = String::from("round,stage,iteration,objective\n");
    for (i, v) in res.outer_trace.iter().enumerate() {
        out.push_str(&format!("{i},outer,0,{v}\n"));
    }
    for (r, t) in res.round_traces.iter().enumerate() {
        for (i, v) in t.beam.iter().enumerate() {
            out.push_str(&format!("{},beam,{i},{v}\n", r + 1));
        }
        for (i, v) in t.power.iter().enumerate() {
            out.push_str(&format!("{},power,{i},{v}\n", r + 1));
        }
    }
    out
}

fn solve(args: &SolveArgs) -> Result<()> {
    let (cfg, settings) = resolve(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.rng_seed);
    let ch = draw_network(&cfg, seed)?;
    let res = solve_baseline(&ch, &cfg, &settings)?;
    if let Some(path) = &args.trace_out {
        write_file(path, &trace_csv(&res))?;
    }
    eprintln!(
        "# {} rounds, {:.3} s, sum rate {} bit/s",
        res.rounds, res.wall_time, res.report.sum_rate
    );
    println!("{}", res.report.to_json());
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let (cfg, settings) = resolve(&args.config)?;
    let rates = match &args.predictions {
        Some(path) => {
            let mut preds = read_predictions(path)?;
            if let Some(n) = args.samples {
                preds.truncate(n);
            }
            parallel_map(preds.len(), workers(args.workers), |i| {
                let rec = &preds[i];
                let (ch, alloc) = rec.project()?;
                let d = &rec.cfg_digest;
                Ok(check_feasibility_with(&ch, &alloc, &d.model(), d.power_budget(), d.min_rate)?
                    .sum_rate)
            })?
        }
        None => {
            let Some(n) = args.samples else {
                return Err(Error::Config("--samples is required without --predictions".into()));
            };
            let method = match args.solver {
                SolverChoice::Baseline => Method::Baseline,
                SolverChoice::Heuristic => Method::Heuristic,
            };
            let seed = args.seed.unwrap_or(cfg.rng_seed);
            sample_sum_rates(&cfg, &settings, method, n, seed, workers(args.workers))?
        }
    };
    write_file(&args.out, &cdf_csv(&empirical_cdf(&rates)))?;
    eprintln!("wrote CDF of {} samples to {}", rates.len(), args.out.display());
    Ok(())
}

fn validate(args: &ValidateArgs) -> Result<()> {
    let path = &args.dataset;
    if looks_labelled(path)? {
        let records = read_dataset(path)?;
        eprintln!("{}: {} records valid", path.display(), records.len());
    } else {
        let preds = read_predictions(path)?;
        for (i, rec) in preds.iter().enumerate() {
            let (ch, alloc) = rec.project()?;
            let d = &rec.cfg_digest;
            let report = check_feasibility_with(&ch, &alloc, &d.model(), d.power_budget(), d.min_rate)?;
            let problem = alloc.invariant_violation().or_else(|| {
                (!report.schedule_valid || !report.budgets_met(d.power_budget()))
                    .then(|| "projected allocation infeasible".to_string())
            });
            if let Some(reason) = problem {
                return Err(Error::Invariant {
                    path: path.clone(),
                    record: i,
                    reason,
                });
            }
        }
        eprintln!(
            "{}: {} prediction records valid after projection",
            path.display(),
            preds.len()
        );
    }
    Ok(())
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => generate(a),
        Command::Solve(a) => solve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
