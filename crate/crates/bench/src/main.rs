use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fmux_bench::checks::{gradcheck_suite, sketch_check, SketchShape};
use fmux_bench::config::SweepConfig;
use fmux_bench::dataset::prepare;
use fmux_bench::pareto::{check_frontier, frontier_by_family, pareto_frontier};
use fmux_bench::probe::{probe_experiment, trend_checks, ProbeConfig};
use fmux_bench::report::emit_report;
use fmux_bench::sweep::{read_results, read_timings, run_sweep, write_results};
use fmux_core::analysis::write_probe_csv;
use fmux_core::nn::Optimizer;

#[derive(Parser)]
#[command(
    name = "fmux",
    version,
    about = "Multiplexed embedding table experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every method at every budget multiplier.
    Sweep(SweepArgs),
    /// Non-dominated (params, AUC) results.
    Pareto(ParetoArgs),
    /// Shared-table probe of embedding norms and weight angles.
    Probe(ProbeArgs),
    /// Monte Carlo check of the sketch moments.
    SketchCheck(SketchArgs),
    /// Finite-difference check of backprop for every scheme and head.
    Gradcheck(GradArgs),
    /// Per-run CSV with wall times plus a JSON summary per cell.
    Report(ReportArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Comma-separated method families, e.g. `comp_pq,mux-comp_pq,unified`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    multipliers: Option<Vec<f64>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    resume: bool,
    /// Stop after this many new runs.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

impl SweepArgs {
    fn into_config(self) -> Result<SweepConfig> {
        let mut c = match &self.config {
            Some(p) => SweepConfig::load(p)?,
            None => SweepConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    c.$field = v;
                }
            )*};
        }
        set!(
            dataset,
            methods,
            multipliers,
            replicates,
            epochs,
            batch,
            lr,
            seed,
            jobs,
            out
        );
        if self.steps.is_some() {
            c.steps = self.steps;
        }
        if self.stop_after.is_some() {
            c.stop_after = self.stop_after;
        }
        c.resume |= self.resume;
        Ok(c)
    }
}

#[derive(Args)]
struct ParetoArgs {
    /// results.csv from a sweep.
    results: PathBuf,
    /// Frontier per method family instead of overall.
    #[arg(long)]
    by_family: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long, default_value = "power-law")]
    dataset: String,
    /// Table sizes as fractions of the largest vocabulary.
    #[arg(long, value_delimiter = ',', default_value = "0.125,0.25,0.5,1")]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    theta_norm: f64,
    #[arg(long, default_value = "sgd")]
    optimizer: Optimizer,
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "probe.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SketchArgs {
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    /// Allowed deviation in standard errors.
    #[arg(long, default_value_t = 3.0)]
    z: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep output directory holding results.csv and timings.csv.
    dir: PathBuf,
    /// Where to write report.csv and summary.json; defaults to `dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` when a checked invariant failed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Sweep(args) => {
            let config = args.into_config()?;
            let s = run_sweep(&config)?;
            println!(
                "{} planned, {} completed, {} failed, {} resumed{}",
                s.planned,
                s.completed,
                s.failed,
                s.resumed,
                if s.stopped { ", stopped early" } else { "" }
            );
            if !s.stopped {
                let records = read_results(&config.out.join("results.csv"))?;
                let timings = read_timings(&config.out.join("timings.csv"))?;
                emit_report(&config.out, &records, &timings)?;
            }
            Ok(true)
        }
        Command::Pareto(args) => {
            let records = read_results(&args.results)?;
            let frontier: Vec<_> = if args.by_family {
                frontier_by_family(&records)
                    .into_values()
                    .flatten()
                    .collect()
            } else {
                pareto_frontier(&records)
            };
            let sound = args.by_family || check_frontier(&frontier, &records).is_none();
            match &args.out {
                Some(p) => write_results(p, &frontier)?,
                None => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    for r in &frontier {
                        w.serialize(r)?;
                    }
                    w.flush()?;
                }
            }
            if !sound {
                eprintln!("frontier contains a dominated point");
            }
            Ok(sound)
        }
        Command::Probe(args) => {
            let data = prepare(&args.dataset, args.seed)?;
            let config = ProbeConfig {
                fractions: args.fractions,
                seeds: args.seeds,
                seed: args.seed,
                dim: args.dim,
                theta_norm: args.theta_norm,
                optimizer: args.optimizer,
                lr: args.lr,
                batch: args.batch,
                epochs: args.epochs,
                steps: args.steps,
                jobs: args.jobs,
            };
            let rows = probe_experiment(&data, &config)?;
            let mut out = BufWriter::new(
                File::create(&args.out)
                    .with_context(|| format!("creating {}", args.out.display()))?,
            );
            write_probe_csv(&mut out, &rows)?;
            out.flush()?;
            for (seed, norms, angle) in trend_checks(&rows) {
                println!("seed {seed:>20}  norms decreasing: {norms:<5}  angle smallest > largest: {angle}");
            }
            Ok(true)
        }
        Command::SketchCheck(args) => {
            let rows = sketch_check(
                SketchShape::default(),
                args.instances,
                args.trials,
                args.z,
                args.seed,
            )?;
            for r in &rows {
                println!("{r}");
            }
            let failed = rows.iter().filter(|r| !r.pass).count();
            println!("{} of {} checks passed", rows.len() - failed, rows.len());
            Ok(failed == 0)
        }
        Command::Gradcheck(args) => {
            let rows = gradcheck_suite(args.seed, args.tolerance)?;
            for r in &rows {
                println!("{r}");
            }
            Ok(rows.iter().all(|r| r.pass))
        }
        Command::Report(args) => {
            let records = read_results(&args.dir.join("results.csv"))?;
            let timings = read_timings(&args.dir.join("timings.csv"))?;
            emit_report(args.out.as_ref().unwrap_or(&args.dir), &records, &timings)?;
            Ok(true)
        }
    }
}
