use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use fmux_core::hashing::derive_seed;
use fmux_core::nn::{self, FeatureTables, Model, ModelSpec, Optimizer, TrainConfig};
use fmux_core::tables::{budget_for_multiplier, build_scheme, SchemeConfig, SchemeKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SweepConfig;
use crate::dataset::{prepare, Prepared};
use crate::methods::{expand, Method};

pub const RESULTS_HEADER: [&str; 8] = [
    "method",
    "multiplexed",
    "multiplier",
    "params",
    "seed",
    "best_epoch",
    "auc",
    "logloss",
];

/// One completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub multiplexed: bool,
    pub multiplier: f64,
    /// Embedding parameters actually allocated.
    pub params: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub auc: f64,
    pub logloss: f64,
}

impl RunRecord {
    fn key(&self) -> RunKey {
        (self.method.clone(), self.multiplier.to_bits(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub method: String,
    pub multiplier: f64,
    pub seed: u64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub method: String,
    pub multiplexed: bool,
    pub multiplier: f64,
    pub seed: u64,
    pub error: String,
}

impl Failure {
    fn key(&self) -> RunKey {
        (self.method.clone(), self.multiplier.to_bits(), self.seed)
    }
}

type RunKey = (String, u64, u64);

#[derive(Debug, Clone)]
pub struct PlannedRun {
    pub method: Method,
    pub multiplier: f64,
    pub replicate: usize,
    pub seed: u64,
}

impl PlannedRun {
    fn key(&self) -> RunKey {
        (self.method.label(), self.multiplier.to_bits(), self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub planned: usize,
    pub completed: usize,
    pub failed: usize,
    /// Runs found in the partial files of an earlier invocation.
    pub resumed: usize,
    /// Set when `stop_after` cut the sweep short.
    pub stopped: bool,
}

/// Methods x grid points x multipliers x replicates, in output order.
/// Collisionless tables get the single multiplier 1.0.
pub fn plan_runs(config: &SweepConfig) -> Result<Vec<PlannedRun>> {
    let mut runs = Vec::new();
    for token in &config.methods {
        for method in expand(token, &config.grid)? {
            let multipliers = if method.fixed_budget() {
                vec![1.0]
            } else {
                config.multipliers.clone()
            };
            for &multiplier in &multipliers {
                for replicate in 0..config.replicates {
                    runs.push(PlannedRun {
                        method: method.clone(),
                        multiplier,
                        replicate,
                        seed: derive_seed(config.seed, replicate as u64),
                    });
                }
            }
        }
    }
    Ok(runs)
}

/// Builds the embedding tables of one run. Pinned features always get their
/// own collisionless table; the budget covers the remaining features.
pub fn build_tables(
    data: &Prepared,
    method: &Method,
    multiplier: f64,
    dim: usize,
    seed: u64,
) -> Result<FeatureTables> {
    if method.kind == SchemeKind::Collisionless || data.pinned.is_empty() {
        let config = method.scheme_config(
            vec![dim; data.cardinalities.len()],
            budget_for_multiplier(multiplier, &data.cardinalities, dim),
            seed,
        )?;
        return Ok(build_scheme(config, &data.cardinalities)?.into());
    }
    let hashed = data.hashed_features();
    let hashed_cards: Vec<usize> = hashed.iter().map(|&t| data.cardinalities[t]).collect();
    let pinned_cards: Vec<usize> = data.pinned.iter().map(|&t| data.cardinalities[t]).collect();
    let budget = budget_for_multiplier(multiplier, &hashed_cards, dim);
    let main = build_scheme(
        method.scheme_config(vec![dim; hashed.len()], budget, seed)?,
        &hashed_cards,
    )?;
    let pinned = build_scheme(
        SchemeConfig::new(SchemeKind::Collisionless, vec![dim; pinned_cards.len()], 0)
            .with_seed(derive_seed(seed, 7)),
        &pinned_cards,
    )?;
    let route = (0..data.cardinalities.len())
        .map(|t| match data.pinned.iter().position(|&p| p == t) {
            Some(i) => (1, i),
            None => (0, hashed.iter().position(|&h| h == t).unwrap()),
        })
        .collect();
    Ok(FeatureTables::new(vec![main, pinned], route)?)
}

pub fn model_spec(config: &SweepConfig, features: usize) -> ModelSpec {
    ModelSpec::dcn_mlp(
        vec![config.dim; features],
        config.cross_layers,
        config.dense.clone(),
    )
}

pub fn train_config(config: &SweepConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        optimizer: Optimizer::Adam,
        lr: config.lr,
        batch: config.batch,
        epochs: config.epochs,
        steps_per_epoch: config.steps,
        seed,
        ..TrainConfig::default()
    }
}

/// Trains one planned run. Single-threaded and deterministic in its seed.
pub fn execute_run(config: &SweepConfig, data: &Prepared, run: &PlannedRun) -> Result<RunRecord> {
    let mut tables = build_tables(
        data,
        &run.method,
        run.multiplier,
        config.dim,
        derive_seed(run.seed, 1),
    )?;
    let mut model = Model::new(
        model_spec(config, data.cardinalities.len()),
        derive_seed(run.seed, 2),
    )?;
    let outcome = nn::train(
        &mut model,
        &mut tables,
        &data.train,
        &data.eval,
        &train_config(config, derive_seed(run.seed, 3)),
    )?;
    Ok(RunRecord {
        method: run.method.label(),
        multiplexed: run.method.multiplexed,
        multiplier: run.multiplier,
        params: tables.param_count(),
        seed: run.seed,
        best_epoch: outcome.best_epoch,
        auc: outcome.best.auc,
        logloss: outcome.best.logloss,
    })
}

struct Sink {
    results: csv::Writer<File>,
    failures: csv::Writer<File>,
    timings: csv::Writer<File>,
    completed: usize,
    failed: usize,
}

fn append_writer(path: &Path, fresh: bool) -> Result<csv::Writer<File>> {
    let exists = path.exists() && fs::metadata(path)?.len() > 0;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(fresh || !exists)
        .from_writer(file))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row.with_context(|| format!("parsing {}", path.display()))?);
    }
    Ok(out)
}

pub fn read_results(path: &Path) -> Result<Vec<RunRecord>> {
    read_csv(path)
}

pub fn read_timings(path: &Path) -> Result<Vec<Timing>> {
    read_csv(path)
}

pub fn write_results(path: &Path, records: &[RunRecord]) -> Result<()> {
    write_csv(path, &RESULTS_HEADER, records)
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ));
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the sweep into `config.out`.
///
/// Completed and failed runs are appended to `*.partial.csv` as they finish;
/// with `resume` those runs are not repeated. The final files list runs in
/// plan order, so they do not depend on scheduling.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepSummary> {
    config.validate()?;
    let plan = plan_runs(config)?;
    let data = prepare(&config.dataset, config.seed)?;
    log::info!(
        "{}: {} train / {} eval examples, {} runs planned",
        data.description,
        data.train.len(),
        data.eval.len(),
        plan.len()
    );
    fs::create_dir_all(&config.out)?;
    let out = &config.out;
    let partial = out.join("results.partial.csv");
    let partial_fail = out.join("failures.partial.csv");
    let partial_time = out.join("timings.partial.csv");
    let fresh = !config.resume;
    if fresh {
        for p in [&partial, &partial_fail, &partial_time] {
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
    }
    let done: HashSet<RunKey> = read_results(&partial)?
        .iter()
        .map(RunRecord::key)
        .chain(read_csv::<Failure>(&partial_fail)?.iter().map(Failure::key))
        .collect();
    let mut pending: Vec<&PlannedRun> = plan.iter().filter(|r| !done.contains(&r.key())).collect();
    let resumed = plan.len() - pending.len();
    let mut stopped = false;
    if let Some(n) = config.stop_after {
        if n < pending.len() {
            pending.truncate(n);
            stopped = true;
        }
    }

    let sink = Mutex::new(Sink {
        results: append_writer(&partial, fresh)?,
        failures: append_writer(&partial_fail, fresh)?,
        timings: append_writer(&partial_time, fresh)?,
        completed: 0,
        failed: 0,
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()?;
    pool.install(|| {
        pending.par_iter().try_for_each(|run| -> Result<()> {
            let start = Instant::now();
            let outcome = execute_run(config, &data, run);
            let wall_s = start.elapsed().as_secs_f64();
            let mut sink = sink.lock().unwrap();
            match outcome {
                Ok(record) => {
                    log::info!(
                        "{} x{} seed {}: auc {:.4}",
                        record.method,
                        record.multiplier,
                        record.seed,
                        record.auc
                    );
                    sink.timings.serialize(Timing {
                        method: record.method.clone(),
                        multiplier: record.multiplier,
                        seed: record.seed,
                        wall_s,
                    })?;
                    sink.timings.flush()?;
                    sink.results.serialize(record)?;
                    sink.results.flush()?;
                    sink.completed += 1;
                }
                Err(e) => {
                    log::warn!(
                        "{} x{} seed {} failed: {e:#}",
                        run.method.label(),
                        run.multiplier,
                        run.seed
                    );
                    sink.failures.serialize(Failure {
                        method: run.method.label(),
                        multiplexed: run.method.multiplexed,
                        multiplier: run.multiplier,
                        seed: run.seed,
                        error: format!("{e:#}"),
                    })?;
                    sink.failures.flush()?;
                    sink.failed += 1;
                }
            }
            Ok(())
        })
    })?;
    let sink = sink.into_inner().unwrap();
    let (completed, failed) = (sink.completed, sink.failed);
    drop(sink);

    let summary = SweepSummary {
        planned: plan.len(),
        completed,
        failed,
        resumed,
        stopped,
    };
    if stopped {
        return Ok(summary);
    }
    finalize(out, &plan)?;
    Ok(summary)
}

/// Rewrites the partial files as `results.csv`, `failures.csv` and
/// `timings.csv` in plan order and checks that every planned run is
/// accounted for exactly once.
fn finalize(out: &Path, plan: &[PlannedRun]) -> Result<()> {
    let order: HashMap<RunKey, usize> =
        plan.iter().enumerate().map(|(i, r)| (r.key(), i)).collect();
    let rank = |k: &RunKey| order.get(k).copied().unwrap_or(usize::MAX);

    let mut results = dedup(
        read_results(&out.join("results.partial.csv"))?,
        RunRecord::key,
    );
    results.sort_by_key(|r| rank(&r.key()));
    let mut failures = dedup(
        read_csv::<Failure>(&out.join("failures.partial.csv"))?,
        Failure::key,
    );
    failures.sort_by_key(|f| rank(&f.key()));
    let mut timings = dedup(
        read_timings(&out.join("timings.partial.csv"))?,
        |t: &Timing| (t.method.clone(), t.multiplier.to_bits(), t.seed),
    );
    timings.sort_by_key(|t| rank(&(t.method.clone(), t.multiplier.to_bits(), t.seed)));

    let accounted: HashSet<RunKey> = results
        .iter()
        .map(RunRecord::key)
        .chain(failures.iter().map(Failure::key))
        .collect();
    if accounted.len() != plan.len() || results.len() + failures.len() != plan.len() {
        bail!(
            "run count mismatch: {} completed + {} failed for {} planned",
            results.len(),
            failures.len(),
            plan.len()
        );
    }
    write_results(&out.join("results.csv"), &results)?;
    write_csv(
        &out.join("failures.csv"),
        &["method", "multiplexed", "multiplier", "seed", "error"],
        &failures,
    )?;
    write_csv(
        &out.join("timings.csv"),
        &["method", "multiplier", "seed", "wall_s"],
        &timings,
    )?;
    Ok(())
}

fn dedup<T, K: std::hash::Hash + Eq>(rows: Vec<T>, key: impl Fn(&T) -> K) -> Vec<T> {
    let mut seen = HashSet::new();
    rows.into_iter().filter(|r| seen.insert(key(r))).collect()
}
