use anyhow::{bail, Result};
use fmux_core::analysis::{mean_pairwise_angle, used_row_norm, ProbeRow};
use fmux_core::hashing::derive_seed;
use fmux_core::nn::{self, FeatureTables, Model, ModelSpec, Optimizer, TrainConfig};
use fmux_core::tables::{build_scheme, SchemeConfig, SchemeKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dataset::Prepared;

/// Shared-table probe: a logistic model over one unified table of `M` rows,
/// started with every per-feature weight vector pointing the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Table sizes as fractions of the largest vocabulary.
    pub fractions: Vec<f64>,
    pub seeds: usize,
    pub seed: u64,
    pub dim: usize,
    /// Norm of each aligned weight partition at the start.
    pub theta_norm: f64,
    pub optimizer: Optimizer,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub steps: Option<usize>,
    pub jobs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.125, 0.25, 0.5, 1.0],
            seeds: 5,
            seed: 0,
            dim: 16,
            theta_norm: 1.0,
            optimizer: Optimizer::Sgd,
            lr: 0.5,
            batch: 256,
            epochs: 5,
            steps: None,
            jobs: 1,
        }
    }
}

/// Rows for the table sizes of `config`.
pub fn table_sizes(data: &Prepared, fractions: &[f64]) -> Vec<usize> {
    let n = data.cardinalities.iter().copied().max().unwrap_or(0);
    fractions
        .iter()
        .map(|f| ((f * n as f64).round() as usize).max(1))
        .collect()
}

pub fn probe_one(
    data: &Prepared,
    config: &ProbeConfig,
    rows: usize,
    seed: u64,
) -> Result<ProbeRow> {
    let features = data.cardinalities.len();
    let scheme = build_scheme(
        SchemeConfig::new(
            SchemeKind::Unified,
            vec![config.dim; features],
            rows * config.dim,
        )
        .with_seed(derive_seed(seed, 1)),
        &data.cardinalities,
    )?;
    let mut tables = FeatureTables::from(scheme);
    let mut model = Model::new(
        ModelSpec::logistic(vec![config.dim; features]),
        derive_seed(seed, 2),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
    let mut direction: Vec<f64> = (0..config.dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut direction {
        *x *= config.theta_norm / norm;
    }
    model.align_theta(&direction)?;
    let train = TrainConfig {
        optimizer: config.optimizer,
        lr: config.lr,
        batch: config.batch,
        epochs: config.epochs,
        steps_per_epoch: config.steps,
        seed: derive_seed(seed, 3),
        ..TrainConfig::default()
    };
    nn::train(&mut model, &mut tables, &data.train, &data.eval, &train)?;
    let theta = model.theta_partitions().expect("logistic head");
    Ok(ProbeRow {
        table_size: rows,
        seed,
        mean_angle_deg: mean_pairwise_angle(&theta)?,
        mean_sq_norm: used_row_norm(&tables.tables()[0], &data.train)?,
    })
}

/// One row per (table size, seed), sizes outermost.
pub fn probe_experiment(data: &Prepared, config: &ProbeConfig) -> Result<Vec<ProbeRow>> {
    if data.cardinalities.len() < 2 {
        bail!("the probe needs at least two categorical features");
    }
    let jobs: Vec<(usize, u64)> = table_sizes(data, &config.fractions)
        .into_iter()
        .flat_map(|m| (0..config.seeds).map(move |s| (m, derive_seed(config.seed, s as u64))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(m, s)| probe_one(data, config, m, s))
            .collect()
    })
}

/// Per seed, whether norms strictly fall as the table grows and whether the
/// angle at the smallest table exceeds that at the largest.
pub fn trend_checks(rows: &[ProbeRow]) -> Vec<(u64, bool, bool)> {
    let mut seeds: Vec<u64> = Vec::new();
    for r in rows {
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    seeds
        .into_iter()
        .map(|s| {
            let mut mine: Vec<&ProbeRow> = rows.iter().filter(|r| r.seed == s).collect();
            mine.sort_by_key(|r| r.table_size);
            let norms_fall = mine
                .windows(2)
                .all(|w| w[1].mean_sq_norm < w[0].mean_sq_norm);
            let angle = match (mine.first(), mine.last()) {
                (Some(a), Some(b)) if mine.len() > 1 => a.mean_angle_deg > b.mean_angle_deg,
                _ => false,
            };
            (s, norms_fall, angle)
        })
        .collect()
}
