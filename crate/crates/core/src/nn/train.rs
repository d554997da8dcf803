use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::Examples;
use crate::hashing::derive_seed;
use crate::metrics::{self, MetricError};

use super::{batch_loss_and_grad, forward_into, FeatureTables, Gradients, Model, NnError, Tape};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    Diverged {
        epoch: usize,
        step: usize,
        what: String,
    },
    #[error("evaluation failed: {0}")]
    Metric(#[from] MetricError),
    #[error("invalid training config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(TrainError::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Steps per epoch; one pass over the training set when `None`.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
    /// Also evaluate every this many steps.
    pub eval_every: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            lr: 2e-4,
            batch: 128,
            epochs: 3,
            steps_per_epoch: None,
            seed: 0,
            eval_every: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch == 0
            || self.epochs == 0
            || self.steps_per_epoch == Some(0)
            || self.eval_every == Some(0)
        {
            return Err(TrainError::Config(
                "batch, epochs and steps must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub auc: f64,
    pub logloss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub epoch: usize,
    pub split: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<HistoryRow>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best: EvalMetrics,
    pub steps: usize,
}

/// Predicted probabilities, AUC and log loss on `examples`.
pub fn evaluate(
    model: &Model,
    tables: &FeatureTables,
    examples: &Examples,
) -> Result<EvalMetrics, TrainError> {
    let mut tape = Tape::default();
    let mut probs = Vec::with_capacity(examples.len());
    for i in 0..examples.len() {
        forward_into(model, tables, examples.tokens(i), &mut tape)?;
        probs.push(tape.prob);
    }
    Ok(EvalMetrics {
        auc: metrics::auc(&probs, examples.labels())?,
        logloss: metrics::logloss(&probs, examples.labels())?,
    })
}

struct AdamState {
    dense_m: Vec<f64>,
    dense_v: Vec<f64>,
    table_m: Vec<Vec<f64>>,
    table_v: Vec<Vec<f64>>,
    t: i32,
}

struct Snapshot {
    dense: Vec<f64>,
    tables: Vec<Vec<f64>>,
}

impl Snapshot {
    fn take(model: &Model, tables: &FeatureTables) -> Self {
        Self {
            dense: model.params().to_vec(),
            tables: tables
                .tables()
                .iter()
                .map(|s| s.store().values().to_vec())
                .collect(),
        }
    }

    fn restore(self, model: &mut Model, tables: &mut FeatureTables) {
        model.params_mut().copy_from_slice(&self.dense);
        for (s, values) in tables.tables_mut().iter_mut().zip(self.tables) {
            s.store_mut().values_mut().copy_from_slice(&values);
        }
    }
}

/// Mini-batch training of embeddings and model jointly on mean BCE.
///
/// Evaluates after every epoch and leaves the parameters of the epoch with
/// the highest eval AUC in place. Adam is lazy on tables: only entries read
/// by the batch get moment updates.
pub fn train(
    model: &mut Model,
    tables: &mut FeatureTables,
    train: &Examples,
    eval: &Examples,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() || eval.is_empty() {
        return Err(TrainError::Config("empty training or eval split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x7EA1));
    let mut grads = Gradients::new(model, tables);
    let mut tape = Tape::default();
    let mut adam = AdamState {
        dense_m: vec![0.0; model.param_count()],
        dense_v: vec![0.0; model.param_count()],
        table_m: grads.tables.iter().map(|g| vec![0.0; g.len()]).collect(),
        table_v: grads.tables.iter().map(|g| vec![0.0; g.len()]).collect(),
        t: 0,
    };
    let steps_per_epoch = config
        .steps_per_epoch
        .unwrap_or_else(|| train.len().div_ceil(config.batch));
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut batch = Vec::with_capacity(config.batch);

    let mut history = Vec::new();
    let mut best: Option<(usize, EvalMetrics, Snapshot)> = None;
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        for _ in 0..steps_per_epoch {
            batch.clear();
            while batch.len() < config.batch.min(train.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }
            grads.clear();
            let loss = batch_loss_and_grad(model, tables, train, &batch, &mut tape, &mut grads)?;
            step += 1;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    what: format!("batch loss {loss}"),
                });
            }
            loss_sum += loss;
            apply_update(model, tables, &grads, &mut adam, config)
                .map_err(|what| TrainError::Diverged { epoch, step, what })?;
            if config.eval_every.is_some_and(|k| step % k == 0) {
                let m = evaluate(model, tables, eval)?;
                push_eval(&mut history, step, epoch, m);
            }
        }
        history.push(HistoryRow {
            step,
            epoch,
            split: "train",
            metric: "logloss",
            value: loss_sum / steps_per_epoch as f64,
        });
        let m = evaluate(model, tables, eval)?;
        push_eval(&mut history, step, epoch, m);
        if best.as_ref().is_none_or(|b| m.auc > b.1.auc) {
            best = Some((epoch, m, Snapshot::take(model, tables)));
        }
    }
    let (best_epoch, best_metrics, snapshot) = best.expect("at least one epoch");
    snapshot.restore(model, tables);
    Ok(TrainOutcome {
        history,
        best_epoch,
        best: best_metrics,
        steps: step,
    })
}

fn push_eval(history: &mut Vec<HistoryRow>, step: usize, epoch: usize, m: EvalMetrics) {
    for (metric, value) in [("auc", m.auc), ("logloss", m.logloss)] {
        history.push(HistoryRow {
            step,
            epoch,
            split: "eval",
            metric,
            value,
        });
    }
}

fn apply_update(
    model: &mut Model,
    tables: &mut FeatureTables,
    grads: &Gradients,
    adam: &mut AdamState,
    config: &TrainConfig,
) -> Result<(), String> {
    let lr = config.lr;
    match config.optimizer {
        Optimizer::Sgd => {
            sgd(model.params_mut(), &grads.dense, 0..grads.dense.len(), lr)?;
            for (s, scheme) in tables.tables_mut().iter_mut().enumerate() {
                let touched = grads.touched(s).iter().copied();
                sgd(
                    scheme.store_mut().values_mut(),
                    &grads.tables[s],
                    touched,
                    lr,
                )?;
            }
        }
        Optimizer::Adam => {
            adam.t += 1;
            let (b1, b2) = (config.beta1, config.beta2);
            let lr_t = lr * (1.0 - b2.powi(adam.t)).sqrt() / (1.0 - b1.powi(adam.t));
            let moments = AdamStep {
                b1,
                b2,
                eps: config.eps,
                lr_t,
            };
            moments.apply(
                model.params_mut(),
                &grads.dense,
                &mut adam.dense_m,
                &mut adam.dense_v,
                0..grads.dense.len(),
            )?;
            for (s, scheme) in tables.tables_mut().iter_mut().enumerate() {
                moments.apply(
                    scheme.store_mut().values_mut(),
                    &grads.tables[s],
                    &mut adam.table_m[s],
                    &mut adam.table_v[s],
                    grads.touched(s).iter().copied(),
                )?;
            }
        }
    }
    Ok(())
}

fn sgd(
    params: &mut [f64],
    grad: &[f64],
    which: impl Iterator<Item = usize>,
    lr: f64,
) -> Result<(), String> {
    for i in which {
        let delta = lr * grad[i];
        if delta != 0.0 {
            params[i] -= delta;
            if !params[i].is_finite() {
                return Err(format!("parameter {i} became {}", params[i]));
            }
        }
    }
    Ok(())
}

struct AdamStep {
    b1: f64,
    b2: f64,
    eps: f64,
    lr_t: f64,
}

impl AdamStep {
    fn apply(
        &self,
        params: &mut [f64],
        grad: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        which: impl Iterator<Item = usize>,
    ) -> Result<(), String> {
        for i in which {
            let g = grad[i];
            m[i] = self.b1 * m[i] + (1.0 - self.b1) * g;
            v[i] = self.b2 * v[i] + (1.0 - self.b2) * g * g;
            let delta = self.lr_t * m[i] / (v[i].sqrt() + self.eps);
            if delta != 0.0 {
                params[i] -= delta;
                if !params[i].is_finite() {
                    return Err(format!("parameter {i} became {}", params[i]));
                }
            }
        }
        Ok(())
    }
}

/// Writes `step,epoch,split,metric,value` rows.
pub fn write_history_csv<W: Write>(mut out: W, history: &[HistoryRow]) -> io::Result<()> {
    writeln!(out, "step,epoch,split,metric,value")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.epoch, r.split, r.metric, r.value
        )?;
    }
    Ok(())
}
