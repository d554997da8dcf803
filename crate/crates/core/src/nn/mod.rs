//! A small click model over concatenated feature embeddings.
//!
//! Two heads are available. The logistic head is `sigma(<z, theta>)` with
//! `theta` partitioned per feature and no bias. The DCN head stacks cross
//! layers `x0 * (W x + b) + x`, rectified dense layers and a linear output.
//! Backpropagation is written out by hand; [`full_gradient_check`] compares
//! it against central differences.

mod check;
mod train;

pub use check::{full_gradient_check, GradCheck};
pub use train::{
    evaluate, train, write_history_csv, EvalMetrics, HistoryRow, Optimizer, TrainConfig,
    TrainError, TrainOutcome,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hashing::{derive_seed, TokenId};
use crate::tables::{EmbeddingScheme, LookupTrace, TableError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Logistic,
    DcnMlp,
}

/// Architecture of the model sitting on top of the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub head: Head,
    pub cross_layers: usize,
    /// Hidden widths of the rectified dense stack.
    pub dense: Vec<usize>,
    /// Embedding width of each feature, in input order.
    pub partitions: Vec<usize>,
}

impl ModelSpec {
    pub fn logistic(partitions: Vec<usize>) -> Self {
        Self {
            head: Head::Logistic,
            cross_layers: 0,
            dense: Vec::new(),
            partitions,
        }
    }

    pub fn dcn_mlp(partitions: Vec<usize>, cross_layers: usize, dense: Vec<usize>) -> Self {
        Self {
            head: Head::DcnMlp,
            cross_layers,
            dense,
            partitions,
        }
    }

    pub fn input_width(&self) -> usize {
        self.partitions.iter().sum()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.partitions.is_empty() || self.partitions.contains(&0) {
            return Err(NnError::Spec(
                "every feature needs a positive embedding width".into(),
            ));
        }
        match self.head {
            Head::Logistic if self.cross_layers != 0 || !self.dense.is_empty() => {
                Err(NnError::Spec("logistic head takes no hidden layers".into()))
            }
            Head::DcnMlp if self.cross_layers > 2 => Err(NnError::Spec(format!(
                "{} cross layers, at most 2",
                self.cross_layers
            ))),
            Head::DcnMlp if self.dense.contains(&0) => {
                Err(NnError::Spec("zero-width dense layer".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DenseLayer {
    w: usize,
    b: usize,
    inputs: usize,
    outputs: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct ParamLayout {
    /// `(W, b)` offsets per cross layer.
    cross: Vec<(usize, usize)>,
    dense: Vec<DenseLayer>,
    /// Output weights (the logistic `theta`) and optional bias.
    out_w: usize,
    out_b: Option<usize>,
    len: usize,
}

impl ParamLayout {
    fn new(spec: &ModelSpec) -> Self {
        let width = spec.input_width();
        let mut next = 0;
        let mut take = |n: usize| {
            let at = next;
            next += n;
            at
        };
        let cross = (0..spec.cross_layers)
            .map(|_| (take(width * width), take(width)))
            .collect();
        let mut inputs = width;
        let mut dense = Vec::new();
        for &outputs in &spec.dense {
            dense.push(DenseLayer {
                w: take(outputs * inputs),
                b: take(outputs),
                inputs,
                outputs,
            });
            inputs = outputs;
        }
        let out_w = take(inputs);
        let out_b = (spec.head == Head::DcnMlp).then(|| take(1));
        Self {
            cross,
            dense,
            out_w,
            out_b,
            len: next,
        }
    }

    fn last_width(&self, input_width: usize) -> usize {
        self.dense.last().map_or(input_width, |l| l.outputs)
    }
}

/// Dense (non-embedding) parameters of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    layout: ParamLayout,
    params: Vec<f64>,
}

impl Model {
    /// Fan-in scaled uniform weights, zero biases.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, NnError> {
        let mut model = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xDE75E));
        let width = model.spec.input_width();
        let mut blocks: Vec<(usize, usize, usize)> = model
            .layout
            .cross
            .iter()
            .map(|&(w, _)| (w, width * width, width))
            .collect();
        blocks.extend(
            model
                .layout
                .dense
                .iter()
                .map(|l| (l.w, l.inputs * l.outputs, l.inputs)),
        );
        blocks.push((
            model.layout.out_w,
            model.layout.last_width(width),
            model.layout.last_width(width),
        ));
        for (start, len, fan_in) in blocks {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut model.params[start..start + len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(spec: ModelSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = ParamLayout::new(&spec);
        let params = vec![0.0; layout.len];
        Ok(Self {
            spec,
            layout,
            params,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Per-feature slices of the logistic weights. `None` for the DCN head.
    pub fn theta_partitions(&self) -> Option<Vec<&[f64]>> {
        if self.spec.head != Head::Logistic {
            return None;
        }
        let theta = &self.params[self.layout.out_w..self.layout.out_w + self.spec.input_width()];
        let mut parts = Vec::with_capacity(self.spec.partitions.len());
        let mut at = 0;
        for &d in &self.spec.partitions {
            parts.push(&theta[at..at + d]);
            at += d;
        }
        Some(parts)
    }

    /// Sets every logistic partition to `direction`, the fully aligned start.
    pub fn align_theta(&mut self, direction: &[f64]) -> Result<(), NnError> {
        if self.spec.head != Head::Logistic {
            return Err(NnError::Spec(
                "theta alignment needs the logistic head".into(),
            ));
        }
        if self.spec.partitions.iter().any(|&d| d != direction.len()) {
            return Err(NnError::Dimension(format!(
                "direction of length {} for partitions {:?}",
                direction.len(),
                self.spec.partitions
            )));
        }
        for (t, _) in self.spec.partitions.iter().enumerate() {
            let at = self.layout.out_w + t * direction.len();
            self.params[at..at + direction.len()].copy_from_slice(direction);
        }
        Ok(())
    }
}

/// Embedding tables feeding the model: one or more schemes plus a route from
/// each model feature to `(scheme, feature within scheme)`.
#[derive(Debug, Clone)]
pub struct FeatureTables {
    tables: Vec<EmbeddingScheme>,
    route: Vec<(usize, usize)>,
}

impl From<EmbeddingScheme> for FeatureTables {
    fn from(scheme: EmbeddingScheme) -> Self {
        let route = (0..scheme.num_features()).map(|t| (0, t)).collect();
        Self {
            tables: vec![scheme],
            route,
        }
    }
}

impl FeatureTables {
    pub fn new(tables: Vec<EmbeddingScheme>, route: Vec<(usize, usize)>) -> Result<Self, NnError> {
        let mut used: Vec<Vec<bool>> = tables
            .iter()
            .map(|s| vec![false; s.num_features()])
            .collect();
        for &(s, t) in &route {
            let slot = used
                .get_mut(s)
                .and_then(|u| u.get_mut(t))
                .ok_or_else(|| NnError::Spec(format!("route ({s}, {t}) out of range")))?;
            if *slot {
                return Err(NnError::Spec(format!("route ({s}, {t}) used twice")));
            }
            *slot = true;
        }
        Ok(Self { tables, route })
    }

    pub fn num_features(&self) -> usize {
        self.route.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.route
            .iter()
            .map(|&(s, t)| self.tables[s].dim(t))
            .collect()
    }

    pub fn tables(&self) -> &[EmbeddingScheme] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [EmbeddingScheme] {
        &mut self.tables
    }

    pub fn route(&self) -> &[(usize, usize)] {
        &self.route
    }

    pub fn param_count(&self) -> usize {
        self.tables.iter().map(|s| s.param_count()).sum()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub prob: f64,
    pub logit: f64,
    traces: Vec<LookupTrace>,
    /// Cross inputs `x_0 .. x_L`; `xs[0]` is the concatenated embedding.
    xs: Vec<Vec<f64>>,
    /// `W x_l + b` per cross layer.
    us: Vec<Vec<f64>>,
    /// Dense activations; `hs[0]` is the last cross output.
    hs: Vec<Vec<f64>>,
}

impl Tape {
    /// Concatenated embedding of the example.
    pub fn embedding(&self) -> &[f64] {
        &self.xs[0]
    }

    pub fn traces(&self) -> &[LookupTrace] {
        &self.traces
    }
}

/// Gradient buffers for the dense parameters and every table store. Table
/// entries are tracked sparsely so clearing costs only what was touched.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub dense: Vec<f64>,
    pub tables: Vec<Vec<f64>>,
    touched: Vec<Vec<usize>>,
    marks: Vec<Vec<bool>>,
    dz: Vec<f64>,
    scratch: Vec<f64>,
}

impl Gradients {
    pub fn new(model: &Model, tables: &FeatureTables) -> Self {
        let sizes: Vec<usize> = tables.tables.iter().map(|s| s.param_count()).collect();
        Self {
            dense: vec![0.0; model.param_count()],
            tables: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            touched: vec![Vec::new(); sizes.len()],
            marks: sizes.iter().map(|&n| vec![false; n]).collect(),
            dz: Vec::new(),
            scratch: Vec::new(),
        }
    }

    /// Store offsets of table `s` with possibly nonzero gradient, in first
    /// touch order.
    pub fn touched(&self, s: usize) -> &[usize] {
        &self.touched[s]
    }

    pub fn clear(&mut self) {
        self.dense.iter_mut().for_each(|g| *g = 0.0);
        for s in 0..self.tables.len() {
            for &o in &self.touched[s] {
                self.tables[s][o] = 0.0;
                self.marks[s][o] = false;
            }
            self.touched[s].clear();
        }
    }

    fn mark(&mut self, s: usize, trace: &LookupTrace) {
        for o in trace.touched() {
            if !self.marks[s][o] {
                self.marks[s][o] = true;
                self.touched[s].push(o);
            }
        }
    }
}

pub(crate) const LOGIT_CLAMP: f64 = 30.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy of a logit, clamped to `[-30, 30]`.
pub fn bce_with_logit(logit: f64, y: u8) -> f64 {
    let z = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    softplus(z) - if y != 0 { z } else { 0.0 }
}

/// Binary cross-entropy of a probability, evaluated through its logit.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    bce_with_logit(p.ln() - (-p).ln_1p(), y)
}

/// `x0 * (W xl + b) + xl` for a row-major square `W`.
pub fn cross_layer(x0: &[f64], xl: &[f64], w: &[f64], b: &[f64]) -> Result<Vec<f64>, NnError> {
    let n = check_cross_dims(x0, xl, w, b)?;
    let mut out = vec![0.0; n];
    let mut u = vec![0.0; n];
    cross_forward(x0, xl, w, b, &mut u, &mut out);
    Ok(out)
}

/// Gradients of a cross layer given the upstream gradient `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossGrads {
    pub dx0: Vec<f64>,
    pub dxl: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn cross_layer_backward(
    x0: &[f64],
    xl: &[f64],
    w: &[f64],
    b: &[f64],
    g: &[f64],
) -> Result<CrossGrads, NnError> {
    let n = check_cross_dims(x0, xl, w, b)?;
    if g.len() != n {
        return Err(NnError::Dimension(format!(
            "upstream of {} for width {n}",
            g.len()
        )));
    }
    let mut u = vec![0.0; n];
    let mut out = vec![0.0; n];
    cross_forward(x0, xl, w, b, &mut u, &mut out);
    let mut grads = CrossGrads {
        dx0: vec![0.0; n],
        dxl: vec![0.0; n],
        dw: vec![0.0; n * n],
        db: vec![0.0; n],
    };
    cross_backward(
        x0,
        xl,
        w,
        &u,
        g,
        &mut grads.dx0,
        &mut grads.dxl,
        &mut grads.dw,
        &mut grads.db,
    );
    Ok(grads)
}

fn check_cross_dims(x0: &[f64], xl: &[f64], w: &[f64], b: &[f64]) -> Result<usize, NnError> {
    let n = x0.len();
    if xl.len() != n || b.len() != n || w.len() != n * n {
        return Err(NnError::Dimension(format!(
            "cross layer with x0 {}, xl {}, W {}, b {}",
            n,
            xl.len(),
            w.len(),
            b.len()
        )));
    }
    Ok(n)
}

fn cross_forward(x0: &[f64], xl: &[f64], w: &[f64], b: &[f64], u: &mut [f64], out: &mut [f64]) {
    let n = x0.len();
    for i in 0..n {
        let row = &w[i * n..(i + 1) * n];
        u[i] = b[i] + dot(row, xl);
        out[i] = x0[i] * u[i] + xl[i];
    }
}

/// Adds into `dx0`, `dw`, `db`; overwrites `dxl`.
#[allow(clippy::too_many_arguments)]
fn cross_backward(
    x0: &[f64],
    xl: &[f64],
    w: &[f64],
    u: &[f64],
    g: &[f64],
    dx0: &mut [f64],
    dxl: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
) {
    let n = x0.len();
    dxl.copy_from_slice(g);
    for i in 0..n {
        let du = g[i] * x0[i];
        dx0[i] += g[i] * u[i];
        db[i] += du;
        if du != 0.0 {
            let row = &w[i * n..(i + 1) * n];
            let drow = &mut dw[i * n..(i + 1) * n];
            for j in 0..n {
                drow[j] += du * xl[j];
                dxl[j] += du * row[j];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_compat(model: &Model, tables: &FeatureTables) -> Result<(), NnError> {
    if tables.dims() != model.spec.partitions {
        return Err(NnError::Dimension(format!(
            "tables give dims {:?}, model expects {:?}",
            tables.dims(),
            model.spec.partitions
        )));
    }
    Ok(())
}

/// Forward pass for one example.
pub fn forward(
    model: &Model,
    tables: &FeatureTables,
    example: &[TokenId],
) -> Result<(f64, Tape), NnError> {
    let mut tape = Tape::default();
    forward_into(model, tables, example, &mut tape)?;
    Ok((tape.prob, tape))
}

/// Forward pass reusing the buffers in `tape`.
pub fn forward_into(
    model: &Model,
    tables: &FeatureTables,
    example: &[TokenId],
    tape: &mut Tape,
) -> Result<(), NnError> {
    check_compat(model, tables)?;
    if example.len() != tables.num_features() {
        return Err(NnError::Dimension(format!(
            "example with {} values for {} features",
            example.len(),
            tables.num_features()
        )));
    }
    let spec = &model.spec;
    let width = spec.input_width();
    let layers = spec.cross_layers;
    tape.traces.resize_with(example.len(), LookupTrace::new);
    tape.xs.resize_with(layers + 1, Vec::new);
    tape.us.resize_with(layers, Vec::new);
    tape.hs.resize_with(spec.dense.len() + 1, Vec::new);

    let x0 = &mut tape.xs[0];
    x0.resize(width, 0.0);
    let mut at = 0;
    for (t, (&(s, local), &value)) in tables.route.iter().zip(example).enumerate() {
        let d = spec.partitions[t];
        tables.tables[s].lookup_into(local, value, &mut x0[at..at + d], &mut tape.traces[t])?;
        at += d;
    }

    let p = &model.params;
    for (l, &(w, b)) in model.layout.cross.iter().enumerate() {
        let (done, rest) = tape.xs.split_at_mut(l + 1);
        let next = &mut rest[0];
        next.resize(width, 0.0);
        let u = &mut tape.us[l];
        u.resize(width, 0.0);
        cross_forward(
            &done[0],
            &done[l],
            &p[w..w + width * width],
            &p[b..b + width],
            u,
            next,
        );
    }

    tape.hs[0].clear();
    tape.hs[0].extend_from_slice(&tape.xs[layers]);
    for (i, layer) in model.layout.dense.iter().enumerate() {
        let (done, rest) = tape.hs.split_at_mut(i + 1);
        let input = &done[i];
        let out = &mut rest[0];
        out.resize(layer.outputs, 0.0);
        for (o, h) in out.iter_mut().enumerate() {
            let row = &p[layer.w + o * layer.inputs..layer.w + (o + 1) * layer.inputs];
            *h = (p[layer.b + o] + dot(row, input)).max(0.0);
        }
    }
    let last = &tape.hs[spec.dense.len()];
    let mut logit = dot(
        &p[model.layout.out_w..model.layout.out_w + last.len()],
        last,
    );
    if let Some(b) = model.layout.out_b {
        logit += p[b];
    }
    tape.logit = logit;
    tape.prob = sigmoid(logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
    Ok(())
}

/// Accumulates the gradient of `dlogit * logit` into `grads`.
pub fn backward(
    model: &Model,
    tables: &FeatureTables,
    tape: &Tape,
    dlogit: f64,
    grads: &mut Gradients,
) -> Result<(), NnError> {
    let spec = &model.spec;
    let layout = &model.layout;
    let width = spec.input_width();
    let p = &model.params;
    let gd = &mut grads.dense;

    // Output layer.
    let depth = spec.dense.len();
    let last = &tape.hs[depth];
    let mut g: Vec<f64> = p[layout.out_w..layout.out_w + last.len()]
        .iter()
        .map(|w| w * dlogit)
        .collect();
    for (gw, h) in gd[layout.out_w..layout.out_w + last.len()]
        .iter_mut()
        .zip(last)
    {
        *gw += dlogit * h;
    }
    if let Some(b) = layout.out_b {
        gd[b] += dlogit;
    }

    // Dense stack, top down. `g` is the gradient w.r.t. hs[i + 1].
    for i in (0..depth).rev() {
        let layer = layout.dense[i];
        let input = &tape.hs[i];
        let out = &tape.hs[i + 1];
        let mut gin = vec![0.0; layer.inputs];
        for o in 0..layer.outputs {
            if out[o] <= 0.0 {
                continue;
            }
            let go = g[o];
            gd[layer.b + o] += go;
            let row = layer.w + o * layer.inputs;
            for j in 0..layer.inputs {
                gd[row + j] += go * input[j];
                gin[j] += go * p[row + j];
            }
        }
        g = gin;
    }

    // Cross stack. `dz` collects the gradient w.r.t. x0 from every layer.
    let dz = &mut grads.dz;
    dz.clear();
    dz.resize(width, 0.0);
    let scratch = &mut grads.scratch;
    scratch.resize(width, 0.0);
    for l in (0..spec.cross_layers).rev() {
        let (w, b) = layout.cross[l];
        let (before, after) = gd.split_at_mut(b);
        let dw = &mut before[w..w + width * width];
        let db = &mut after[..width];
        cross_backward(
            &tape.xs[0],
            &tape.xs[l],
            &p[w..w + width * width],
            &tape.us[l],
            &g,
            dz,
            scratch,
            dw,
            db,
        );
        g.copy_from_slice(scratch);
    }
    for (a, b) in dz.iter_mut().zip(&g) {
        *a += b;
    }

    // Embeddings.
    let mut at = 0;
    for (t, &(s, _)) in tables.route.iter().enumerate() {
        let d = spec.partitions[t];
        let trace = &tape.traces[t];
        tables.tables[s].grad_accumulate(trace, &grads.dz[at..at + d], &mut grads.tables[s])?;
        grads.mark(s, trace);
        at += d;
    }
    Ok(())
}

/// Mean BCE over the examples with gradients accumulated into `grads`.
pub fn batch_loss_and_grad(
    model: &Model,
    tables: &FeatureTables,
    examples: &crate::data::Examples,
    indices: &[usize],
    tape: &mut Tape,
    grads: &mut Gradients,
) -> Result<f64, NnError> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let scale = 1.0 / indices.len() as f64;
    let mut total = 0.0;
    for &i in indices {
        let y = examples.label(i);
        forward_into(model, tables, examples.tokens(i), tape)?;
        total += bce_with_logit(tape.logit, y);
        backward(model, tables, tape, (tape.prob - y as f64) * scale, grads)?;
    }
    Ok(total * scale)
}

/// Mean BCE over the examples, no gradients.
pub fn batch_loss(
    model: &Model,
    tables: &FeatureTables,
    examples: &crate::data::Examples,
    indices: &[usize],
    tape: &mut Tape,
) -> Result<f64, NnError> {
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for &i in indices {
        forward_into(model, tables, examples.tokens(i), tape)?;
        total += bce_with_logit(tape.logit, examples.label(i));
    }
    Ok(total / indices.len() as f64)
}

#[cfg(test)]
mod tests;
