//! Two-feature logistic model in count form, its exact embedding gradient
//! split into collisionless, intra-feature and inter-feature parts, and the
//! weight-angle and embedding-norm probes.
//!
//! The objective uses the usual cross-entropy convention: positives
//! (`y = 1`) pay `softplus(-z)`, negatives pay `softplus(z)`, with
//! `z = <theta_1, e_{h1(u)}> + <theta_2, e_{h2(v)}>`.

use std::collections::BTreeSet;
use std::io::{self, Write};

use thiserror::Error;

use crate::data::Examples;
use crate::hashing::{derive_seed, HashSpec};
use crate::nn::{sigmoid, softplus};
use crate::tables::{EmbeddingScheme, LookupTrace, TableError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("count tables need exactly two features, got {0}")]
    FeatureCount(usize),
    #[error("value {value} of feature {feature} outside vocabulary of {size}")]
    OutOfVocabulary {
        feature: usize,
        value: u64,
        size: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("partition {0} has (near) zero norm")]
    ZeroVector(usize),
    #[error("{0}")]
    Empty(&'static str),
    #[error(transparent)]
    Table(#[from] TableError),
}

/// Label counts `C[u][v][y]` for every value pair of two features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountTable {
    n1: usize,
    n2: usize,
    counts: Vec<[u64; 2]>,
}

impl CountTable {
    pub fn zeros(n1: usize, n2: usize) -> Self {
        Self {
            n1,
            n2,
            counts: vec![[0, 0]; n1 * n2],
        }
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    pub fn get(&self, u: usize, v: usize, y: u8) -> u64 {
        self.counts[u * self.n2 + v][usize::from(y != 0)]
    }

    pub fn add(&mut self, u: usize, v: usize, y: u8, n: u64) {
        self.counts[u * self.n2 + v][usize::from(y != 0)] += n;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c[0] + c[1]).sum()
    }

    /// `(u, v, C0, C1)` for pairs with at least one example.
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, usize, u64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, c)| c[0] + c[1] > 0)
            .map(|(i, c)| (i / self.n2, i % self.n2, c[0], c[1]))
    }
}

pub fn build_count_table(
    examples: &Examples,
    n1: usize,
    n2: usize,
) -> Result<CountTable, AnalysisError> {
    if examples.num_features() != 2 {
        return Err(AnalysisError::FeatureCount(examples.num_features()));
    }
    let mut table = CountTable::zeros(n1, n2);
    for i in 0..examples.len() {
        let row = examples.tokens(i);
        for (feature, (&value, size)) in row.iter().zip([n1, n2]).enumerate() {
            if value as usize >= size {
                return Err(AnalysisError::OutOfVocabulary {
                    feature,
                    value,
                    size,
                });
            }
        }
        table.add(row[0] as usize, row[1] as usize, examples.label(i), 1);
    }
    Ok(table)
}

/// Row of the shared embedding matrix that each value of each feature reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    rows: usize,
    h1: Vec<usize>,
    h2: Vec<usize>,
}

impl Assignment {
    pub fn from_maps(rows: usize, h1: Vec<usize>, h2: Vec<usize>) -> Result<Self, AnalysisError> {
        if h1.iter().chain(&h2).any(|&r| r >= rows) {
            return Err(AnalysisError::Dimension(format!(
                "assignment row outside 0..{rows}"
            )));
        }
        Ok(Self { rows, h1, h2 })
    }

    /// Every value gets its own row.
    pub fn injective(n1: usize, n2: usize) -> Self {
        Self {
            rows: n1 + n2,
            h1: (0..n1).collect(),
            h2: (n1..n1 + n2).collect(),
        }
    }

    /// Feature 1 hashed into rows `0..m1`, feature 2 into `m1..m1 + m2`.
    pub fn per_feature(
        n1: usize,
        n2: usize,
        m1: usize,
        m2: usize,
        seed: u64,
    ) -> Result<Self, AnalysisError> {
        let h1 = hashed(n1, m1, derive_seed(seed, 0))?;
        let h2 = hashed(n2, m2, derive_seed(seed, 1))?
            .into_iter()
            .map(|r| r + m1)
            .collect();
        Ok(Self {
            rows: m1 + m2,
            h1,
            h2,
        })
    }

    /// Both features hashed into the same `m` rows with their own seeds.
    pub fn unified(n1: usize, n2: usize, m: usize, seed: u64) -> Result<Self, AnalysisError> {
        Ok(Self {
            rows: m,
            h1: hashed(n1, m, derive_seed(seed, 0))?,
            h2: hashed(n2, m, derive_seed(seed, 1))?,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn row(&self, feature: usize, value: usize) -> usize {
        if feature == 0 {
            self.h1[value]
        } else {
            self.h2[value]
        }
    }

    pub fn sizes(&self) -> (usize, usize) {
        (self.h1.len(), self.h2.len())
    }

    /// Collision indicator: 1 iff the two (feature, value) slots share a row.
    pub fn indicator(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        self.row(a.0, a.1) == self.row(b.0, b.1)
    }
}

fn hashed(n: usize, m: usize, seed: u64) -> Result<Vec<usize>, AnalysisError> {
    let h = HashSpec::bucket(seed, m as u64).map_err(|e| AnalysisError::Table(e.into()))?;
    Ok((0..n as u64).map(|v| h.bucket_of(v) as usize).collect())
}

/// Model parameters: embedding matrix (row-major, `dim` wide) and the two
/// weight partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub dim: usize,
    pub embeddings: Vec<f64>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

impl PairModel {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            embeddings: vec![0.0; rows * dim],
            theta1: vec![0.0; dim],
            theta2: vec![0.0; dim],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.embeddings[r * self.dim..(r + 1) * self.dim]
    }

    pub fn logit(&self, a: &Assignment, u: usize, v: usize) -> f64 {
        dot(&self.theta1, self.row(a.row(0, u))) + dot(&self.theta2, self.row(a.row(1, v)))
    }

    fn check(&self, c: &CountTable, a: &Assignment) -> Result<(), AnalysisError> {
        if self.theta1.len() != self.dim || self.theta2.len() != self.dim {
            return Err(AnalysisError::Dimension(
                "theta partitions must match dim".into(),
            ));
        }
        if self.embeddings.len() != a.rows() * self.dim {
            return Err(AnalysisError::Dimension(format!(
                "{} embedding reals for {} rows of {}",
                self.embeddings.len(),
                a.rows(),
                self.dim
            )));
        }
        if c.sizes() != a.sizes() {
            return Err(AnalysisError::Dimension(format!(
                "counts over {:?}, assignment over {:?}",
                c.sizes(),
                a.sizes()
            )));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Summed cross-entropy over the dataset the counts describe.
pub fn objective_from_counts(
    c: &CountTable,
    model: &PairModel,
    a: &Assignment,
) -> Result<f64, AnalysisError> {
    model.check(c, a)?;
    Ok(c.nonzero()
        .map(|(u, v, c0, c1)| {
            let z = model.logit(a, u, v);
            c1 as f64 * softplus(-z) + c0 as f64 * softplus(z)
        })
        .sum())
}

/// `dL/dz` summed over the examples of one value pair.
fn pair_grad(model: &PairModel, a: &Assignment, u: usize, v: usize, c0: u64, c1: u64) -> f64 {
    (c0 + c1) as f64 * sigmoid(model.logit(a, u, v)) - c1 as f64
}

/// Gradient of the objective with respect to the whole embedding matrix.
pub fn embedding_gradient(
    c: &CountTable,
    model: &PairModel,
    a: &Assignment,
) -> Result<Vec<f64>, AnalysisError> {
    model.check(c, a)?;
    let d = model.dim;
    let mut grad = vec![0.0; model.embeddings.len()];
    for (u, v, c0, c1) in c.nonzero() {
        let g = pair_grad(model, a, u, v, c0, c1);
        for (slot, theta) in [(a.row(0, u), &model.theta1), (a.row(1, v), &model.theta2)] {
            for (e, t) in grad[slot * d..(slot + 1) * d].iter_mut().zip(theta.iter()) {
                *e += g * t;
            }
        }
    }
    Ok(grad)
}

/// Gradient of the row holding value `u` of feature 1, by source.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientDecomposition {
    pub value: usize,
    pub row: usize,
    /// From `u`'s own examples; a multiple of `theta_1`.
    pub true_component: Vec<f64>,
    /// From other feature-1 values sharing the row; a multiple of `theta_1`.
    pub intra_component: Vec<f64>,
    /// From feature-2 values sharing the row; a multiple of `theta_2`.
    pub inter_component: Vec<f64>,
}

impl GradientDecomposition {
    pub fn total(&self) -> Vec<f64> {
        self.true_component
            .iter()
            .zip(&self.intra_component)
            .zip(&self.inter_component)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }
}

pub fn decompose_gradient(
    c: &CountTable,
    model: &PairModel,
    a: &Assignment,
    u: usize,
) -> Result<GradientDecomposition, AnalysisError> {
    model.check(c, a)?;
    let (n1, _) = c.sizes();
    if u >= n1 {
        return Err(AnalysisError::OutOfVocabulary {
            feature: 0,
            value: u as u64,
            size: n1,
        });
    }
    let row = a.row(0, u);
    let (mut own, mut intra, mut inter) = (0.0, 0.0, 0.0);
    for (w, v, c0, c1) in c.nonzero() {
        let touches_1 = a.row(0, w) == row;
        let touches_2 = a.row(1, v) == row;
        if !touches_1 && !touches_2 {
            continue;
        }
        let g = pair_grad(model, a, w, v, c0, c1);
        if touches_1 {
            if w == u {
                own += g;
            } else {
                intra += g;
            }
        }
        if touches_2 {
            inter += g;
        }
    }
    let scale = |s: f64, theta: &[f64]| theta.iter().map(|t| s * t).collect::<Vec<f64>>();
    Ok(GradientDecomposition {
        value: u,
        row,
        true_component: scale(own, &model.theta1),
        intra_component: scale(intra, &model.theta1),
        inter_component: scale(inter, &model.theta2),
    })
}

const MIN_NORM: f64 = 1e-12;

/// Mean angle in degrees over all unordered pairs of partitions.
pub fn mean_pairwise_angle(partitions: &[&[f64]]) -> Result<f64, AnalysisError> {
    if partitions.len() < 2 {
        return Err(AnalysisError::Empty("need at least two partitions"));
    }
    let d = partitions[0].len();
    if partitions.iter().any(|p| p.len() != d) {
        return Err(AnalysisError::Dimension(
            "partitions differ in length".into(),
        ));
    }
    let norms: Vec<f64> = partitions.iter().map(|p| dot(p, p).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| !(n >= MIN_NORM)) {
        return Err(AnalysisError::ZeroVector(i));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..partitions.len() {
        for j in i + 1..partitions.len() {
            let cos = (dot(partitions[i], partitions[j]) / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            total += cos.acos().to_degrees();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

pub fn mean_sq_embedding_norm<'a>(
    rows: impl IntoIterator<Item = &'a [f64]>,
) -> Result<f64, AnalysisError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for row in rows {
        total += dot(row, row);
        n += 1;
    }
    if n == 0 {
        return Err(AnalysisError::Empty("no used rows"));
    }
    Ok(total / n as f64)
}

/// Distinct `(region, row)` pairs read by lookups of the given examples.
pub fn touched_rows(
    scheme: &EmbeddingScheme,
    examples: &Examples,
) -> Result<Vec<(usize, usize)>, AnalysisError> {
    let mut seen = BTreeSet::new();
    let mut trace = LookupTrace::new();
    for i in 0..examples.len() {
        for (t, &value) in examples.tokens(i).iter().enumerate() {
            let mut out = vec![0.0; scheme.dim(t)];
            scheme.lookup_into(t, value, &mut out, &mut trace)?;
            seen.extend(trace.offsets.iter().filter_map(|&o| scheme.row_of(o)));
        }
    }
    Ok(seen.into_iter().collect())
}

/// Mean squared norm of the table rows read by `examples`.
pub fn used_row_norm(scheme: &EmbeddingScheme, examples: &Examples) -> Result<f64, AnalysisError> {
    let rows = touched_rows(scheme, examples)?;
    let store = scheme.store();
    mean_sq_embedding_norm(rows.iter().map(|&(region, row)| {
        let r = store.region(region);
        let values = store.region_values(region);
        &values[row * r.row_width..(row + 1) * r.row_width]
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub table_size: usize,
    pub seed: u64,
    pub mean_angle_deg: f64,
    pub mean_sq_norm: f64,
}

pub fn write_probe_csv<W: Write>(mut out: W, rows: &[ProbeRow]) -> io::Result<()> {
    writeln!(out, "table_size,seed,mean_angle_deg,mean_sq_norm")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.table_size, r.seed, r.mean_angle_deg, r.mean_sq_norm
        )?;
    }
    Ok(())
}
