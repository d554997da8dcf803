//! Embedding representations over a budgeted flat parameter store.
//!
//! Every scheme is a set of regions in one [`ParameterStore`] plus a lookup
//! plan per feature. A lookup returns the embedding together with a
//! [`LookupTrace`] recording exactly which reals were read and how they were
//! combined, which is all [`EmbeddingScheme::grad_accumulate`] needs to apply
//! the adjoint.
//!
//! Non-multiplexed schemes give each feature its own regions, sized in
//! proportion to its vocabulary. Multiplexed schemes build the regions once
//! from the whole budget and let every feature address them with its own
//! seeds, so values collide both within and across features.

mod census;
mod config;
mod store;

pub use census::CollisionCensus;
pub use config::{budget_for_multiplier, SchemeConfig, SchemeKind};
pub use store::{ParameterStore, Region};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hashing::{
    derive_feature_seeds, derive_seed, FeatureSeeds, HashError, HashSpec, TokenId,
};
use crate::kv::KvError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("invalid scheme config: {0}")]
    InvalidConfig(String),
    #[error("{what} = {value} does not divide embedding dim {dim}")]
    Divisibility {
        what: &'static str,
        value: usize,
        dim: usize,
    },
    #[error("budget of {budget} parameters is below the minimum {needed} for this layout")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("unknown scheme kind {0:?}")]
    UnknownKind(String),
    #[error("feature {feature} out of range (scheme has {features})")]
    FeatureOutOfRange { feature: usize, features: usize },
    #[error("token {token} out of range for feature {feature} with {rows} rows")]
    TokenOutOfRange {
        feature: usize,
        token: TokenId,
        rows: u64,
    },
    #[error("trace does not match scheme: {0}")]
    TraceMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Config(#[from] KvError),
}

/// How the reals listed in a trace combine into the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    /// `out[j] = v[offsets[j]]`.
    Gather,
    /// `out[j] = sum_i v[weight_offsets[i]] * v[offsets[i*d + j]]`.
    Weighted { k: usize },
    /// `out[j] = prod_i v[offsets[i*d + j]]`.
    Product { k: usize },
}

/// Addresses touched by one lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTrace {
    pub feature: usize,
    pub combine: Combine,
    /// Flat store offsets.
    pub offsets: Vec<usize>,
    /// Importance-weight offsets (hash embeddings only).
    pub weight_offsets: Vec<usize>,
    /// Weight values read during the lookup.
    pub weights: Vec<f64>,
}

impl LookupTrace {
    pub fn new() -> Self {
        Self {
            feature: 0,
            combine: Combine::Gather,
            offsets: Vec::new(),
            weight_offsets: Vec::new(),
            weights: Vec::new(),
        }
    }

    fn reset(&mut self, feature: usize, combine: Combine) {
        self.feature = feature;
        self.combine = combine;
        self.offsets.clear();
        self.weight_offsets.clear();
        self.weights.clear();
    }

    /// Every store offset read, weights included.
    pub fn touched(&self) -> impl Iterator<Item = usize> + '_ {
        self.offsets.iter().chain(&self.weight_offsets).copied()
    }
}

impl Default for LookupTrace {
    fn default() -> Self {
        Self::new()
    }
}

const IMPORTANCE_SLOT: u64 = 1 << 32;

#[derive(Debug, Clone)]
enum Plan {
    Direct {
        offset: usize,
        rows: u64,
        width: usize,
    },
    /// Concatenation of one row per slot from one region.
    Rows {
        offset: usize,
        width: usize,
        slots: Vec<HashSpec>,
    },
    Weighted {
        emb_offset: usize,
        width: usize,
        hashes: Vec<HashSpec>,
        imp_offset: usize,
        imp_hash: HashSpec,
    },
    Flat {
        offset: usize,
        hashes: Vec<HashSpec>,
    },
    Blocks {
        offset: usize,
        len: usize,
        z: usize,
        hashes: Vec<HashSpec>,
    },
    Product {
        offsets: Vec<usize>,
        width: usize,
        hashes: Vec<HashSpec>,
    },
    Concat {
        offsets: Vec<usize>,
        chunk: usize,
        hashes: Vec<HashSpec>,
    },
}

/// Region layout for one parameter share, before seeds are attached.
#[derive(Debug, Clone)]
enum Layout {
    Rows {
        offset: usize,
        rows: usize,
        width: usize,
    },
    Weighted {
        emb_offset: usize,
        emb_rows: usize,
        width: usize,
        imp_offset: usize,
        imp_rows: usize,
        k: usize,
    },
    Flat {
        offset: usize,
        len: usize,
    },
    Sub {
        tables: Vec<(usize, usize)>,
        width: usize,
    },
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Uniform(f64),
    Constant(f64),
}

/// A built embedding scheme.
#[derive(Debug, Clone)]
pub struct EmbeddingScheme {
    config: SchemeConfig,
    store: ParameterStore,
    seeds: FeatureSeeds,
    plans: Vec<Plan>,
    vocab_sizes: Vec<usize>,
    allocation: Vec<usize>,
}

/// Largest-remainder split of `total` proportional to `weights`, then raised
/// to per-entry `minimums` by taking from the entries with the most slack.
pub fn allocate_proportional(
    total: usize,
    weights: &[usize],
    minimums: &[usize],
) -> Result<Vec<usize>, TableError> {
    assert_eq!(weights.len(), minimums.len());
    let needed: usize = minimums.iter().sum();
    if needed > total {
        return Err(TableError::BudgetTooSmall {
            budget: total,
            needed,
        });
    }
    let wsum: u128 = weights.iter().map(|&w| w as u128).sum();
    if wsum == 0 {
        return Err(TableError::InvalidConfig(
            "vocabulary sizes sum to zero".into(),
        ));
    }
    let mut shares: Vec<usize> = Vec::with_capacity(weights.len());
    let mut rems: Vec<(u128, usize)> = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let q = total as u128 * w as u128;
        shares.push((q / wsum) as usize);
        rems.push((q % wsum, i));
    }
    let mut left = total - shares.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &rems {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    let mut deficit: usize = shares
        .iter()
        .zip(minimums)
        .map(|(&s, &m)| m.saturating_sub(s))
        .sum();
    for (s, &m) in shares.iter_mut().zip(minimums) {
        *s = (*s).max(m);
    }
    while deficit > 0 {
        let (j, slack) = shares
            .iter()
            .zip(minimums)
            .map(|(&s, &m)| s - m)
            .enumerate()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty");
        let take = slack.min(deficit);
        shares[j] -= take;
        deficit -= take;
    }
    Ok(shares)
}

fn min_params(kind: SchemeKind, cfg: &SchemeConfig, dim: usize) -> usize {
    match kind {
        SchemeKind::Collisionless => 0,
        SchemeKind::HashingTrick | SchemeKind::Unified => dim,
        SchemeKind::MultisizeUnified => cfg.base_dim(),
        SchemeKind::HashEmbedding => dim + cfg.k,
        SchemeKind::HashedNet => 1,
        SchemeKind::RobeZ => cfg.block,
        SchemeKind::CompQr => cfg.k * dim,
        SchemeKind::CompPq => dim,
    }
}

fn split_rows(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

fn build_layout(
    kind: SchemeKind,
    cfg: &SchemeConfig,
    params: usize,
    dim: usize,
    prefix: &str,
    store: &mut ParameterStore,
    inits: &mut Vec<(usize, Init)>,
) -> Result<Layout, TableError> {
    let needed = min_params(kind, cfg, dim);
    if params < needed {
        return Err(TableError::BudgetTooSmall {
            budget: params,
            needed,
        });
    }
    let uniform = |d: usize| Init::Uniform(1.0 / (d as f64).sqrt());
    let layout = match kind {
        SchemeKind::Collisionless => unreachable!("collisionless is sized by vocabulary"),
        SchemeKind::HashingTrick | SchemeKind::Unified | SchemeKind::MultisizeUnified => {
            let width = if kind == SchemeKind::MultisizeUnified {
                cfg.base_dim()
            } else {
                dim
            };
            let rows = params / width;
            let r = store.add_region(format!("{prefix}emb"), rows, width);
            inits.push((r, uniform(width)));
            Layout::Rows {
                offset: store.region(r).offset,
                rows,
                width,
            }
        }
        SchemeKind::HashEmbedding => {
            let k = cfg.k;
            let imp_budget = (cfg.importance_fraction * params as f64).floor() as usize;
            let imp_rows = (imp_budget / k).max(1);
            let emb_rows = (params - imp_rows * k) / dim;
            let e = store.add_region(format!("{prefix}emb"), emb_rows, dim);
            inits.push((e, uniform(dim)));
            let w = store.add_region(format!("{prefix}importance"), imp_rows, k);
            inits.push((w, Init::Constant(1.0 / k as f64)));
            Layout::Weighted {
                emb_offset: store.region(e).offset,
                emb_rows,
                width: dim,
                imp_offset: store.region(w).offset,
                imp_rows,
                k,
            }
        }
        SchemeKind::HashedNet | SchemeKind::RobeZ => {
            let r = store.add_region(format!("{prefix}flat"), params, 1);
            inits.push((r, uniform(dim)));
            Layout::Flat {
                offset: store.region(r).offset,
                len: params,
            }
        }
        SchemeKind::CompQr | SchemeKind::CompPq => {
            let width = if kind == SchemeKind::CompQr {
                dim
            } else {
                dim / cfg.k
            };
            let rows = split_rows(params / width, cfg.k);
            let tables = rows
                .iter()
                .enumerate()
                .map(|(i, &n)| {
                    let r = store.add_region(format!("{prefix}sub{i}"), n, width);
                    inits.push((r, uniform(dim)));
                    (store.region(r).offset, n)
                })
                .collect();
            Layout::Sub { tables, width }
        }
    };
    Ok(layout)
}

fn plan_for(
    kind: SchemeKind,
    cfg: &SchemeConfig,
    layout: &Layout,
    bucket_seed: u64,
    dim: usize,
) -> Result<Plan, TableError> {
    let hashes = |n: usize, modulus: usize| -> Result<Vec<HashSpec>, TableError> {
        (0..n)
            .map(|i| {
                HashSpec::bucket(derive_seed(bucket_seed, i as u64), modulus as u64)
                    .map_err(Into::into)
            })
            .collect()
    };
    let plan = match (kind, layout) {
        (
            _,
            Layout::Rows {
                offset,
                rows,
                width,
            },
        ) => Plan::Rows {
            offset: *offset,
            width: *width,
            slots: hashes(dim / width, *rows)?,
        },
        (
            _,
            Layout::Weighted {
                emb_offset,
                emb_rows,
                width,
                imp_offset,
                imp_rows,
                k,
            },
        ) => Plan::Weighted {
            emb_offset: *emb_offset,
            width: *width,
            hashes: hashes(*k, *emb_rows)?,
            imp_offset: *imp_offset,
            imp_hash: HashSpec::bucket(
                derive_seed(bucket_seed, IMPORTANCE_SLOT),
                *imp_rows as u64,
            )?,
        },
        (SchemeKind::HashedNet, Layout::Flat { offset, len }) => Plan::Flat {
            offset: *offset,
            hashes: hashes(dim, *len)?,
        },
        (_, Layout::Flat { offset, len }) => Plan::Blocks {
            offset: *offset,
            len: *len,
            z: cfg.block,
            hashes: hashes(dim / cfg.block, *len)?,
        },
        (SchemeKind::CompQr, Layout::Sub { tables, width }) => Plan::Product {
            offsets: tables.iter().map(|t| t.0).collect(),
            width: *width,
            hashes: tables
                .iter()
                .enumerate()
                .map(|(i, &(_, rows))| {
                    HashSpec::bucket(derive_seed(bucket_seed, i as u64), rows as u64)
                })
                .collect::<Result<_, _>>()?,
        },
        (_, Layout::Sub { tables, width }) => Plan::Concat {
            offsets: tables.iter().map(|t| t.0).collect(),
            chunk: *width,
            hashes: tables
                .iter()
                .enumerate()
                .map(|(i, &(_, rows))| {
                    HashSpec::bucket(derive_seed(bucket_seed, i as u64), rows as u64)
                })
                .collect::<Result<_, _>>()?,
        },
    };
    Ok(plan)
}

/// Lays out and initializes a scheme for features with the given
/// vocabulary sizes.
pub fn build_scheme(
    config: SchemeConfig,
    vocab_sizes: &[usize],
) -> Result<EmbeddingScheme, TableError> {
    let mut config = config;
    config.validate(vocab_sizes.len())?;
    if vocab_sizes.contains(&0) {
        return Err(TableError::InvalidConfig("empty vocabulary".into()));
    }
    let t_count = vocab_sizes.len();
    let seeds = derive_feature_seeds(config.seed, t_count, config.shared_seed)?;
    let kind = config.effective_kind();
    let mut store = ParameterStore::new();
    let mut inits = Vec::new();
    let mut plans = Vec::with_capacity(t_count);
    let mut allocation = Vec::new();

    if kind == SchemeKind::Collisionless {
        let mut offset_of = Vec::with_capacity(t_count);
        if config.is_multiplexed() {
            let width = config.dims[0];
            if config.dims.iter().any(|&d| d != width) {
                return Err(TableError::InvalidConfig(
                    "multiplexed collisionless needs equal dims".into(),
                ));
            }
            let rows: usize = vocab_sizes.iter().sum();
            let r = store.add_region("shared/emb", rows, width);
            inits.push((r, Init::Uniform(1.0 / (width as f64).sqrt())));
            let mut acc = store.region(r).offset;
            for &n in vocab_sizes {
                offset_of.push(acc);
                acc += n * width;
            }
        } else {
            for (t, (&n, &d)) in vocab_sizes.iter().zip(&config.dims).enumerate() {
                let r = store.add_region(format!("f{t}/emb"), n, d);
                inits.push((r, Init::Uniform(1.0 / (d as f64).sqrt())));
                offset_of.push(store.region(r).offset);
            }
        }
        for (t, &n) in vocab_sizes.iter().enumerate() {
            plans.push(Plan::Direct {
                offset: offset_of[t],
                rows: n as u64,
                width: config.dims[t],
            });
        }
        config.budget = store.len();
    } else if config.is_multiplexed() {
        let dim = config
            .dims
            .iter()
            .copied()
            .max()
            .expect("validated non-empty");
        let layout = build_layout(
            kind,
            &config,
            config.budget,
            dim,
            "shared/",
            &mut store,
            &mut inits,
        )?;
        for t in 0..t_count {
            plans.push(plan_for(
                kind,
                &config,
                &layout,
                seeds.get(t).bucket,
                config.dims[t],
            )?);
        }
    } else {
        let minimums: Vec<usize> = config
            .dims
            .iter()
            .map(|&d| min_params(kind, &config, d))
            .collect();
        allocation = allocate_proportional(config.budget, vocab_sizes, &minimums)?;
        for t in 0..t_count {
            let d = config.dims[t];
            let layout = build_layout(
                kind,
                &config,
                allocation[t],
                d,
                &format!("f{t}/"),
                &mut store,
                &mut inits,
            )?;
            plans.push(plan_for(kind, &config, &layout, seeds.get(t).bucket, d)?);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x1_417));
    for (r, init) in inits {
        let values = store.region_values_mut(r);
        match init {
            Init::Uniform(a) => values.iter_mut().for_each(|v| *v = rng.random_range(-a..a)),
            Init::Constant(c) => values.iter_mut().for_each(|v| *v = c),
        }
    }

    Ok(EmbeddingScheme {
        config,
        store,
        seeds,
        plans,
        vocab_sizes: vocab_sizes.to_vec(),
        allocation,
    })
}

impl EmbeddingScheme {
    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    pub fn seeds(&self) -> &FeatureSeeds {
        &self.seeds
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn num_features(&self) -> usize {
        self.plans.len()
    }

    pub fn dim(&self, feature: usize) -> usize {
        self.config.dims[feature]
    }

    /// Width of all feature embeddings concatenated.
    pub fn output_width(&self) -> usize {
        self.config.dims.iter().sum()
    }

    /// Per-feature parameter shares for non-multiplexed schemes; empty
    /// otherwise.
    pub fn allocation(&self) -> &[usize] {
        &self.allocation
    }

    /// Exact number of trainable reals.
    pub fn param_count(&self) -> usize {
        self.store.len()
    }

    pub fn lookup(
        &self,
        feature: usize,
        value: TokenId,
    ) -> Result<(Vec<f64>, LookupTrace), TableError> {
        let d = self.check_feature(feature)?;
        let mut out = vec![0.0; d];
        let mut trace = LookupTrace::new();
        self.lookup_into(feature, value, &mut out, &mut trace)?;
        Ok((out, trace))
    }

    /// Allocation-free lookup; `out` must have the feature's dimension.
    pub fn lookup_into(
        &self,
        feature: usize,
        value: TokenId,
        out: &mut [f64],
        trace: &mut LookupTrace,
    ) -> Result<(), TableError> {
        let d = self.check_feature(feature)?;
        if out.len() != d {
            return Err(TableError::TraceMismatch(format!(
                "output buffer of {} for dim {d}",
                out.len()
            )));
        }
        let v = self.store.values();
        match &self.plans[feature] {
            Plan::Direct {
                offset,
                rows,
                width,
            } => {
                if value >= *rows {
                    return Err(TableError::TokenOutOfRange {
                        feature,
                        token: value,
                        rows: *rows,
                    });
                }
                trace.reset(feature, Combine::Gather);
                let base = offset + value as usize * width;
                trace.offsets.extend(base..base + width);
            }
            Plan::Rows {
                offset,
                width,
                slots,
            } => {
                trace.reset(feature, Combine::Gather);
                for h in slots {
                    let base = offset + h.bucket_of(value) as usize * width;
                    trace.offsets.extend(base..base + width);
                }
            }
            Plan::Weighted {
                emb_offset,
                width,
                hashes,
                imp_offset,
                imp_hash,
            } => {
                let k = hashes.len();
                trace.reset(feature, Combine::Weighted { k });
                let wrow = imp_offset + imp_hash.bucket_of(value) as usize * k;
                for (i, h) in hashes.iter().enumerate() {
                    let base = emb_offset + h.bucket_of(value) as usize * width;
                    trace.offsets.extend(base..base + width);
                    trace.weight_offsets.push(wrow + i);
                    trace.weights.push(v[wrow + i]);
                }
            }
            Plan::Flat { offset, hashes } => {
                trace.reset(feature, Combine::Gather);
                trace
                    .offsets
                    .extend(hashes.iter().map(|h| offset + h.bucket_of(value) as usize));
            }
            Plan::Blocks {
                offset,
                len,
                z,
                hashes,
            } => {
                trace.reset(feature, Combine::Gather);
                for h in hashes {
                    let start = h.bucket_of(value) as usize;
                    trace
                        .offsets
                        .extend((0..*z).map(|j| offset + (start + j) % len));
                }
            }
            Plan::Product {
                offsets,
                width,
                hashes,
            } => {
                trace.reset(feature, Combine::Product { k: hashes.len() });
                for (off, h) in offsets.iter().zip(hashes) {
                    let base = off + h.bucket_of(value) as usize * width;
                    trace.offsets.extend(base..base + width);
                }
            }
            Plan::Concat {
                offsets,
                chunk,
                hashes,
            } => {
                trace.reset(feature, Combine::Gather);
                for (off, h) in offsets.iter().zip(hashes) {
                    let base = off + h.bucket_of(value) as usize * chunk;
                    trace.offsets.extend(base..base + chunk);
                }
            }
        }
        combine_into(trace, v, d, out);
        Ok(())
    }

    /// Adds the adjoint of the traced lookup applied to `upstream` into
    /// `grad`, a buffer aligned with the store.
    pub fn grad_accumulate(
        &self,
        trace: &LookupTrace,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<(), TableError> {
        let d = self.check_feature(trace.feature)?;
        if upstream.len() != d {
            return Err(TableError::TraceMismatch(format!(
                "upstream of length {} for dim {d}",
                upstream.len()
            )));
        }
        if grad.len() != self.store.len() {
            return Err(TableError::TraceMismatch(format!(
                "gradient buffer of {} for store of {}",
                grad.len(),
                self.store.len()
            )));
        }
        let expected = match trace.combine {
            Combine::Gather => d,
            Combine::Weighted { k } | Combine::Product { k } => k * d,
        };
        if trace.offsets.len() != expected || trace.offsets.iter().any(|&o| o >= grad.len()) {
            return Err(TableError::TraceMismatch(
                "offsets inconsistent with dim".into(),
            ));
        }
        let v = self.store.values();
        match trace.combine {
            Combine::Gather => {
                for (&o, &g) in trace.offsets.iter().zip(upstream) {
                    grad[o] += g;
                }
            }
            Combine::Weighted { k } => {
                if trace.weight_offsets.len() != k {
                    return Err(TableError::TraceMismatch(
                        "missing importance weights".into(),
                    ));
                }
                for i in 0..k {
                    let w = v[trace.weight_offsets[i]];
                    let rows = &trace.offsets[i * d..(i + 1) * d];
                    let mut dw = 0.0;
                    for (&o, &g) in rows.iter().zip(upstream) {
                        grad[o] += w * g;
                        dw += g * v[o];
                    }
                    grad[trace.weight_offsets[i]] += dw;
                }
            }
            Combine::Product { k } => {
                for (j, &g) in upstream.iter().enumerate() {
                    for i in 0..k {
                        let others: f64 = (0..k)
                            .filter(|&l| l != i)
                            .map(|l| v[trace.offsets[l * d + j]])
                            .product();
                        grad[trace.offsets[i * d + j]] += g * others;
                    }
                }
            }
        }
        Ok(())
    }

    /// Region and row holding a flat offset.
    pub fn row_of(&self, flat: usize) -> Option<(usize, usize)> {
        self.store
            .regions()
            .iter()
            .position(|r| r.contains(flat))
            .map(|i| {
                let r = self.store.region(i);
                (i, (flat - r.offset) / r.row_width)
            })
    }

    fn check_feature(&self, feature: usize) -> Result<usize, TableError> {
        if feature >= self.plans.len() {
            return Err(TableError::FeatureOutOfRange {
                feature,
                features: self.plans.len(),
            });
        }
        Ok(self.config.dims[feature])
    }
}

fn combine_into(trace: &LookupTrace, v: &[f64], d: usize, out: &mut [f64]) {
    match trace.combine {
        Combine::Gather => {
            for (o, &off) in out.iter_mut().zip(&trace.offsets) {
                *o = v[off];
            }
        }
        Combine::Weighted { k } => {
            out.iter_mut().for_each(|o| *o = 0.0);
            for i in 0..k {
                let w = trace.weights[i];
                for (o, &off) in out.iter_mut().zip(&trace.offsets[i * d..(i + 1) * d]) {
                    *o += w * v[off];
                }
            }
        }
        Combine::Product { k } => {
            out.iter_mut().for_each(|o| *o = 1.0);
            for i in 0..k {
                for (o, &off) in out.iter_mut().zip(&trace.offsets[i * d..(i + 1) * d]) {
                    *o *= v[off];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
