use std::fmt;
use std::str::FromStr;

use crate::kv::{KvError, KvMap};

use super::TableError;

/// The embedding representations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    Collisionless,
    HashingTrick,
    HashEmbedding,
    HashedNet,
    RobeZ,
    CompQr,
    CompPq,
    /// Hashing trick with one table shared by every feature.
    Unified,
    /// Unified table with a variable number of concatenated lookups per feature.
    MultisizeUnified,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 9] = [
        SchemeKind::Collisionless,
        SchemeKind::HashingTrick,
        SchemeKind::HashEmbedding,
        SchemeKind::HashedNet,
        SchemeKind::RobeZ,
        SchemeKind::CompQr,
        SchemeKind::CompPq,
        SchemeKind::Unified,
        SchemeKind::MultisizeUnified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Collisionless => "collisionless",
            SchemeKind::HashingTrick => "hashing_trick",
            SchemeKind::HashEmbedding => "hash_embedding",
            SchemeKind::HashedNet => "hashednet",
            SchemeKind::RobeZ => "robe_z",
            SchemeKind::CompQr => "comp_qr",
            SchemeKind::CompPq => "comp_pq",
            SchemeKind::Unified => "unified",
            SchemeKind::MultisizeUnified => "multisize_unified",
        }
    }

    /// Kinds whose layout is always a single shared region.
    pub fn always_multiplexed(self) -> bool {
        matches!(self, SchemeKind::Unified | SchemeKind::MultisizeUnified)
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = TableError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace('-', "_");
        let kind = match normalized.as_str() {
            "collisionless" => SchemeKind::Collisionless,
            "hashing_trick" | "hash" => SchemeKind::HashingTrick,
            "hash_embedding" | "multihash" => SchemeKind::HashEmbedding,
            "hashednet" | "hashed_net" => SchemeKind::HashedNet,
            "robe_z" | "robe" => SchemeKind::RobeZ,
            "comp_qr" | "qr" => SchemeKind::CompQr,
            "comp_pq" | "pq" => SchemeKind::CompPq,
            "unified" => SchemeKind::Unified,
            "multisize_unified" => SchemeKind::MultisizeUnified,
            _ => return Err(TableError::UnknownKind(s.to_string())),
        };
        Ok(kind)
    }
}

/// Everything needed to build an [`super::EmbeddingScheme`].
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    /// Share every region across features, with per-feature seeds.
    pub multiplexed: bool,
    /// Output dimension per feature.
    pub dims: Vec<usize>,
    /// Lookups for hash embeddings, components for QR/PQ.
    pub k: usize,
    /// ROBE-Z block length `Z`.
    pub block: usize,
    /// Fraction of the budget given to hash-embedding importance weights.
    pub importance_fraction: f64,
    /// Total trainable reals. Ignored (and overwritten) for collisionless.
    pub budget: usize,
    /// Row width of the multi-size unified table; defaults to the smallest dim.
    pub table_dim: Option<usize>,
    pub seed: u64,
    /// Use one hash function for every feature.
    pub shared_seed: bool,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, dims: Vec<usize>, budget: usize) -> Self {
        Self {
            kind,
            multiplexed: kind.always_multiplexed(),
            dims,
            k: 2,
            block: 1,
            importance_fraction: 0.1,
            budget,
            table_dim: None,
            seed: 0,
            shared_seed: false,
        }
    }

    pub fn multiplexed(mut self, yes: bool) -> Self {
        self.multiplexed = yes;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_block(mut self, z: usize) -> Self {
        self.block = z;
        self
    }

    pub fn with_importance_fraction(mut self, p: f64) -> Self {
        self.importance_fraction = p;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_table_dim(mut self, d: usize) -> Self {
        self.table_dim = Some(d);
        self
    }

    pub fn with_shared_seed(mut self, shared: bool) -> Self {
        self.shared_seed = shared;
        self
    }

    /// Kind after folding the hashing-trick/unified equivalence.
    pub fn effective_kind(&self) -> SchemeKind {
        match (self.kind, self.multiplexed) {
            (SchemeKind::HashingTrick, true) => SchemeKind::Unified,
            (k, _) => k,
        }
    }

    pub fn is_multiplexed(&self) -> bool {
        self.multiplexed || self.kind.always_multiplexed()
    }

    pub fn validate(&self, features: usize) -> Result<(), TableError> {
        let invalid = |msg: String| Err(TableError::InvalidConfig(msg));
        if self.dims.is_empty() {
            return invalid("at least one feature is required".into());
        }
        if self.dims.len() != features {
            return invalid(format!(
                "{} dims for {} vocabularies",
                self.dims.len(),
                features
            ));
        }
        if self.dims.contains(&0) {
            return invalid("embedding dims must be positive".into());
        }
        let kind = self.effective_kind();
        let needs_k = matches!(
            kind,
            SchemeKind::HashEmbedding | SchemeKind::CompQr | SchemeKind::CompPq
        );
        if needs_k && self.k == 0 {
            return invalid(format!("{kind} needs k >= 1"));
        }
        match kind {
            SchemeKind::CompPq => {
                if let Some(d) = self.dims.iter().find(|&&d| d % self.k != 0) {
                    return Err(TableError::Divisibility {
                        what: "k",
                        value: self.k,
                        dim: *d,
                    });
                }
            }
            SchemeKind::RobeZ => {
                if self.block == 0 {
                    return invalid("robe_z needs Z >= 1".into());
                }
                if let Some(d) = self.dims.iter().find(|&&d| d % self.block != 0) {
                    return Err(TableError::Divisibility {
                        what: "Z",
                        value: self.block,
                        dim: *d,
                    });
                }
            }
            SchemeKind::HashEmbedding => {
                let p = self.importance_fraction;
                if !(p > 0.0 && p < 1.0) {
                    return invalid(format!("importance fraction {p} outside (0, 1)"));
                }
            }
            SchemeKind::MultisizeUnified => {
                let base = self.base_dim();
                if base == 0 {
                    return invalid("table_dim must be positive".into());
                }
                if let Some(d) = self.dims.iter().find(|&&d| d % base != 0) {
                    return Err(TableError::Divisibility {
                        what: "table_dim",
                        value: base,
                        dim: *d,
                    });
                }
            }
            _ => {}
        }
        let shared_rows = self.is_multiplexed()
            && matches!(
                kind,
                SchemeKind::HashEmbedding
                    | SchemeKind::CompQr
                    | SchemeKind::CompPq
                    | SchemeKind::Unified
            );
        if shared_rows && self.dims.iter().any(|&d| d != self.dims[0]) {
            return invalid(format!(
                "multiplexed {kind} needs equal dims (use multisize_unified for mixed widths)"
            ));
        }
        Ok(())
    }

    pub(crate) fn base_dim(&self) -> usize {
        self.table_dim
            .unwrap_or_else(|| self.dims.iter().copied().min().unwrap_or(0))
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("kind", self.kind);
        kv.insert("multiplexed", self.multiplexed);
        kv.insert(
            "dims",
            self.dims
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("k", self.k);
        kv.insert("block", self.block);
        kv.insert("importance_fraction", self.importance_fraction);
        kv.insert("budget", self.budget);
        if let Some(d) = self.table_dim {
            kv.insert("table_dim", d);
        }
        kv.insert("seed", self.seed);
        kv.insert("shared_seed", self.shared_seed);
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self, TableError> {
        let kind: SchemeKind = kv.require("kind")?.parse()?;
        let dims = kv
            .parse_list::<usize>("dims")?
            .ok_or_else(|| KvError::Missing("dims".into()))?;
        let budget = kv.parse_value("budget")?.unwrap_or(0);
        let mut cfg = SchemeConfig::new(kind, dims, budget);
        if let Some(m) = kv.parse_value("multiplexed")? {
            cfg.multiplexed = m;
        }
        if let Some(k) = kv.parse_value("k")? {
            cfg.k = k;
        }
        if let Some(z) = kv.parse_value("block")? {
            cfg.block = z;
        }
        if let Some(p) = kv.parse_value("importance_fraction")? {
            cfg.importance_fraction = p;
        }
        cfg.table_dim = kv.parse_value("table_dim")?;
        if let Some(s) = kv.parse_value("seed")? {
            cfg.seed = s;
        }
        if let Some(s) = kv.parse_value("shared_seed")? {
            cfg.shared_seed = s;
        }
        Ok(cfg)
    }
}

/// Parameter budget for `multiplier` times the collisionless table size.
pub fn budget_for_multiplier(multiplier: f64, vocab_sizes: &[usize], dim: usize) -> usize {
    let full: usize = vocab_sizes.iter().sum::<usize>() * dim;
    (multiplier * full as f64).round() as usize
}
