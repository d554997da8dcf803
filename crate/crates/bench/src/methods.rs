use std::fmt;

use anyhow::{bail, Result};
use fmux_core::tables::{SchemeConfig, SchemeKind};

use crate::config::Grid;

/// One embedding method at one hyperparameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Method {
    pub kind: SchemeKind,
    pub multiplexed: bool,
    /// Lookups (hash embedding) or components (QR, PQ).
    pub k: Option<usize>,
    /// ROBE-Z lookups per embedding; the block length is `dim / lookups`.
    pub lookups: Option<usize>,
    /// Hash-embedding importance-weight fraction.
    pub importance: Option<f64>,
}

impl Method {
    pub fn plain(kind: SchemeKind, multiplexed: bool) -> Self {
        Self {
            kind,
            multiplexed: multiplexed || kind.always_multiplexed(),
            k: None,
            lookups: None,
            importance: None,
        }
    }

    /// `mux-` prefix marks multiplexed variants of per-feature baselines;
    /// hyperparameters follow a colon, separated by `;`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.multiplexed && !self.kind.always_multiplexed() {
            s.push_str("mux-");
        }
        s.push_str(self.kind.name());
        let mut params = Vec::new();
        if let Some(k) = self.k {
            params.push(format!("k={k}"));
        }
        if let Some(p) = self.importance {
            params.push(format!("p={p}"));
        }
        if let Some(l) = self.lookups {
            params.push(format!("lookups={l}"));
        }
        if !params.is_empty() {
            s.push(':');
            s.push_str(&params.join(";"));
        }
        s
    }

    /// Label without hyperparameters.
    pub fn family(&self) -> String {
        family_of(&self.label())
    }

    /// Collisionless tables are only trained at their own size.
    pub fn fixed_budget(&self) -> bool {
        self.kind == SchemeKind::Collisionless
    }

    pub fn scheme_config(
        &self,
        dims: Vec<usize>,
        budget: usize,
        seed: u64,
    ) -> Result<SchemeConfig> {
        let d = dims.first().copied().unwrap_or(0);
        let mut cfg = SchemeConfig::new(self.kind, dims, budget)
            .multiplexed(self.multiplexed)
            .with_seed(seed);
        if let Some(k) = self.k {
            cfg = cfg.with_k(k);
        }
        if let Some(p) = self.importance {
            cfg = cfg.with_importance_fraction(p);
        }
        if let Some(l) = self.lookups {
            if l == 0 || d % l != 0 {
                bail!("{l} ROBE lookups do not divide embedding dim {d}");
            }
            cfg = cfg.with_block(d / l);
        }
        Ok(cfg)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn family_of(label: &str) -> String {
    label.split(':').next().unwrap_or(label).to_string()
}

/// Parses a method family (`pq`, `mux-robe_z`, `unified`, ...) without
/// hyperparameters.
pub fn parse_family(token: &str) -> Result<(SchemeKind, bool)> {
    let token = token.trim();
    let (mux, name) = match token.strip_prefix("mux-") {
        Some(rest) => (true, rest),
        None => (false, token),
    };
    let kind: SchemeKind = name.parse()?;
    if mux && kind == SchemeKind::Collisionless {
        bail!("collisionless tables have no multiplexed variant");
    }
    // The multiplexed hashing trick is Unified Embedding.
    if mux && kind == SchemeKind::HashingTrick {
        return Ok((SchemeKind::Unified, true));
    }
    Ok((kind, mux || kind.always_multiplexed()))
}

/// Grid points of one method family.
pub fn expand(token: &str, grid: &Grid) -> Result<Vec<Method>> {
    let (kind, multiplexed) = parse_family(token)?;
    let base = Method::plain(kind, multiplexed);
    let out = match kind {
        SchemeKind::HashEmbedding => grid
            .hash_embedding_k
            .iter()
            .flat_map(|&k| {
                grid.hash_embedding_p.iter().map(move |&p| Method {
                    k: Some(k),
                    importance: Some(p),
                    ..base
                })
            })
            .collect(),
        SchemeKind::RobeZ => grid
            .robe_lookups
            .iter()
            .map(|&l| Method {
                lookups: Some(l),
                ..base
            })
            .collect(),
        SchemeKind::CompPq => grid
            .pq_k
            .iter()
            .map(|&k| Method { k: Some(k), ..base })
            .collect(),
        SchemeKind::CompQr => grid
            .qr_k
            .iter()
            .map(|&k| Method { k: Some(k), ..base })
            .collect(),
        _ => vec![base],
    };
    Ok(out)
}
