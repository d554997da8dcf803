use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fmux_core::kv::KvMap;

/// The sixteen budget multipliers, as fractions of the collisionless size.
pub const DEFAULT_MULTIPLIERS: [f64; 16] = [
    0.001, 0.002, 0.005, 0.007, 0.01, 0.02, 0.05, 0.07, 0.1, 0.2, 0.5, 0.7, 1.0, 2.0, 5.0, 10.0,
];

pub const DEFAULT_METHODS: [&str; 13] = [
    "collisionless",
    "hashing_trick",
    "unified",
    "hash_embedding",
    "mux-hash_embedding",
    "hashednet",
    "mux-hashednet",
    "robe_z",
    "mux-robe_z",
    "comp_qr",
    "mux-comp_qr",
    "comp_pq",
    "mux-comp_pq",
];

/// Per-method hyperparameter grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub hash_embedding_k: Vec<usize>,
    pub hash_embedding_p: Vec<f64>,
    pub robe_lookups: Vec<usize>,
    pub pq_k: Vec<usize>,
    pub qr_k: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            hash_embedding_k: vec![2, 3],
            hash_embedding_p: vec![0.05, 0.1, 0.2],
            robe_lookups: vec![2, 4, 8, 16],
            pq_k: vec![2, 3, 4, 8, 16],
            qr_k: vec![2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// `movielens`, `movielens:<dir>`, `synthetic-movielens[:ratings]`,
    /// `power-law[:examples]`, `cache:<file>` or `csv:<spec file>`.
    pub dataset: String,
    pub methods: Vec<String>,
    pub multipliers: Vec<f64>,
    pub replicates: usize,
    pub epochs: usize,
    /// Steps per epoch; a full pass when unset.
    pub steps: Option<usize>,
    pub batch: usize,
    pub lr: f64,
    pub dim: usize,
    pub cross_layers: usize,
    pub dense: Vec<usize>,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub resume: bool,
    /// Stop after this many new runs (for interruption tests).
    pub stop_after: Option<usize>,
    pub grid: Grid,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            dataset: "movielens".into(),
            methods: DEFAULT_METHODS.iter().map(|s| s.to_string()).collect(),
            multipliers: DEFAULT_MULTIPLIERS.to_vec(),
            replicates: 5,
            epochs: 3,
            steps: None,
            batch: 128,
            lr: 2e-4,
            dim: 16,
            cross_layers: 1,
            dense: vec![192],
            seed: 0,
            jobs: 1,
            out: PathBuf::from("sweep-out"),
            resume: false,
            stop_after: None,
            grid: Grid::default(),
        }
    }
}

impl SweepConfig {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let mut c = Self::default();
        c.apply_kv(kv)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_kv(&KvMap::parse(&text)?)
    }

    pub fn apply_kv(&mut self, kv: &KvMap) -> Result<()> {
        const KNOWN: [&str; 20] = [
            "dataset",
            "methods",
            "multipliers",
            "replicates",
            "epochs",
            "steps",
            "batch",
            "lr",
            "dim",
            "cross_layers",
            "dense",
            "seed",
            "jobs",
            "out",
            "resume",
            "hash_embedding_k",
            "hash_embedding_p",
            "robe_lookups",
            "pq_k",
            "qr_k",
        ];
        if let Some(k) = kv.keys().find(|k| !KNOWN.contains(k)) {
            bail!("unknown sweep config key {k:?}");
        }
        if let Some(v) = kv.get("dataset") {
            self.dataset = v.to_string();
        }
        if let Some(v) = kv.parse_list::<String>("methods")? {
            self.methods = v;
        }
        if let Some(v) = kv.parse_list("multipliers")? {
            self.multipliers = v;
        }
        if let Some(v) = kv.parse_value("replicates")? {
            self.replicates = v;
        }
        if let Some(v) = kv.parse_value("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = kv.parse_value("steps")? {
            self.steps = Some(v);
        }
        if let Some(v) = kv.parse_value("batch")? {
            self.batch = v;
        }
        if let Some(v) = kv.parse_value("lr")? {
            self.lr = v;
        }
        if let Some(v) = kv.parse_value("dim")? {
            self.dim = v;
        }
        if let Some(v) = kv.parse_value("cross_layers")? {
            self.cross_layers = v;
        }
        if let Some(v) = kv.parse_list("dense")? {
            self.dense = v;
        }
        if let Some(v) = kv.parse_value("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.parse_value("jobs")? {
            self.jobs = v;
        }
        if let Some(v) = kv.get("out") {
            self.out = PathBuf::from(v);
        }
        if let Some(v) = kv.parse_value("resume")? {
            self.resume = v;
        }
        if let Some(v) = kv.parse_list("hash_embedding_k")? {
            self.grid.hash_embedding_k = v;
        }
        if let Some(v) = kv.parse_list("hash_embedding_p")? {
            self.grid.hash_embedding_p = v;
        }
        if let Some(v) = kv.parse_list("robe_lookups")? {
            self.grid.robe_lookups = v;
        }
        if let Some(v) = kv.parse_list("pq_k")? {
            self.grid.pq_k = v;
        }
        if let Some(v) = kv.parse_list("qr_k")? {
            self.grid.qr_k = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.multipliers.is_empty()
            || self
                .multipliers
                .iter()
                .any(|&m| !(m > 0.0 && m.is_finite()))
        {
            bail!("multipliers must be positive");
        }
        if self.replicates == 0
            || self.epochs == 0
            || self.batch == 0
            || self.dim == 0
            || self.jobs == 0
        {
            bail!("replicates, epochs, batch, dim and jobs must be positive");
        }
        if self.steps == Some(0) {
            bail!("steps must be positive");
        }
        if self.methods.is_empty() {
            bail!("no methods");
        }
        Ok(())
    }
}
