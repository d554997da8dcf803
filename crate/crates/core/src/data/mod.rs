//! Ingestion of delimited click logs and MovieLens ratings, vocabulary
//! construction and pruning, splitting, and synthetic stand-in datasets.

mod cache;
mod examples;
mod ingest;
mod movielens;
mod synthetic;
mod vocab;

pub use cache::{load_cache, save_cache, CacheMeta};
pub use examples::Examples;
pub use ingest::{encode, ingest, Ingested, MalformedRow};
pub use movielens::{load_movielens, MOVIELENS_FEATURES};
pub use synthetic::{power_law, synthetic_movielens, PowerLawSpec};
pub use vocab::{FeatureVocab, Vocabulary, VocabularyBuilder};

use std::fmt;
use std::io;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hashing::derive_seed;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("{0}")]
    Shape(String),
    #[error("dataset spec: {0}")]
    Spec(String),
    #[error("cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Preprocessing applied to labels and values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipe {
    /// Binary label, `ln(1 + x)` continuous values.
    CriteoLike,
    /// Binary label, `hour` reduced to hour of day.
    AvazuLike,
    /// Rating label binarized at 3, `ln(1 + x)` continuous values.
    MovielensLike,
    Raw,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::CriteoLike => "criteo_like",
            Recipe::AvazuLike => "avazu_like",
            Recipe::MovielensLike => "movielens_like",
            Recipe::Raw => "raw",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "criteo_like" => Ok(Recipe::CriteoLike),
            "avazu_like" => Ok(Recipe::AvazuLike),
            "movielens_like" => Ok(Recipe::MovielensLike),
            "raw" => Ok(Recipe::Raw),
            other => Err(DataError::Spec(format!("unknown recipe {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedPolicy {
    Skip,
    Abort,
}

/// Where a delimited dataset lives and how to read it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub delimiter: u8,
    pub label: String,
    pub categorical: Vec<String>,
    pub continuous: Vec<String>,
    pub recipe: Recipe,
    pub on_malformed: MalformedPolicy,
    /// Vocabulary size targets by categorical column name.
    pub prune: Vec<(String, usize)>,
}

impl DatasetSpec {
    pub fn new(path: impl Into<PathBuf>, label: &str, categorical: &[&str]) -> Self {
        Self {
            path: path.into(),
            delimiter: b',',
            label: label.to_string(),
            categorical: categorical.iter().map(|s| s.to_string()).collect(),
            continuous: Vec::new(),
            recipe: Recipe::Raw,
            on_malformed: MalformedPolicy::Abort,
            prune: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut all: Vec<&str> = vec![self.label.as_str()];
        all.extend(self.categorical.iter().map(String::as_str));
        all.extend(self.continuous.iter().map(String::as_str));
        let mut sorted = all.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(DataError::Spec(format!("column {:?} listed twice", w[0])));
        }
        if self.categorical.is_empty() {
            return Err(DataError::Spec("no categorical columns".into()));
        }
        for (name, target) in &self.prune {
            if !self.categorical.contains(name) {
                return Err(DataError::Spec(format!(
                    "prune target for unknown column {name:?}"
                )));
            }
            if *target == 0 {
                return Err(DataError::Spec(format!("prune target 0 for {name:?}")));
            }
        }
        Ok(())
    }
}

/// Vocabulary sizes after merging rare values, keyed by feature number.
pub const CRITEO_VOCAB_TARGETS: [(usize, usize); 26] = [
    (14, 676),
    (15, 533),
    (16, 17447),
    (17, 19995),
    (18, 180),
    (19, 13),
    (20, 9693),
    (21, 337),
    (22, 3),
    (23, 14637),
    (24, 4378),
    (25, 17795),
    (26, 3067),
    (27, 26),
    (28, 6504),
    (29, 18679),
    (30, 10),
    (31, 3102),
    (32, 1557),
    (33, 3),
    (34, 18230),
    (35, 10),
    (36, 14),
    (37, 13079),
    (38, 56),
    (39, 10581),
];

/// Vocabulary sizes after merging rare values, keyed by column name.
pub const AVAZU_VOCAB_TARGETS: [(&str, usize); 22] = [
    ("C1", 8),
    ("C14", 2309),
    ("C15", 9),
    ("C16", 10),
    ("C17", 405),
    ("C18", 5),
    ("C19", 66),
    ("C20", 167),
    ("C21", 56),
    ("app_category", 29),
    ("app_domain", 277),
    ("app_id", 4438),
    ("banner_pos", 8),
    ("device_conn_type", 5),
    ("device_id", 67767),
    ("device_ip", 163804),
    ("device_model", 6217),
    ("device_type", 6),
    ("site_category", 24),
    ("site_domain", 3887),
    ("site_id", 3317),
    ("hour", 24),
];

/// 1 iff the rating is at least 3.
pub fn binarize_rating(rating: f64) -> u8 {
    u8::from(rating >= 3.0)
}

/// Continuous preprocessing; `None` (missing) maps to 0.
pub fn transform_continuous(value: Option<f64>, recipe: Recipe) -> f64 {
    let Some(v) = value.filter(|v| v.is_finite()) else {
        return 0.0;
    };
    match recipe {
        Recipe::CriteoLike | Recipe::MovielensLike => v.max(0.0).ln_1p(),
        Recipe::AvazuLike | Recipe::Raw => v,
    }
}

/// Hour of day from an Avazu `hour` field, which is either `YYMMDDHH` or
/// already an hour.
pub fn avazu_hour(value: u64) -> u64 {
    if value >= 10_000_000 {
        value % 100 % 24
    } else {
        value % 24
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitPolicy {
    Holdout {
        fraction: f64,
        seed: u64,
    },
    /// Shuffle, then hold out 10%.
    Shuffled90_10 {
        seed: u64,
    },
}

/// Deterministic disjoint train/test split. Both parts keep input order.
pub fn split(examples: &Examples, policy: SplitPolicy) -> Result<(Examples, Examples), DataError> {
    let (fraction, seed) = match policy {
        SplitPolicy::Holdout { fraction, seed } => (fraction, seed),
        SplitPolicy::Shuffled90_10 { seed } => (0.1, seed),
    };
    let n = examples.len();
    if n < 2 {
        return Err(DataError::Shape(format!("cannot split {n} examples")));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::Spec(format!("holdout fraction {fraction}")));
    }
    let test_len = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5917)));
    let (test, train) = order.split_at_mut(test_len);
    test.sort_unstable();
    train.sort_unstable();
    Ok((examples.subset(train), examples.subset(test)))
}

#[cfg(test)]
mod tests;
