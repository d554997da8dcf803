use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fmux_core::data::{
    self, load_cache, load_movielens, power_law, split, synthetic_movielens, DatasetSpec, Examples,
    Ingested, MalformedPolicy, PowerLawSpec, SplitPolicy,
};
use fmux_core::hashing::derive_seed;
use fmux_core::kv::KvMap;

/// Environment variable naming a MovieLens directory for `movielens`.
pub const MOVIELENS_ENV: &str = "FMUX_MOVIELENS_DIR";

const DEFAULT_SYNTHETIC_RATINGS: usize = 100_000;

/// A dataset split and described for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub description: String,
    pub train: Examples,
    pub eval: Examples,
    /// Table rows per feature.
    pub cardinalities: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Features always given their own collisionless table.
    pub pinned: Vec<usize>,
    /// True for generated stand-ins.
    pub synthetic: bool,
}

impl Prepared {
    pub fn hashed_features(&self) -> Vec<usize> {
        (0..self.cardinalities.len())
            .filter(|t| !self.pinned.contains(t))
            .collect()
    }
}

pub fn prepare(dataset: &str, seed: u64) -> Result<Prepared> {
    let (kind, arg) = match dataset.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (dataset, None),
    };
    let split_seed = derive_seed(seed, 0x5_917);
    match kind {
        "movielens" => match arg
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(MOVIELENS_ENV).map(PathBuf::from))
        {
            Some(dir) => {
                let ingested = load_movielens(&dir)
                    .with_context(|| format!("loading MovieLens from {}", dir.display()))?;
                from_movielens(
                    ingested,
                    format!("movielens {}", dir.display()),
                    false,
                    split_seed,
                )
            }
            None => synthetic(DEFAULT_SYNTHETIC_RATINGS, split_seed),
        },
        "synthetic-movielens" => {
            let n = arg.map(str::parse).transpose().context("ratings count")?;
            synthetic(n.unwrap_or(DEFAULT_SYNTHETIC_RATINGS), split_seed)
        }
        "power-law" => {
            let n = arg.map(str::parse).transpose().context("example count")?;
            let spec = PowerLawSpec {
                examples: n.unwrap_or(PowerLawSpec::default().examples),
                seed: derive_seed(seed, 0x9_1A),
                ..PowerLawSpec::default()
            };
            let examples = power_law(&spec)?;
            let (train, eval) = split(&examples, SplitPolicy::Shuffled90_10 { seed: split_seed })?;
            Ok(Prepared {
                description: format!(
                    "synthetic power-law, {} features of {} values",
                    spec.features, spec.vocab
                ),
                train,
                eval,
                cardinalities: vec![spec.vocab; spec.features],
                feature_names: (0..spec.features).map(|t| format!("f{t}")).collect(),
                pinned: Vec::new(),
                synthetic: true,
            })
        }
        "cache" => {
            let path = arg.context("cache:<file>")?;
            let (examples, meta) = load_cache(Path::new(path))?;
            let cardinalities = if meta.cardinalities.len() == examples.num_features() {
                meta.cardinalities
            } else {
                examples.observed_cardinalities()
            };
            let (train, eval) = split(&examples, SplitPolicy::Shuffled90_10 { seed: split_seed })?;
            Ok(Prepared {
                description: format!("cache {path}"),
                train,
                eval,
                feature_names: meta.feature_names,
                cardinalities,
                pinned: Vec::new(),
                synthetic: false,
            })
        }
        "csv" => {
            let path = arg.context("csv:<spec file>")?;
            let spec = load_spec(Path::new(path))?;
            let ingested = data::ingest(&spec)?;
            let (train, eval) = split(
                &ingested.examples,
                SplitPolicy::Shuffled90_10 { seed: split_seed },
            )?;
            Ok(Prepared {
                description: format!("csv {}", spec.path.display()),
                train,
                eval,
                cardinalities: ingested.vocab.cardinalities(),
                feature_names: ingested.vocab.names.clone(),
                pinned: Vec::new(),
                synthetic: false,
            })
        }
        other => bail!("unknown dataset {other:?}"),
    }
}

fn synthetic(ratings: usize, split_seed: u64) -> Result<Prepared> {
    let ingested = synthetic_movielens(0, ratings)?;
    from_movielens(
        ingested,
        format!("synthetic MovieLens-shaped stand-in, {ratings} ratings"),
        true,
        split_seed,
    )
}

fn from_movielens(
    ingested: Ingested,
    description: String,
    synthetic: bool,
    split_seed: u64,
) -> Result<Prepared> {
    let (train, eval) = split(
        &ingested.examples,
        SplitPolicy::Shuffled90_10 { seed: split_seed },
    )?;
    let gender = ingested.vocab.names.iter().position(|n| n == "gender");
    Ok(Prepared {
        description,
        train,
        eval,
        cardinalities: ingested.vocab.cardinalities(),
        feature_names: ingested.vocab.names.clone(),
        pinned: gender.into_iter().collect(),
        synthetic,
    })
}

/// Reads a `key = value` dataset description.
pub fn load_spec(path: &Path) -> Result<DatasetSpec> {
    let kv = KvMap::parse(
        &std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
    )?;
    let data_path = PathBuf::from(kv.require("path")?);
    let data_path = if data_path.is_relative() {
        path.parent().unwrap_or(Path::new(".")).join(data_path)
    } else {
        data_path
    };
    let categorical: Vec<String> = kv.parse_list("categorical")?.unwrap_or_default();
    let refs: Vec<&str> = categorical.iter().map(String::as_str).collect();
    let mut spec = DatasetSpec::new(data_path, kv.require("label")?, &refs);
    spec.continuous = kv.parse_list("continuous")?.unwrap_or_default();
    if let Some(d) = kv.get("delimiter") {
        spec.delimiter = match d {
            "tab" | "\\t" => b'\t',
            s if s.len() == 1 => s.as_bytes()[0],
            other => bail!("delimiter {other:?} must be one byte"),
        };
    }
    if let Some(r) = kv.get("recipe") {
        spec.recipe = r.parse()?;
    }
    spec.on_malformed = match kv.get("on_malformed") {
        None | Some("abort") => MalformedPolicy::Abort,
        Some("skip") => MalformedPolicy::Skip,
        Some(other) => bail!("on_malformed {other:?} is neither skip nor abort"),
    };
    for item in kv.parse_list::<String>("prune")?.unwrap_or_default() {
        let (name, size) = item
            .split_once(':')
            .context("prune entries are column:size")?;
        spec.prune
            .push((name.trim().to_string(), size.trim().parse()?));
    }
    spec.validate()?;
    Ok(spec)
}
