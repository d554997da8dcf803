use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataError, Examples};

const FORMAT: &str = "fmux-examples-v1";

/// Descriptive fields stored next to an encoded-example cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CacheMeta {
    pub feature_names: Vec<String>,
    pub cardinalities: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    len: usize,
    num_features: usize,
    num_continuous: usize,
    #[serde(flatten)]
    meta: CacheMeta,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes little-endian token ids, then continuous values, then labels, plus
/// a `<path>.json` schema.
pub fn save_cache(path: &Path, examples: &Examples, meta: &CacheMeta) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(examples.raw_tokens().len() * 8 + examples.len());
    for t in examples.raw_tokens() {
        bytes.extend_from_slice(&t.to_le_bytes());
    }
    for v in examples.raw_continuous() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(examples.labels());
    fs::write(path, bytes)?;
    let sidecar = Sidecar {
        format: FORMAT.into(),
        len: examples.len(),
        num_features: examples.num_features(),
        num_continuous: examples.num_continuous(),
        meta: meta.clone(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<(Examples, CacheMeta), DataError> {
    let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.format != FORMAT {
        return Err(DataError::Cache(format!(
            "unknown format {:?}",
            sidecar.format
        )));
    }
    let bytes = fs::read(path)?;
    let n_tok = sidecar.len * sidecar.num_features;
    let n_cont = sidecar.len * sidecar.num_continuous;
    if bytes.len() != n_tok * 8 + n_cont * 8 + sidecar.len {
        return Err(DataError::Cache(format!(
            "{} bytes do not match the sidecar",
            bytes.len()
        )));
    }
    let word = |i: usize| <[u8; 8]>::try_from(&bytes[i * 8..i * 8 + 8]).expect("8 bytes");
    let tokens = (0..n_tok).map(|i| u64::from_le_bytes(word(i))).collect();
    let continuous = (n_tok..n_tok + n_cont)
        .map(|i| f64::from_le_bytes(word(i)))
        .collect();
    let labels = bytes[(n_tok + n_cont) * 8..].to_vec();
    if labels.iter().any(|&y| y > 1) {
        return Err(DataError::Cache("non-binary label".into()));
    }
    let examples = Examples::from_raw(
        sidecar.num_features,
        sidecar.num_continuous,
        tokens,
        continuous,
        labels,
    )?;
    Ok((examples, sidecar.meta))
}
