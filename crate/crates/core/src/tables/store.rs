use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TableError;

/// A named span of the flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Reals per row; 1 for flat (per-dimension addressed) regions.
    pub row_width: usize,
}

impl Region {
    pub fn rows(&self) -> usize {
        self.len / self.row_width
    }

    pub fn end(&self) -> usize {
        self.offset + self.len
    }

    pub fn contains(&self, flat: usize) -> bool {
        flat >= self.offset && flat < self.end()
    }
}

/// Flat array of reals partitioned into disjoint regions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    values: Vec<f64>,
    regions: Vec<Region>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    len: usize,
    regions: Vec<Region>,
}

const FORMAT: &str = "f64-le";

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zeroed region and returns its index.
    pub fn add_region(&mut self, name: impl Into<String>, rows: usize, row_width: usize) -> usize {
        let offset = self.values.len();
        let len = rows * row_width;
        self.values.resize(offset + len, 0.0);
        self.regions.push(Region {
            name: name.into(),
            offset,
            len,
            row_width,
        });
        self.regions.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn region(&self, index: usize) -> &Region {
        &self.regions[index]
    }

    pub fn region_by_name(&self, name: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn region_values(&self, index: usize) -> &[f64] {
        let r = &self.regions[index];
        &self.values[r.offset..r.end()]
    }

    pub fn region_values_mut(&mut self, index: usize) -> &mut [f64] {
        let r = self.regions[index].clone();
        &mut self.values[r.offset..r.end()]
    }

    /// Writes `<path>` as raw little-endian f64 and `<path>.json` with the
    /// region table.
    pub fn save(&self, path: &Path) -> Result<(), TableError> {
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::File::create(path)?.write_all(&bytes)?;
        let sidecar = Sidecar {
            format: FORMAT.to_string(),
            len: self.values.len(),
            regions: self.regions.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        if sidecar.format != FORMAT {
            return Err(TableError::Checkpoint(format!(
                "unsupported format {:?}",
                sidecar.format
            )));
        }
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() != sidecar.len * 8 {
            return Err(TableError::Checkpoint(format!(
                "{} bytes for {} values",
                bytes.len(),
                sidecar.len
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut end = 0;
        for r in &sidecar.regions {
            if r.offset < end || r.end() > values.len() || r.row_width == 0 {
                return Err(TableError::Checkpoint(format!("bad region {:?}", r.name)));
            }
            end = r.end();
        }
        Ok(Self {
            values,
            regions: sidecar.regions,
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl From<io::Error> for TableError {
    fn from(e: io::Error) -> Self {
        TableError::Checkpoint(e.to_string())
    }
}

impl From<serde_json::Error> for TableError {
    fn from(e: serde_json::Error) -> Self {
        TableError::Checkpoint(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_are_disjoint_and_contiguous() {
        let mut s = ParameterStore::new();
        let a = s.add_region("a", 3, 4);
        let b = s.add_region("b", 5, 1);
        assert_eq!(s.len(), 17);
        assert_eq!(s.region(a).end(), s.region(b).offset);
        assert_eq!(s.region(a).rows(), 3);
        assert!(s.region(b).contains(16));
        assert!(!s.region(b).contains(11));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.bin");
        let mut s = ParameterStore::new();
        s.add_region("emb", 2, 3);
        s.add_region("imp", 1, 2);
        for (i, v) in s.values_mut().iter_mut().enumerate() {
            *v = i as f64 * -0.5 + 1e-300;
        }
        s.save(&path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 64);
        let back = ParameterStore::load(&path).unwrap();
        assert_eq!(back, s);
        let json = fs::read_to_string(dir.path().join("store.bin.json")).unwrap();
        assert!(json.contains("\"f64-le\""));
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let mut s = ParameterStore::new();
        s.add_region("emb", 2, 2);
        s.save(&path).unwrap();
        fs::write(&path, [0u8; 12]).unwrap();
        assert!(matches!(
            ParameterStore::load(&path),
            Err(TableError::Checkpoint(_))
        ));
    }
}
