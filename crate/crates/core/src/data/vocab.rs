use std::collections::HashMap;

use crate::hashing::TokenId;

use super::DataError;

/// Token to id map for one feature. Ids `0..N` are dense; `N` is reserved
/// for values never seen while building.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVocab {
    ids: HashMap<String, TokenId>,
    /// Tokens of each id, most frequent first after sorting.
    members: Vec<Vec<String>>,
    freqs: Vec<u64>,
}

impl FeatureVocab {
    /// Ids by descending frequency, ties broken by token order.
    pub fn from_counts(counts: HashMap<String, u64>) -> Self {
        let mut entries: Vec<(String, u64)> = counts.into_iter().filter(|e| e.1 > 0).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut ids = HashMap::with_capacity(entries.len());
        let mut members = Vec::with_capacity(entries.len());
        let mut freqs = Vec::with_capacity(entries.len());
        for (i, (token, f)) in entries.into_iter().enumerate() {
            ids.insert(token.clone(), i as TokenId);
            members.push(vec![token]);
            freqs.push(f);
        }
        Self {
            ids,
            members,
            freqs,
        }
    }

    /// Number of in-vocabulary ids `N`.
    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn oov_id(&self) -> TokenId {
        self.len() as TokenId
    }

    /// Rows an embedding table needs: `N + 1` including the OOV id.
    pub fn cardinality(&self) -> usize {
        self.len() + 1
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(self.oov_id())
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn frequency(&self, id: TokenId) -> u64 {
        self.freqs.get(id as usize).copied().unwrap_or(0)
    }

    pub fn total_frequency(&self) -> u64 {
        self.freqs.iter().sum()
    }

    /// Tokens sharing `id`.
    pub fn members(&self, id: TokenId) -> &[String] {
        self.members.get(id as usize).map_or(&[], Vec::as_slice)
    }

    /// Keeps the `target - 1` most frequent ids and merges the rest into
    /// id `target - 1`. Returns the pruned vocabulary and the old-to-new id
    /// map.
    pub fn prune(&self, target: usize) -> Result<(FeatureVocab, Vec<TokenId>), DataError> {
        if target == 0 {
            return Err(DataError::Spec("vocabulary target 0".into()));
        }
        let n = self.len();
        if target >= n {
            return Ok((self.clone(), (0..n as TokenId).collect()));
        }
        let shared = (target - 1) as TokenId;
        let remap: Vec<TokenId> = (0..n as TokenId).map(|i| i.min(shared)).collect();
        let mut members: Vec<Vec<String>> = self.members[..target].to_vec();
        let mut freqs = self.freqs[..target].to_vec();
        for i in target..n {
            members[target - 1].extend(self.members[i].iter().cloned());
            freqs[target - 1] += self.freqs[i];
        }
        let ids = self
            .ids
            .iter()
            .map(|(token, &id)| (token.clone(), remap[id as usize]))
            .collect();
        Ok((
            FeatureVocab {
                ids,
                members,
                freqs,
            },
            remap,
        ))
    }
}

/// Frozen per-feature vocabularies of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub names: Vec<String>,
    pub features: Vec<FeatureVocab>,
}

impl Vocabulary {
    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    /// Table rows per feature, OOV included.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.features
            .iter()
            .map(FeatureVocab::cardinality)
            .collect()
    }

    pub fn encode_row(&self, tokens: &[&str], out: &mut Vec<TokenId>) {
        out.clear();
        out.extend(self.features.iter().zip(tokens).map(|(v, t)| v.id(t)));
    }

    /// Prunes feature `index` in place.
    pub fn prune_feature(
        &mut self,
        index: usize,
        target: usize,
    ) -> Result<Vec<TokenId>, DataError> {
        let (pruned, remap) = self.features[index].prune(target)?;
        self.features[index] = pruned;
        Ok(remap)
    }
}

/// Frequency counting pass.
#[derive(Debug, Clone)]
pub struct VocabularyBuilder {
    names: Vec<String>,
    counts: Vec<HashMap<String, u64>>,
}

impl VocabularyBuilder {
    pub fn new(names: Vec<String>) -> Self {
        let counts = vec![HashMap::new(); names.len()];
        Self { names, counts }
    }

    pub fn observe(&mut self, tokens: &[&str]) {
        for (c, &t) in self.counts.iter_mut().zip(tokens) {
            match c.get_mut(t) {
                Some(n) => *n += 1,
                None => {
                    c.insert(t.to_string(), 1);
                }
            }
        }
    }

    pub fn finish(self) -> Vocabulary {
        Vocabulary {
            names: self.names,
            features: self
                .counts
                .into_iter()
                .map(FeatureVocab::from_counts)
                .collect(),
        }
    }
}
