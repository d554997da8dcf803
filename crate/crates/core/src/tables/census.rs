use std::collections::HashMap;

use super::{EmbeddingScheme, LookupTrace, TableError};

/// Pair counts of values that resolve to identical parameter addresses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionCensus {
    /// Pairs within one feature.
    pub intra: u64,
    /// Pairs from two different features.
    pub inter: u64,
    /// Fraction of each vocabulary enumerated; 1.0 unless sampling kicked in.
    pub sampled_fraction: f64,
}

impl EmbeddingScheme {
    /// Counts colliding value pairs. Two values collide when their lookups
    /// read exactly the same addresses (weights included).
    ///
    /// When the vocabularies hold more than `max_values` values in total,
    /// every `s`-th value of each feature is enumerated instead and
    /// `sampled_fraction` reports `1/s`; counts are not rescaled.
    pub fn collision_census(
        &self,
        vocab_sizes: &[usize],
        max_values: usize,
    ) -> Result<CollisionCensus, TableError> {
        if vocab_sizes.len() != self.num_features() {
            return Err(TableError::InvalidConfig(format!(
                "{} vocabularies for {} features",
                vocab_sizes.len(),
                self.num_features()
            )));
        }
        let total: usize = vocab_sizes.iter().sum();
        let stride = if max_values == 0 || total <= max_values {
            1
        } else {
            total.div_ceil(max_values)
        };
        let t_count = vocab_sizes.len();
        let mut buckets: HashMap<Vec<usize>, Vec<u64>> = HashMap::new();
        let mut trace = LookupTrace::new();
        for (t, &n) in vocab_sizes.iter().enumerate() {
            let mut out = vec![0.0; self.dim(t)];
            for value in (0..n).step_by(stride) {
                self.lookup_into(t, value as u64, &mut out, &mut trace)?;
                let mut key = trace.offsets.clone();
                key.extend(&trace.weight_offsets);
                buckets.entry(key).or_insert_with(|| vec![0; t_count])[t] += 1;
            }
        }
        let mut intra = 0u64;
        let mut inter = 0u64;
        for counts in buckets.values() {
            let mut seen = 0u64;
            for &c in counts {
                intra += c * c.saturating_sub(1) / 2;
                inter += seen * c;
                seen += c;
            }
        }
        Ok(CollisionCensus {
            intra,
            inter,
            sampled_fraction: 1.0 / stride as f64,
        })
    }
}
