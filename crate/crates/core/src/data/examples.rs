use crate::hashing::TokenId;

use super::DataError;

/// Encoded examples, row-major: `T` token ids and optional continuous values
/// per example plus one binary label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Examples {
    num_features: usize,
    num_continuous: usize,
    tokens: Vec<TokenId>,
    continuous: Vec<f64>,
    labels: Vec<u8>,
}

impl Examples {
    pub fn new(num_features: usize) -> Self {
        Self::with_continuous(num_features, 0)
    }

    pub fn with_continuous(num_features: usize, num_continuous: usize) -> Self {
        Self {
            num_features,
            num_continuous,
            ..Self::default()
        }
    }

    pub fn push(&mut self, tokens: &[TokenId], label: u8) -> Result<(), DataError> {
        self.push_with_continuous(tokens, &[], label)
    }

    pub fn push_with_continuous(
        &mut self,
        tokens: &[TokenId],
        continuous: &[f64],
        label: u8,
    ) -> Result<(), DataError> {
        if tokens.len() != self.num_features || continuous.len() != self.num_continuous {
            return Err(DataError::Shape(format!(
                "example with {} tokens and {} continuous values, expected {} and {}",
                tokens.len(),
                continuous.len(),
                self.num_features,
                self.num_continuous
            )));
        }
        if label > 1 {
            return Err(DataError::Shape(format!("label {label} is not binary")));
        }
        self.tokens.extend_from_slice(tokens);
        self.continuous.extend_from_slice(continuous);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_continuous(&self) -> usize {
        self.num_continuous
    }

    pub fn tokens(&self, i: usize) -> &[TokenId] {
        &self.tokens[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn continuous(&self, i: usize) -> &[f64] {
        &self.continuous[i * self.num_continuous..(i + 1) * self.num_continuous]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn subset(&self, indices: &[usize]) -> Examples {
        let mut out = Examples::with_continuous(self.num_features, self.num_continuous);
        out.tokens.reserve(indices.len() * self.num_features);
        out.labels.reserve(indices.len());
        for &i in indices {
            out.tokens.extend_from_slice(self.tokens(i));
            out.continuous.extend_from_slice(self.continuous(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Keeps only the listed feature columns, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Result<Examples, DataError> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.num_features) {
            return Err(DataError::Shape(format!(
                "column {c} out of range for {} features",
                self.num_features
            )));
        }
        let mut out = Examples::with_continuous(columns.len(), self.num_continuous);
        for i in 0..self.len() {
            let row = self.tokens(i);
            out.tokens.extend(columns.iter().map(|&c| row[c]));
            out.continuous.extend_from_slice(self.continuous(i));
            out.labels.push(self.labels[i]);
        }
        Ok(out)
    }

    /// Largest token id + 1 per feature.
    pub fn observed_cardinalities(&self) -> Vec<usize> {
        let mut card = vec![0usize; self.num_features];
        for row in self.tokens.chunks_exact(self.num_features.max(1)) {
            for (c, &t) in card.iter_mut().zip(row) {
                *c = (*c).max(t as usize + 1);
            }
        }
        card
    }

    pub(crate) fn raw_tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub(crate) fn raw_continuous(&self) -> &[f64] {
        &self.continuous
    }

    pub(crate) fn from_raw(
        num_features: usize,
        num_continuous: usize,
        tokens: Vec<TokenId>,
        continuous: Vec<f64>,
        labels: Vec<u8>,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        if tokens.len() != n * num_features || continuous.len() != n * num_continuous {
            return Err(DataError::Shape("inconsistent example buffers".into()));
        }
        Ok(Self {
            num_features,
            num_continuous,
            tokens,
            continuous,
            labels,
        })
    }
}
