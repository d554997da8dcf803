//! Signed feature hashing of bag-of-words vectors and the moments of the
//! resulting inner-product estimator.
//!
//! Two ways of sketching a pair of concatenated features are compared:
//! *hashed* projects each feature block into its own `M_t` buckets with
//! independent hash functions, *unified* projects the concatenation with a
//! single hash function into `M_1 + M_2` buckets. Both estimators are
//! unbiased; [`concat_scheme_moments`] gives their exact variances and
//! [`monte_carlo_moments`] estimates the same quantities by sampling seeds.

use crate::hashing::{derive_seed, HashSpec, TokenId};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SketchError {
    #[error("sketch dimension must be at least 1")]
    ZeroModulus,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("index {index} outside vocabulary of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("at least one trial is required")]
    NoTrials,
}

impl From<crate::hashing::HashError> for SketchError {
    fn from(_: crate::hashing::HashError) -> Self {
        SketchError::ZeroModulus
    }
}

/// Binary indicator vector over a vocabulary (one-hot or multivalent).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BagVector {
    entries: Vec<bool>,
}

impl BagVector {
    pub fn zeros(size: usize) -> Self {
        Self {
            entries: vec![false; size],
        }
    }

    pub fn from_indices(size: usize, indices: &[usize]) -> Result<Self, SketchError> {
        let mut v = Self::zeros(size);
        for &index in indices {
            if index >= size {
                return Err(SketchError::IndexOutOfRange { index, size });
            }
            v.entries[index] = true;
        }
        Ok(v)
    }

    pub fn from_bools(entries: Vec<bool>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of the set coordinates, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn count(&self) -> usize {
        self.entries.iter().filter(|&&b| b).count()
    }

    pub fn dot(&self, other: &Self) -> Result<f64, SketchError> {
        self.check_len(other)?;
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .filter(|(&a, &b)| a && b)
            .count() as f64)
    }

    /// `<x o y, x o y>`; equal to `<x, y>` for binary vectors.
    pub fn hadamard_sq(&self, other: &Self) -> Result<f64, SketchError> {
        self.dot(other)
    }

    pub fn concat(&self, other: &Self) -> Self {
        let mut entries = self.entries.clone();
        entries.extend_from_slice(&other.entries);
        Self { entries }
    }

    fn check_len(&self, other: &Self) -> Result<(), SketchError> {
        if self.len() != other.len() {
            return Err(SketchError::LengthMismatch(self.len(), other.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPair {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeMoments {
    pub unified: MomentPair,
    pub hashed: MomentPair,
}

/// `sum_{w in tokens} sign(w) * e_{bucket(w)}`.
pub fn encode(tokens: &[TokenId], bucket: &HashSpec, sign: &HashSpec) -> Vec<f64> {
    let mut out = vec![0.0; bucket.modulus() as usize];
    encode_into(tokens.iter().copied(), bucket, sign, &mut out);
    out
}

fn encode_into(
    tokens: impl Iterator<Item = TokenId>,
    bucket: &HashSpec,
    sign: &HashSpec,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for t in tokens {
        out[bucket.bucket_of(t) as usize] += sign.sign_of(t) as f64;
    }
}

/// Exact mean and variance of `<phi(x), phi(y)>` for one hash table of
/// `m` buckets.
pub fn single_table_moments(
    x: &BagVector,
    y: &BagVector,
    m: u64,
) -> Result<MomentPair, SketchError> {
    if m == 0 {
        return Err(SketchError::ZeroModulus);
    }
    let xy = x.dot(y)?;
    let xx = x.dot(x)?;
    let yy = y.dot(y)?;
    let had = x.hadamard_sq(y)?;
    Ok(MomentPair {
        mean: xy,
        variance: (xx * yy + xy * xy - 2.0 * had) / m as f64,
    })
}

pub fn concat_scheme_moments(
    x1: &BagVector,
    x2: &BagVector,
    y1: &BagVector,
    y2: &BagVector,
    m1: u64,
    m2: u64,
) -> Result<SchemeMoments, SketchError> {
    if m1 == 0 || m2 == 0 {
        return Err(SketchError::ZeroModulus);
    }
    let unified = single_table_moments(&x1.concat(x2), &y1.concat(y2), m1 + m2)?;
    let first = single_table_moments(x1, y1, m1)?;
    let second = single_table_moments(x2, y2, m2)?;
    Ok(SchemeMoments {
        unified,
        hashed: MomentPair {
            mean: first.mean + second.mean,
            variance: first.variance + second.variance,
        },
    })
}

/// `sigma_H^2 - sigma_U^2` for orthogonal inputs with `k1` and `k2` values
/// per feature, in the exact form `(k1 M2 - k2 M1)^2 / (M1 M2 (M1 + M2))`.
pub fn variance_gap(k1: u64, k2: u64, m1: u64, m2: u64) -> Result<f64, SketchError> {
    if m1 == 0 || m2 == 0 {
        return Err(SketchError::ZeroModulus);
    }
    let diff = k1 as i128 * m2 as i128 - k2 as i128 * m1 as i128;
    let num = (diff * diff) as f64;
    let den = m1 as f64 * m2 as f64 * (m1 as f64 + m2 as f64);
    Ok(num / den)
}

/// Streaming central moments (orders 1 to 4) of a sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct StreamingMoments {
    n: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl StreamingMoments {
    pub fn push(&mut self, x: f64) {
        let n1 = self.n as f64;
        self.n += 1;
        let n = self.n as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance, 0 for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn mean_standard_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }

    /// Large-sample standard error of [`Self::variance`].
    pub fn variance_standard_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let s2 = self.m2 / n;
        let mu4 = self.m4 / n;
        ((mu4 - s2 * s2 * (n - 3.0) / (n - 1.0)).max(0.0) / n).sqrt()
    }

    fn estimate(&self) -> MonteCarloEstimate {
        MonteCarloEstimate {
            mean: self.mean(),
            variance: self.variance(),
            mean_se: self.mean_standard_error(),
            variance_se: self.variance_standard_error(),
            trials: self.n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
    pub trials: u64,
}

impl MonteCarloEstimate {
    /// Whether `exact` lies within `z` standard errors for both moments.
    pub fn agrees_with(&self, exact: &MomentPair, z: f64) -> bool {
        (self.mean - exact.mean).abs() <= z * self.mean_se + 1e-12
            && (self.variance - exact.variance).abs() <= z * self.variance_se + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloMoments {
    pub unified: MonteCarloEstimate,
    pub hashed: MonteCarloEstimate,
    /// Set when a single trial was run and the variance is meaningless.
    pub degenerate: bool,
}

/// Sample moments of both estimators over `trials` independent seed draws.
/// Trial `i` uses seeds derived from `(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_moments(
    x1: &BagVector,
    x2: &BagVector,
    y1: &BagVector,
    y2: &BagVector,
    m1: u64,
    m2: u64,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloMoments, SketchError> {
    if trials == 0 {
        return Err(SketchError::NoTrials);
    }
    if m1 == 0 || m2 == 0 {
        return Err(SketchError::ZeroModulus);
    }
    x1.check_len(y1)?;
    x2.check_len(y2)?;
    let n1 = x1.len() as u64;
    let shift = |v: &BagVector| -> Vec<TokenId> { v.ones().map(|i| i as u64 + n1).collect() };
    let plain = |v: &BagVector| -> Vec<TokenId> { v.ones().map(|i| i as u64).collect() };
    let (tx1, ty1) = (plain(x1), plain(y1));
    let (tx2, ty2) = (shift(x2), shift(y2));
    let tx: Vec<TokenId> = tx1.iter().chain(&tx2).copied().collect();
    let ty: Vec<TokenId> = ty1.iter().chain(&ty2).copied().collect();

    let mut unified = StreamingMoments::default();
    let mut hashed = StreamingMoments::default();
    let mut buf_a = vec![0.0; (m1 + m2) as usize];
    let mut buf_b = vec![0.0; (m1 + m2) as usize];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();

    for trial in 0..trials {
        let base = derive_seed(seed, trial);
        let hu = HashSpec::bucket(derive_seed(base, 0), m1 + m2)?;
        let su = HashSpec::sign(derive_seed(base, 1));
        encode_into(tx.iter().copied(), &hu, &su, &mut buf_a);
        encode_into(ty.iter().copied(), &hu, &su, &mut buf_b);
        unified.push(dot(&buf_a, &buf_b));

        let h1 = HashSpec::bucket(derive_seed(base, 2), m1)?;
        let s1 = HashSpec::sign(derive_seed(base, 3));
        let h2 = HashSpec::bucket(derive_seed(base, 4), m2)?;
        let s2 = HashSpec::sign(derive_seed(base, 5));
        let (a1, b1) = (&mut buf_a[..m1 as usize], &mut buf_b[..m1 as usize]);
        encode_into(tx1.iter().copied(), &h1, &s1, a1);
        encode_into(ty1.iter().copied(), &h1, &s1, b1);
        let first = dot(a1, b1);
        let (a2, b2) = (&mut buf_a[..m2 as usize], &mut buf_b[..m2 as usize]);
        encode_into(tx2.iter().copied(), &h2, &s2, a2);
        encode_into(ty2.iter().copied(), &h2, &s2, b2);
        hashed.push(first + dot(a2, b2));
    }

    Ok(MonteCarloMoments {
        unified: unified.estimate(),
        hashed: hashed.estimate(),
        degenerate: trials == 1,
    })
}
