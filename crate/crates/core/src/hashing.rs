//! Seeded bucket and sign hash families.
//!
//! Every hash here is a degree-3 polynomial over the Mersenne field
//! `GF(2^61 - 1)` whose coefficients are expanded from a 64-bit seed. For a
//! uniformly drawn seed the family is 4-wise independent on keys below the
//! field prime, which is strictly stronger than the 2-universality the
//! embedding schemes need and is exactly what the feature-hashing variance
//! formulas in [`crate::sketch`] assume.
//!
//! Keys are reduced modulo the prime first, so two tokens that differ by a
//! multiple of `2^61 - 1` always collide. Token ids produced by
//! [`crate::data`] are dense and never get near that range.

use thiserror::Error;

/// Integer-coded categorical value.
pub type TokenId = u64;

const PRIME: u64 = (1 << 61) - 1;
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HashError {
    #[error("bucket hash modulus must be at least 1")]
    ZeroModulus,
    #[error("feature seeds require at least one feature")]
    NoFeatures,
}

/// SplitMix64 finalizer. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed number `index` of `parent`.
///
/// For a fixed parent, distinct indices always give distinct children.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(parent.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

#[inline]
fn reduce(x: u128) -> u64 {
    // x < 2^122 for products of two field elements plus a field element.
    let lo = (x as u64) & PRIME;
    let hi = (x >> 61) as u64;
    let mut r = lo + (hi & PRIME) + (hi >> 61);
    while r >= PRIME {
        r -= PRIME;
    }
    r
}

#[inline]
fn mul_add(a: u64, b: u64, c: u64) -> u64 {
    reduce(a as u128 * b as u128 + c as u128)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HashKind {
    Bucket,
    Sign,
}

/// A seeded member of the bucket or sign family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashSpec {
    seed: u64,
    modulus: u64,
    kind: HashKind,
    coeffs: [u64; 4],
}

impl HashSpec {
    /// Bucket hash into `[0, modulus)`.
    pub fn bucket(seed: u64, modulus: u64) -> Result<Self, HashError> {
        if modulus == 0 {
            return Err(HashError::ZeroModulus);
        }
        Ok(Self::new(seed, modulus, HashKind::Bucket))
    }

    /// Sign hash into `{-1, +1}`.
    pub fn sign(seed: u64) -> Self {
        Self::new(seed, 2, HashKind::Sign)
    }

    fn new(seed: u64, modulus: u64, kind: HashKind) -> Self {
        let mut coeffs = [0u64; 4];
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c = derive_seed(seed, i as u64) % PRIME;
        }
        Self {
            seed,
            modulus,
            kind,
            coeffs,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn kind(&self) -> HashKind {
        self.kind
    }

    /// Raw field value of the polynomial, uniform on `[0, 2^61 - 1)`.
    #[inline]
    fn eval(&self, token: TokenId) -> u64 {
        let x = reduce(token as u128);
        let [c0, c1, c2, c3] = self.coeffs;
        mul_add(mul_add(mul_add(c3, x, c2), x, c1), x, c0)
    }

    /// Bucket index in `[0, modulus)`.
    #[inline]
    pub fn bucket_of(&self, token: TokenId) -> u64 {
        debug_assert_eq!(self.kind, HashKind::Bucket);
        ((self.eval(token) as u128 * self.modulus as u128) >> 61) as u64
    }

    /// `-1` or `+1` from the low bit of the field value.
    #[inline]
    pub fn sign_of(&self, token: TokenId) -> i8 {
        debug_assert_eq!(self.kind, HashKind::Sign);
        if self.eval(token) & 1 == 1 {
            1
        } else {
            -1
        }
    }
}

pub fn hash_bucket(spec: &HashSpec, token: TokenId) -> u64 {
    spec.bucket_of(token)
}

pub fn hash_sign(spec: &HashSpec, token: TokenId) -> i8 {
    spec.sign_of(token)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPair {
    pub bucket: u64,
    pub sign: u64,
}

/// Per-feature seed pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSeeds {
    pairs: Vec<SeedPair>,
    shared: bool,
}

impl FeatureSeeds {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn shared(&self) -> bool {
        self.shared
    }

    pub fn get(&self, feature: usize) -> SeedPair {
        self.pairs[feature]
    }

    pub fn pairs(&self) -> &[SeedPair] {
        &self.pairs
    }
}

/// Counter-based seeds for `features` features.
///
/// With `shared = true` every feature uses the seed pair of feature 0, i.e.
/// the same hash function.
pub fn derive_feature_seeds(
    master_seed: u64,
    features: usize,
    shared: bool,
) -> Result<FeatureSeeds, HashError> {
    if features == 0 {
        return Err(HashError::NoFeatures);
    }
    let pair = |t: u64| SeedPair {
        bucket: derive_seed(master_seed, 2 * t),
        sign: derive_seed(master_seed, 2 * t + 1),
    };
    let pairs = (0..features as u64)
        .map(|t| if shared { pair(0) } else { pair(t) })
        .collect();
    Ok(FeatureSeeds { pairs, shared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn single_bucket_is_always_zero() {
        let h = HashSpec::bucket(17, 1).unwrap();
        for t in [0, 1, 99, u64::MAX] {
            assert_eq!(hash_bucket(&h, t), 0);
        }
    }

    #[test]
    fn zero_modulus_rejected() {
        assert_eq!(HashSpec::bucket(1, 0), Err(HashError::ZeroModulus));
    }

    #[test]
    fn deterministic() {
        let h = HashSpec::bucket(42, 1000).unwrap();
        let s = HashSpec::sign(43);
        for t in 0..100 {
            assert_eq!(hash_bucket(&h, t), hash_bucket(&h, t));
            assert_eq!(hash_sign(&s, t), hash_sign(&s, t));
            assert!(hash_bucket(&h, t) < 1000);
            assert!(matches!(hash_sign(&s, t), -1 | 1));
        }
    }

    #[test]
    fn chi_square_uniformity_consecutive_tokens() {
        let m = 16u64;
        let n = 100_000u64;
        let h = HashSpec::bucket(0xdead_beef, m).unwrap();
        let mut counts = vec![0u64; m as usize];
        for t in 0..n {
            counts[hash_bucket(&h, t) as usize] += 1;
        }
        let expected = n as f64 / m as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99.9% quantile of chi-square with 15 degrees of freedom.
        assert!(chi2 < 37.697, "chi2 = {chi2}");
    }

    #[test]
    fn sign_mean_is_balanced() {
        let n = 100_000u64;
        let s = HashSpec::sign(7);
        let sum: i64 = (0..n).map(|t| hash_sign(&s, t) as i64).sum();
        let mean = sum as f64 / n as f64;
        assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "mean = {mean}");
    }

    #[test]
    fn pairwise_collision_rate_matches_one_over_m() {
        let m = 8u64;
        let trials = 20_000u64;
        let (u, w) = (12_345u64, 12_346u64);
        let hits = (0..trials)
            .filter(|&s| {
                let h = HashSpec::bucket(derive_seed(99, s), m).unwrap();
                hash_bucket(&h, u) == hash_bucket(&h, w)
            })
            .count() as f64;
        let p = 1.0 / m as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((hits / trials as f64 - p).abs() <= 3.0 * se);
    }

    #[test]
    fn sign_probability_over_seeds() {
        let trials = 20_000u64;
        let plus = (0..trials)
            .filter(|&s| hash_sign(&HashSpec::sign(derive_seed(5, s)), 31) == 1)
            .count() as f64;
        let se = (0.25 / trials as f64).sqrt();
        assert!((plus / trials as f64 - 0.5).abs() <= 3.0 * se);
    }

    #[test]
    fn collisions_independent_across_features() {
        let m = 4u64;
        let trials = 20_000u64;
        let (u, w) = (3u64, 1_000u64);
        let (mut a, mut b, mut ab) = (0.0, 0.0, 0.0);
        for s in 0..trials {
            let seeds = derive_feature_seeds(s, 2, false).unwrap();
            let h1 = HashSpec::bucket(seeds.get(0).bucket, m).unwrap();
            let h2 = HashSpec::bucket(seeds.get(1).bucket, m).unwrap();
            let c1 = (h1.bucket_of(u) == h1.bucket_of(w)) as u8 as f64;
            let c2 = (h2.bucket_of(u) == h2.bucket_of(w)) as u8 as f64;
            a += c1;
            b += c2;
            ab += c1 * c2;
        }
        let n = trials as f64;
        let joint = ab / n;
        let product = (a / n) * (b / n);
        let se = (product * (1.0 - product) / n).sqrt();
        assert!((joint - product).abs() <= 3.0 * se, "{joint} vs {product}");
    }

    #[test]
    fn feature_seed_derivation() {
        assert_eq!(derive_feature_seeds(1, 1, false).unwrap().len(), 1);
        let shared = derive_feature_seeds(1, 3, true).unwrap();
        assert!(shared.shared());
        assert!(shared.pairs().iter().all(|p| *p == shared.get(0)));
        let distinct = derive_feature_seeds(1, 100, false).unwrap();
        let set: HashSet<u64> = distinct.pairs().iter().map(|p| p.bucket).collect();
        assert_eq!(set.len(), 100);
        assert_eq!(
            derive_feature_seeds(1, 0, false),
            Err(HashError::NoFeatures)
        );
        assert_eq!(
            derive_feature_seeds(77, 5, false),
            derive_feature_seeds(77, 5, false)
        );
    }

    #[test]
    fn reduce_handles_edges() {
        assert_eq!(reduce(PRIME as u128), 0);
        assert_eq!(reduce(u64::MAX as u128), u64::MAX % PRIME);
        let big = (PRIME - 1) as u128 * (PRIME - 1) as u128 + (PRIME - 1) as u128;
        assert_eq!(reduce(big) as u128, big % PRIME as u128);
    }
}
