use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Zipf};

use crate::hashing::{derive_seed, TokenId};
use crate::nn::sigmoid;

use super::movielens::{from_ratings, Rating, UserAttrs};
use super::{DataError, Examples, Ingested};

/// Independent Zipf-distributed features with a logit-additive label.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawSpec {
    pub features: usize,
    pub vocab: usize,
    pub examples: usize,
    /// Zipf exponent of every feature.
    pub exponent: f64,
    /// Standard deviation of the per-value logit contributions.
    pub signal: f64,
    pub seed: u64,
}

impl Default for PowerLawSpec {
    fn default() -> Self {
        Self {
            features: 8,
            vocab: 2048,
            examples: 50_000,
            exponent: 1.05,
            signal: 0.6,
            seed: 0,
        }
    }
}

/// Value ids are popularity ranks, so id 0 is the most frequent.
pub fn power_law(spec: &PowerLawSpec) -> Result<Examples, DataError> {
    if spec.features == 0 || spec.vocab == 0 {
        return Err(DataError::Spec(
            "power-law data needs features and values".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x21FF));
    let normal = Normal::new(0.0, spec.signal).map_err(|e| DataError::Spec(e.to_string()))?;
    let weights: Vec<f64> = (0..spec.features * spec.vocab)
        .map(|_| normal.sample(&mut rng))
        .collect();
    let zipf =
        Zipf::new(spec.vocab as f64, spec.exponent).map_err(|e| DataError::Spec(e.to_string()))?;
    let mut out = Examples::new(spec.features);
    let mut row: Vec<TokenId> = vec![0; spec.features];
    for _ in 0..spec.examples {
        let mut logit = 0.0;
        for (t, slot) in row.iter_mut().enumerate() {
            let v = (zipf.sample(&mut rng) as usize - 1).min(spec.vocab - 1);
            *slot = v as TokenId;
            logit += weights[t * spec.vocab + v];
        }
        let y = u8::from(rng.random::<f64>() < sigmoid(logit));
        out.push(&row, y)?;
    }
    Ok(out)
}

const ML_USERS: usize = 943;
const ML_MOVIES: usize = 1682;
const ML_OCCUPATIONS: usize = 21;
const LATENT: usize = 4;

/// A stand-in with the shape of MovieLens-100k: 943 users, 1682 movies and the
/// same six features, with ratings from a latent-factor model that includes
/// user-attribute by movie interactions.
pub fn synthetic_movielens(seed: u64, ratings: usize) -> Result<Ingested, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x3713));
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let normal = |rng: &mut ChaCha8Rng, sd: f64| sd * std_normal.sample(rng);

    let occupation_weights: Vec<f64> = (1..=ML_OCCUPATIONS).map(|r| 1.0 / r as f64).collect();
    let occupation_pick = WeightedIndex::new(&occupation_weights).expect("positive weights");
    let occupation_bias: Vec<f64> = (0..ML_OCCUPATIONS)
        .map(|_| normal(&mut rng, 0.15))
        .collect();

    struct User {
        bias: f64,
        factors: [f64; LATENT],
        gender: f64,
        age_z: f64,
        occupation: usize,
    }
    let mut users = Vec::with_capacity(ML_USERS);
    let mut attrs = HashMap::new();
    for u in 0..ML_USERS {
        let male = rng.random::<f64>() < 0.71;
        let age = (33.0 + normal(&mut rng, 11.0)).round().clamp(7.0, 73.0);
        let occupation = occupation_pick.sample(&mut rng);
        let zip = format!("{:05}", rng.random_range(0..3000) * 31 + 1000);
        attrs.insert(
            (u + 1).to_string(),
            UserAttrs {
                zip,
                age: (age as u32).to_string(),
                occupation: format!("occ{occupation:02}"),
                gender: if male { "M" } else { "F" }.to_string(),
            },
        );
        let mut factors = [0.0; LATENT];
        factors.iter_mut().for_each(|f| *f = normal(&mut rng, 0.55));
        users.push(User {
            bias: normal(&mut rng, 0.45),
            factors,
            gender: if male { 1.0 } else { -1.0 },
            age_z: (age - 33.0) / 11.0,
            occupation,
        });
    }

    struct Movie {
        bias: f64,
        factors: [f64; LATENT],
        gender_tilt: f64,
        age_tilt: f64,
    }
    let movies: Vec<Movie> = (0..ML_MOVIES)
        .map(|_| {
            let mut factors = [0.0; LATENT];
            factors.iter_mut().for_each(|f| *f = normal(&mut rng, 0.55));
            Movie {
                bias: normal(&mut rng, 0.5),
                factors,
                gender_tilt: normal(&mut rng, 0.3),
                age_tilt: normal(&mut rng, 0.25),
            }
        })
        .collect();

    // Heavy-tailed user activity, Zipf movie popularity over a random order.
    let activity = LogNormal::new(0.0, 0.9).expect("valid lognormal");
    let user_weights: Vec<f64> = (0..ML_USERS).map(|_| activity.sample(&mut rng)).collect();
    let user_pick = WeightedIndex::new(&user_weights).expect("positive weights");
    let popularity = Zipf::new(ML_MOVIES as f64, 0.9).expect("valid zipf");
    let mut movie_order: Vec<usize> = (0..ML_MOVIES).collect();
    movie_order.shuffle(&mut rng);

    let mut rows = Vec::with_capacity(ratings);
    for line in 0..ratings {
        let u = user_pick.sample(&mut rng);
        let rank = (popularity.sample(&mut rng) as usize - 1).min(ML_MOVIES - 1);
        let m = movie_order[rank];
        let (user, movie) = (&users[u], &movies[m]);
        // Popular titles skew higher, as in the real data.
        let popular = 0.25 * (1.0 - (rank as f64 + 1.0).ln() / (ML_MOVIES as f64).ln());
        let affinity: f64 = user
            .factors
            .iter()
            .zip(&movie.factors)
            .map(|(a, b)| a * b)
            .sum();
        let score = 3.45
            + user.bias
            + movie.bias
            + popular
            + affinity
            + user.gender * movie.gender_tilt
            + user.age_z * movie.age_tilt
            + occupation_bias[user.occupation]
            + normal(&mut rng, 0.8);
        rows.push(Rating {
            user: (u + 1).to_string(),
            movie: (m + 1).to_string(),
            rating: score.round().clamp(1.0, 5.0),
            line: line as u64 + 1,
        });
    }
    from_ratings(&attrs, &rows)
}
