use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::hashing::TokenId;

use super::{binarize_rating, DataError, Examples, Ingested, MalformedRow, VocabularyBuilder};

/// Feature columns, in encoding order.
pub const MOVIELENS_FEATURES: [&str; 6] = [
    "userId",
    "movieId",
    "zipcode",
    "age",
    "occupation",
    "gender",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct UserAttrs {
    pub zip: String,
    pub age: String,
    pub occupation: String,
    pub gender: String,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Rating {
    pub user: String,
    pub movie: String,
    pub rating: f64,
    pub line: u64,
}

/// Loads MovieLens-100k (`u.data`, `u.user`) or MovieLens-1M
/// (`ratings.dat`, `users.dat`) from `dir`, whichever is present.
pub fn load_movielens(dir: &Path) -> Result<Ingested, DataError> {
    let (ratings, users) = if dir.join("u.data").exists() {
        (
            read_split(&dir.join("u.data"), "\t", 4)?,
            read_split(&dir.join("u.user"), "|", 5)?,
        )
    } else if dir.join("ratings.dat").exists() {
        (
            read_split(&dir.join("ratings.dat"), "::", 4)?,
            read_split(&dir.join("users.dat"), "::", 5)?,
        )
    } else {
        return Err(DataError::Spec(format!(
            "no MovieLens ratings under {}",
            dir.display()
        )));
    };
    let hundred_k = dir.join("u.data").exists();
    let mut attrs = HashMap::new();
    for (_, f) in users {
        // 100k: id|age|gender|occupation|zip; 1M: id::gender::age::occupation::zip
        let (age, gender) = if hundred_k {
            (&f[1], &f[2])
        } else {
            (&f[2], &f[1])
        };
        attrs.insert(
            f[0].clone(),
            UserAttrs {
                zip: f[4].clone(),
                age: age.clone(),
                occupation: f[3].clone(),
                gender: gender.clone(),
            },
        );
    }
    let mut parsed = Vec::with_capacity(ratings.len());
    let mut skipped = Vec::new();
    for (line, f) in ratings {
        match f[2].parse::<f64>() {
            Ok(rating) if rating.is_finite() => parsed.push(Rating {
                user: f[0].clone(),
                movie: f[1].clone(),
                rating,
                line,
            }),
            _ => skipped.push(MalformedRow {
                line,
                reason: format!("rating {:?} is not numeric", f[2]),
            }),
        }
    }
    let mut out = from_ratings(&attrs, &parsed)?;
    skipped.append(&mut out.skipped);
    skipped.sort_by_key(|r| r.line);
    out.skipped = skipped;
    Ok(out)
}

fn read_split(path: &Path, sep: &str, fields: usize) -> Result<Vec<(u64, Vec<String>)>, DataError> {
    let bytes = fs::read(path)?;
    // The 1M files are Latin-1; ids and attributes are ASCII either way.
    let text = String::from_utf8_lossy(&bytes);
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<String> = line.split(sep).map(|s| s.trim().to_string()).collect();
        if parts.len() < fields {
            return Err(DataError::Malformed {
                line: i as u64 + 1,
                reason: format!(
                    "{} fields in {}, expected {fields}",
                    parts.len(),
                    path.display()
                ),
            });
        }
        rows.push((i as u64 + 1, parts));
    }
    Ok(rows)
}

pub(crate) fn from_ratings(
    users: &HashMap<String, UserAttrs>,
    ratings: &[Rating],
) -> Result<Ingested, DataError> {
    let mut skipped = Vec::new();
    let mut rows: Vec<([&str; 6], u8)> = Vec::with_capacity(ratings.len());
    for r in ratings {
        let Some(u) = users.get(&r.user) else {
            skipped.push(MalformedRow {
                line: r.line,
                reason: format!("user {:?} has no attributes", r.user),
            });
            continue;
        };
        rows.push((
            [&r.user, &r.movie, &u.zip, &u.age, &u.occupation, &u.gender],
            binarize_rating(r.rating),
        ));
    }
    let mut builder =
        VocabularyBuilder::new(MOVIELENS_FEATURES.iter().map(|s| s.to_string()).collect());
    for (tokens, _) in &rows {
        builder.observe(tokens);
    }
    let vocab = builder.finish();
    let mut examples = Examples::new(MOVIELENS_FEATURES.len());
    let mut ids: Vec<TokenId> = Vec::with_capacity(MOVIELENS_FEATURES.len());
    for (tokens, label) in &rows {
        vocab.encode_row(tokens, &mut ids);
        examples.push(&ids, *label)?;
    }
    Ok(Ingested {
        vocab,
        examples,
        skipped,
    })
}
