use std::fs::File;

use crate::hashing::TokenId;

use super::{
    avazu_hour, binarize_rating, transform_continuous, DataError, DatasetSpec, Examples,
    MalformedPolicy, Recipe, Vocabulary, VocabularyBuilder,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub vocab: Vocabulary,
    pub examples: Examples,
    pub skipped: Vec<MalformedRow>,
}

struct Columns {
    label: usize,
    categorical: Vec<usize>,
    continuous: Vec<usize>,
    /// Position of `hour` among the categorical columns (Avazu only).
    hour: Option<usize>,
    width: usize,
}

struct Row {
    tokens: Vec<String>,
    continuous: Vec<f64>,
    label: u8,
}

fn reader(spec: &DatasetSpec) -> Result<csv::Reader<File>, DataError> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(spec.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_path(&spec.path)?)
}

fn resolve(spec: &DatasetSpec, headers: &csv::StringRecord) -> Result<Columns, DataError> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::Spec(format!("column {name:?} not in header")))
    };
    let categorical = spec
        .categorical
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>, _>>()?;
    let hour = (spec.recipe == Recipe::AvazuLike)
        .then(|| spec.categorical.iter().position(|c| c == "hour"))
        .flatten();
    Ok(Columns {
        label: find(&spec.label)?,
        categorical,
        continuous: spec
            .continuous
            .iter()
            .map(|c| find(c))
            .collect::<Result<Vec<_>, _>>()?,
        hour,
        width: headers.len(),
    })
}

fn parse_row(record: &csv::StringRecord, cols: &Columns, recipe: Recipe) -> Result<Row, String> {
    if record.len() != cols.width {
        return Err(format!(
            "{} fields, header has {}",
            record.len(),
            cols.width
        ));
    }
    let raw_label = record[cols.label].trim();
    let value: f64 = raw_label
        .parse()
        .map_err(|_| format!("label {raw_label:?} is not numeric"))?;
    let label = match recipe {
        Recipe::MovielensLike if value.is_finite() => binarize_rating(value),
        _ if value == 0.0 => 0,
        _ if value == 1.0 => 1,
        _ => return Err(format!("label {raw_label:?} is not binary")),
    };
    let mut tokens: Vec<String> = cols
        .categorical
        .iter()
        .map(|&c| record[c].trim().to_string())
        .collect();
    if let Some(h) = cols.hour {
        let hour: u64 = tokens[h]
            .parse()
            .map_err(|_| format!("hour {:?} is not an integer", tokens[h]))?;
        tokens[h] = avazu_hour(hour).to_string();
    }
    let mut continuous = Vec::with_capacity(cols.continuous.len());
    for &c in &cols.continuous {
        let s = record[c].trim();
        let v = if s.is_empty() {
            None
        } else {
            Some(
                s.parse::<f64>()
                    .map_err(|_| format!("value {s:?} is not numeric"))?,
            )
        };
        continuous.push(transform_continuous(v, recipe));
    }
    Ok(Row {
        tokens,
        continuous,
        label,
    })
}

/// Visits every well-formed row; malformed ones are collected or abort.
fn scan(
    spec: &DatasetSpec,
    mut visit: impl FnMut(Row) -> Result<(), DataError>,
) -> Result<Vec<MalformedRow>, DataError> {
    let mut rdr = reader(spec)?;
    let cols = resolve(spec, &rdr.headers()?.clone())?;
    let mut skipped = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        let read = match rdr.read_record(&mut record) {
            Ok(more) => more,
            Err(e) => {
                let bad = MalformedRow {
                    line,
                    reason: e.to_string(),
                };
                if spec.on_malformed == MalformedPolicy::Abort {
                    return Err(DataError::Malformed {
                        line: bad.line,
                        reason: bad.reason,
                    });
                }
                skipped.push(bad);
                continue;
            }
        };
        if !read {
            break;
        }
        let line = record.position().map_or(line, |p| p.line());
        match parse_row(&record, &cols, spec.recipe) {
            Ok(row) => visit(row)?,
            Err(reason) if spec.on_malformed == MalformedPolicy::Skip => {
                skipped.push(MalformedRow { line, reason })
            }
            Err(reason) => return Err(DataError::Malformed { line, reason }),
        }
    }
    Ok(skipped)
}

/// Two passes: token frequencies, then encoding against the frozen and
/// pruned vocabulary.
pub fn ingest(spec: &DatasetSpec) -> Result<Ingested, DataError> {
    spec.validate()?;
    let mut builder = VocabularyBuilder::new(spec.categorical.clone());
    let skipped = scan(spec, |row| {
        let refs: Vec<&str> = row.tokens.iter().map(String::as_str).collect();
        builder.observe(&refs);
        Ok(())
    })?;
    let mut vocab = builder.finish();
    for (name, target) in &spec.prune {
        let index = spec
            .categorical
            .iter()
            .position(|c| c == name)
            .expect("validated");
        vocab.prune_feature(index, *target)?;
    }
    let (examples, _) = encode(spec, &vocab)?;
    Ok(Ingested {
        vocab,
        examples,
        skipped,
    })
}

/// Encodes a file against an existing vocabulary; unseen tokens get the
/// feature's OOV id.
pub fn encode(
    spec: &DatasetSpec,
    vocab: &Vocabulary,
) -> Result<(Examples, Vec<MalformedRow>), DataError> {
    spec.validate()?;
    if vocab.num_features() != spec.categorical.len() {
        return Err(DataError::Spec(format!(
            "vocabulary has {} features, spec {}",
            vocab.num_features(),
            spec.categorical.len()
        )));
    }
    let mut examples = Examples::with_continuous(spec.categorical.len(), spec.continuous.len());
    let mut ids: Vec<TokenId> = Vec::with_capacity(spec.categorical.len());
    let skipped = scan(spec, |row| {
        let refs: Vec<&str> = row.tokens.iter().map(String::as_str).collect();
        vocab.encode_row(&refs, &mut ids);
        examples.push_with_continuous(&ids, &row.continuous, row.label)
    })?;
    Ok((examples, skipped))
}
