use std::collections::HashMap;
use std::fs;

use proptest::prelude::*;

use super::*;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn counts(pairs: &[(&str, u64)]) -> HashMap<String, u64> {
    pairs.iter().map(|&(t, f)| (t.to_string(), f)).collect()
}

#[test]
fn toy_csv_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "toy.csv", "y,a,b\n1,x,p\n0,y,p\n1,x,q\n");
    let spec = DatasetSpec::new(&path, "y", &["a", "b"]);
    let out = ingest(&spec).unwrap();
    assert_eq!(out.examples.len(), 3);
    assert!(out.vocab.features.iter().all(|v| v.len() <= 3));
    assert_eq!(out.examples.labels(), &[1, 0, 1]);
    // x (2) before y (1); p (2) before q (1).
    assert_eq!(out.examples.tokens(0), &[0, 0]);
    assert_eq!(out.examples.tokens(1), &[1, 0]);
    assert_eq!(out.examples.tokens(2), &[0, 1]);
    assert_eq!(out.vocab.cardinalities(), vec![3, 3]);
}

#[test]
fn unseen_tokens_map_to_oov() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(&dir, "train.csv", "y,a\n1,x\n0,y\n");
    let eval = write(&dir, "eval.csv", "y,a\n1,z\n0,x\n");
    let vocab = ingest(&DatasetSpec::new(&train, "y", &["a"]))
        .unwrap()
        .vocab;
    let (ex, _) = encode(&DatasetSpec::new(&eval, "y", &["a"]), &vocab).unwrap();
    assert_eq!(ex.tokens(0), &[2]);
    assert_eq!(ex.tokens(1), &[0]);
    assert_eq!(vocab.features[0].len(), 2);
}

#[test]
fn reingest_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("y,a,b,c\n");
    for i in 0..200u64 {
        let h = crate::hashing::mix64(i);
        text.push_str(&format!(
            "{},t{},u{},{}\n",
            h % 2,
            h % 17,
            (h >> 8) % 5,
            (h >> 16) % 100
        ));
    }
    let path = write(&dir, "d.csv", &text);
    let mut spec = DatasetSpec::new(&path, "y", &["a", "b"]);
    spec.continuous = vec!["c".into()];
    spec.recipe = Recipe::CriteoLike;
    let a = ingest(&spec).unwrap();
    let b = ingest(&spec).unwrap();
    assert_eq!(a.examples, b.examples);
    assert_eq!(a.vocab, b.vocab);
    assert_eq!(a.examples.num_continuous(), 1);
}

#[test]
fn malformed_rows_skip_or_abort() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "bad.csv", "y,a\n1,x\n2,y\n0\n1,z\n");
    let mut spec = DatasetSpec::new(&path, "y", &["a"]);
    match ingest(&spec) {
        Err(DataError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected abort, got {other:?}"),
    }
    spec.on_malformed = MalformedPolicy::Skip;
    let out = ingest(&spec).unwrap();
    assert_eq!(out.examples.len(), 2);
    let lines: Vec<u64> = out.skipped.iter().map(|r| r.line).collect();
    assert_eq!(lines, vec![3, 4]);
}

#[test]
fn missing_column_is_a_spec_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "d.csv", "y,a\n1,x\n");
    assert!(matches!(
        ingest(&DatasetSpec::new(&path, "y", &["nope"])),
        Err(DataError::Spec(_))
    ));
    assert!(matches!(
        ingest(&DatasetSpec::new(&path, "y", &["a", "a"])),
        Err(DataError::Spec(_))
    ));
}

#[test]
fn movielens_like_labels_are_binarized_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "r.csv", "rating,user\n3,a\n2.5,b\n5,a\n1,c\n");
    let mut spec = DatasetSpec::new(&path, "rating", &["user"]);
    spec.recipe = Recipe::MovielensLike;
    assert_eq!(ingest(&spec).unwrap().examples.labels(), &[1, 0, 1, 0]);
}

#[test]
fn avazu_hour_column() {
    assert_eq!(avazu_hour(14102100), 0);
    assert_eq!(avazu_hour(14102123), 23);
    assert_eq!(avazu_hour(30), 6);
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "a.csv", "click,hour,C1\n1,14102105,a\n0,14102205,b\n");
    let mut spec = DatasetSpec::new(&path, "click", &["hour", "C1"]);
    spec.recipe = Recipe::AvazuLike;
    let out = ingest(&spec).unwrap();
    assert_eq!(out.vocab.features[0].len(), 1);
    assert_eq!(out.vocab.features[0].get("5"), Some(0));
}

#[test]
fn binarize_threshold() {
    assert_eq!(binarize_rating(3.0), 1);
    assert_eq!(binarize_rating(5.0), 1);
    assert_eq!(binarize_rating(2.5), 0);
}

#[test]
fn prune_examples() {
    let v = FeatureVocab::from_counts(counts(&[("a", 5), ("b", 3), ("c", 1), ("d", 1)]));
    let (same, remap) = v.prune(4).unwrap();
    assert_eq!(same, v);
    assert_eq!(remap, vec![0, 1, 2, 3]);

    let (p, remap) = v.prune(3).unwrap();
    assert_eq!(p.len(), 3);
    assert_eq!((p.id("a"), p.id("b")), (0, 1));
    assert_eq!(p.id("c"), p.id("d"));
    assert_eq!(p.id("c"), 2);
    assert_eq!(p.frequency(2), 2);
    assert_eq!(remap, vec![0, 1, 2, 2]);
    assert_eq!(p.members(2), &["c".to_string(), "d".to_string()]);
    assert!(v.prune(0).is_err());
}

#[test]
fn prune_through_spec() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "d.csv", "y,a\n1,a\n1,a\n0,b\n0,c\n1,d\n");
    let mut spec = DatasetSpec::new(&path, "y", &["a"]);
    spec.prune = vec![("a".into(), 2)];
    let out = ingest(&spec).unwrap();
    assert_eq!(out.vocab.cardinalities(), vec![3]);
    let ids: Vec<u64> = (0..5).map(|i| out.examples.tokens(i)[0]).collect();
    assert_eq!(ids, vec![0, 0, 1, 1, 1]);
}

#[test]
fn vocabulary_targets() {
    let criteo: HashMap<usize, usize> = CRITEO_VOCAB_TARGETS.into_iter().collect();
    assert_eq!(criteo[&22], 3);
    assert_eq!(criteo[&19], 13);
    let avazu: HashMap<&str, usize> = AVAZU_VOCAB_TARGETS.into_iter().collect();
    assert_eq!(avazu["hour"], 24);
    assert!(!avazu.contains_key("id"));
}

#[test]
fn ties_broken_by_token_order() {
    let v = FeatureVocab::from_counts(counts(&[("zeta", 2), ("alpha", 2), ("mid", 7)]));
    assert_eq!((v.id("mid"), v.id("alpha"), v.id("zeta")), (0, 1, 2));
    assert_eq!(v.id("never"), 3);
}

proptest! {
    #[test]
    fn prune_keeps_ids_dense_and_mass(
        freqs in proptest::collection::vec(1u64..50, 1..40),
        target_frac in 0.0f64..1.0,
    ) {
        let c: HashMap<String, u64> = freqs.iter().enumerate().map(|(i, &f)| (format!("t{i}"), f)).collect();
        let v = FeatureVocab::from_counts(c.clone());
        let target = 1 + (target_frac * v.len() as f64) as usize;
        let (p, remap) = v.prune(target).unwrap();
        prop_assert_eq!(p.len(), target.min(v.len()));
        prop_assert_eq!(p.total_frequency(), v.total_frequency());
        for token in c.keys() {
            prop_assert!((p.id(token) as usize) < p.len());
            prop_assert_eq!(p.id(token), remap[v.id(token) as usize]);
        }
        for id in 0..target.saturating_sub(1).min(v.len()) {
            prop_assert_eq!(p.members(id as u64).len(), 1);
        }
    }
}

fn numbered(n: usize) -> Examples {
    let mut ex = Examples::new(1);
    for i in 0..n {
        ex.push(&[i as u64], (i % 2) as u8).unwrap();
    }
    ex
}

#[test]
fn split_sizes_and_determinism() {
    let ex = numbered(10);
    let (train, test) = split(&ex, SplitPolicy::Shuffled90_10 { seed: 4 }).unwrap();
    assert_eq!((train.len(), test.len()), (9, 1));
    let again = split(&ex, SplitPolicy::Shuffled90_10 { seed: 4 }).unwrap();
    assert_eq!((train.clone(), test.clone()), again);
    assert!(split(&numbered(1), SplitPolicy::Shuffled90_10 { seed: 0 }).is_err());
}

#[test]
fn split_is_a_partition() {
    let ex = numbered(257);
    let (train, test) = split(
        &ex,
        SplitPolicy::Holdout {
            fraction: 0.3,
            seed: 11,
        },
    )
    .unwrap();
    let mut all: Vec<u64> = (0..train.len())
        .map(|i| train.tokens(i)[0])
        .chain((0..test.len()).map(|i| test.tokens(i)[0]))
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..257).collect::<Vec<u64>>());
    assert_eq!(test.len(), 77);
}

#[test]
fn continuous_transform() {
    assert_eq!(transform_continuous(Some(0.0), Recipe::CriteoLike), 0.0);
    assert_eq!(transform_continuous(None, Recipe::CriteoLike), 0.0);
    let e = transform_continuous(Some(std::f64::consts::E - 1.0), Recipe::CriteoLike);
    assert!((e - 1.0).abs() < 1e-15);
    assert_eq!(transform_continuous(Some(-4.0), Recipe::CriteoLike), 0.0);
    assert_eq!(transform_continuous(Some(-4.0), Recipe::Raw), -4.0);
}

#[test]
fn cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut ex = Examples::with_continuous(2, 1);
    ex.push_with_continuous(&[3, 1 << 40], &[0.25], 1).unwrap();
    ex.push_with_continuous(&[0, 7], &[-1.5], 0).unwrap();
    let meta = CacheMeta {
        feature_names: vec!["a".into(), "b".into()],
        cardinalities: vec![4, 8],
    };
    let path = dir.path().join("cache.bin");
    save_cache(&path, &ex, &meta).unwrap();
    assert!(dir.path().join("cache.bin.json").exists());
    let (back, m) = load_cache(&path).unwrap();
    assert_eq!(back, ex);
    assert_eq!(m, meta);
    fs::write(&path, [0u8; 3]).unwrap();
    assert!(matches!(load_cache(&path), Err(DataError::Cache(_))));
}

#[test]
fn movielens_100k_layout() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir,
        "u.data",
        "1\t10\t4\t881250949\n2\t10\t2\t891717742\n1\t20\t3\t878887116\n9\t20\t5\t0\n",
    );
    write(
        &dir,
        "u.user",
        "1|24|M|technician|85711\n2|53|F|other|94043\n",
    );
    let out = load_movielens(dir.path()).unwrap();
    assert_eq!(out.examples.len(), 3);
    assert_eq!(out.examples.labels(), &[1, 0, 1]);
    assert_eq!(out.skipped.len(), 1);
    assert_eq!(out.skipped[0].line, 4);
    assert_eq!(
        out.vocab.names,
        MOVIELENS_FEATURES
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
    );
    let gender = &out.vocab.features[5];
    assert_eq!(gender.id("M"), 0);
    assert_eq!(gender.len(), 2);
    let age = &out.vocab.features[3];
    assert!(age.get("24").is_some() && age.get("53").is_some());
}

#[test]
fn movielens_1m_layout() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir,
        "ratings.dat",
        "1::1193::5::978300760\n2::661::1::978302109\n",
    );
    write(
        &dir,
        "users.dat",
        "1::F::1::10::48067\n2::M::56::16::70072\n",
    );
    let out = load_movielens(dir.path()).unwrap();
    assert_eq!(out.examples.labels(), &[1, 0]);
    assert_eq!(
        out.vocab.features[5].members(out.examples.tokens(0)[5]),
        &["F".to_string()]
    );
    assert_eq!(
        out.vocab.features[3].members(out.examples.tokens(1)[3]),
        &["56".to_string()]
    );
    assert!(load_movielens(&dir.path().join("missing")).is_err());
}

#[test]
fn synthetic_movielens_shape() {
    let out = synthetic_movielens(1, 20_000).unwrap();
    assert_eq!(out.examples.len(), 20_000);
    assert_eq!(out.examples.num_features(), 6);
    let sizes: Vec<usize> = out.vocab.features.iter().map(FeatureVocab::len).collect();
    assert!(sizes[0] <= 943 && sizes[0] > 800);
    assert!(sizes[1] <= 1682 && sizes[1] > 1000);
    assert_eq!(sizes[5], 2);
    assert!(sizes[4] <= 21);
    let pos = out.examples.labels().iter().filter(|&&y| y == 1).count() as f64 / 20_000.0;
    assert!((0.6..0.95).contains(&pos), "positive rate {pos}");
    assert_eq!(
        synthetic_movielens(1, 500).unwrap().examples,
        synthetic_movielens(1, 500).unwrap().examples
    );
}

#[test]
fn power_law_is_skewed() {
    let ex = power_law(&PowerLawSpec {
        examples: 5000,
        ..PowerLawSpec::default()
    })
    .unwrap();
    assert_eq!(ex.num_features(), 8);
    let mut freq = vec![0usize; 2048];
    for i in 0..ex.len() {
        freq[ex.tokens(i)[0] as usize] += 1;
    }
    assert!(freq[0] > freq[10] && freq[10] > freq[1000]);
    let pos = ex.labels().iter().filter(|&&y| y == 1).count();
    assert!(pos > 1000 && pos < 4000);
}
