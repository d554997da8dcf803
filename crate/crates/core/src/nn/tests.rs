use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Examples;
use crate::tables::{build_scheme, SchemeConfig, SchemeKind};

fn collisionless(vocabs: &[usize], d: usize, seed: u64) -> FeatureTables {
    let cfg =
        SchemeConfig::new(SchemeKind::Collisionless, vec![d; vocabs.len()], 0).with_seed(seed);
    build_scheme(cfg, vocabs).unwrap().into()
}

fn random_examples(rng: &mut ChaCha8Rng, vocabs: &[usize], n: usize) -> Examples {
    let mut ex = Examples::new(vocabs.len());
    for i in 0..n {
        let row: Vec<u64> = vocabs
            .iter()
            .map(|&v| rng.random_range(0..v as u64))
            .collect();
        ex.push(&row, (i % 2) as u8).unwrap();
    }
    ex
}

#[test]
fn forward_examples() {
    let mut tables = collisionless(&[3, 3], 2, 1);
    let zero = Model::zeros(ModelSpec::logistic(vec![2, 2])).unwrap();
    assert_eq!(forward(&zero, &tables, &[0, 1]).unwrap().0, 0.5);

    // Embedding (1, 0 | 0, 0) and theta (ln 3, 0 | 0, 0).
    let store = tables.tables_mut()[0].store_mut().values_mut();
    store.iter_mut().for_each(|v| *v = 0.0);
    store[0] = 1.0;
    let mut m = Model::zeros(ModelSpec::logistic(vec![2, 2])).unwrap();
    m.params_mut()[0] = 3f64.ln();
    let p = forward(&m, &tables, &[0, 0]).unwrap().0;
    assert!((p - 0.75).abs() < 1e-15);

    let dcn = Model::zeros(ModelSpec::dcn_mlp(vec![2, 2], 1, vec![4])).unwrap();
    assert_eq!(forward(&dcn, &tables, &[2, 1]).unwrap().0, 0.5);
    assert!(forward(&dcn, &tables, &[2]).is_err());
}

#[test]
fn spec_validation() {
    assert!(Model::zeros(ModelSpec::dcn_mlp(vec![2], 3, vec![])).is_err());
    assert!(Model::zeros(ModelSpec::dcn_mlp(vec![2], 1, vec![0])).is_err());
    assert!(Model::zeros(ModelSpec::logistic(vec![])).is_err());
    let mut bad = ModelSpec::logistic(vec![2]);
    bad.dense = vec![3];
    assert!(Model::zeros(bad).is_err());
    let m = Model::zeros(ModelSpec::dcn_mlp(vec![3, 2], 2, vec![4, 2])).unwrap();
    assert_eq!(
        m.param_count(),
        2 * (25 + 5) + (4 * 5 + 4) + (2 * 4 + 2) + 2 + 1
    );
}

#[test]
fn cross_layer_examples() {
    let id = [1.0, 0.0, 0.0, 1.0];
    assert_eq!(
        cross_layer(&[1.0, 1.0], &[1.0, 1.0], &id, &[0.0, 0.0]).unwrap(),
        vec![2.0, 2.0]
    );
    let xl = [0.3, -2.0];
    assert_eq!(
        cross_layer(&[5.0, 7.0], &xl, &[0.0; 4], &[0.0; 2]).unwrap(),
        xl.to_vec()
    );
    assert!(cross_layer(&[1.0], &[1.0, 2.0], &id, &[0.0, 0.0]).is_err());
}

#[test]
fn cross_layer_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 5;
    let mut r = |k: usize| {
        (0..k)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect::<Vec<f64>>()
    };
    let (x0, xl, w, b, g) = (r(n), r(n), r(n * n), r(n), r(n));
    let grads = cross_layer_backward(&x0, &xl, &w, &b, &g).unwrap();
    let objective = |x0: &[f64], xl: &[f64], w: &[f64], b: &[f64]| -> f64 {
        cross_layer(x0, xl, w, b)
            .unwrap()
            .iter()
            .zip(&g)
            .map(|(a, b)| a * b)
            .sum()
    };
    let h = 1e-6;
    let check = |analytic: &[f64], which: usize| {
        for i in 0..analytic.len() {
            let mut args = [x0.clone(), xl.clone(), w.clone(), b.clone()];
            args[which][i] += h;
            let up = objective(&args[0], &args[1], &args[2], &args[3]);
            args[which][i] -= 2.0 * h;
            let down = objective(&args[0], &args[1], &args[2], &args[3]);
            let numeric = (up - down) / (2.0 * h);
            let rel =
                (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            assert!(
                rel < 1e-6,
                "arg {which} index {i}: {numeric} vs {}",
                analytic[i]
            );
        }
    };
    check(&grads.dx0, 0);
    check(&grads.dxl, 1);
    check(&grads.dw, 2);
    check(&grads.db, 3);
}

#[test]
fn bce_examples() {
    for y in [0, 1] {
        assert!((bce_loss(0.5, y) - std::f64::consts::LN_2).abs() < 1e-15);
    }
    assert!(bce_loss(1.0 - 1e-12, 1) < 1e-11);
    assert!(bce_loss(1e-12, 0) < 1e-11);
    assert!(bce_with_logit(1e6, 0).is_finite());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let z: f64 = rng.random_range(-6.0..6.0);
        let y: u8 = rng.random_range(0..2);
        let h = 1e-6;
        let numeric = (bce_with_logit(z + h, y) - bce_with_logit(z - h, y)) / (2.0 * h);
        assert!((numeric - (sigmoid(z) - y as f64)).abs() < 1e-8);
        let p = sigmoid(z);
        let direct = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
        assert!((bce_loss(p, y) - direct).abs() < 1e-9);
    }
}

#[test]
fn gradient_check_logistic_hashing_trick() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocabs = [9, 6, 11];
    let cfg = SchemeConfig::new(SchemeKind::HashingTrick, vec![3; 3], 40).with_seed(8);
    let mut tables: FeatureTables = build_scheme(cfg, &vocabs).unwrap().into();
    let mut model = Model::new(ModelSpec::logistic(vec![3; 3]), 1).unwrap();
    let batch = random_examples(&mut rng, &vocabs, 6);
    let r = full_gradient_check(&mut model, &mut tables, &batch).unwrap();
    assert!(!r.noop && r.checked == 9 + tables.param_count(), "{r:?}");
    assert!(r.max_rel_err <= 1e-4, "{r:?}");
}

#[test]
fn gradient_check_dcn_multiplexed_pq() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let vocabs = [9, 6, 11];
    let cfg = SchemeConfig::new(SchemeKind::CompPq, vec![4; 3], 80)
        .multiplexed(true)
        .with_k(2)
        .with_seed(3);
    let mut tables: FeatureTables = build_scheme(cfg, &vocabs).unwrap().into();
    let mut model = Model::new(ModelSpec::dcn_mlp(vec![4; 3], 2, vec![5, 3]), 2).unwrap();
    let batch = random_examples(&mut rng, &vocabs, 5);
    let r = full_gradient_check(&mut model, &mut tables, &batch).unwrap();
    assert!(r.max_rel_err <= 1e-4, "{r:?}");
}

#[test]
fn gradient_check_empty_batch_is_noop() {
    let mut tables = collisionless(&[3], 2, 0);
    let mut model = Model::new(ModelSpec::logistic(vec![2]), 0).unwrap();
    let r = full_gradient_check(&mut model, &mut tables, &Examples::new(1)).unwrap();
    assert!(r.noop);
    assert_eq!(r.max_rel_err, 0.0);
}

fn separable(rng: &mut ChaCha8Rng, n: usize) -> Examples {
    let a: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ex = Examples::new(2);
    for _ in 0..n {
        let (u, v) = (rng.random_range(0..10), rng.random_range(0..10));
        ex.push(&[u as u64, v as u64], u8::from(a[u] + b[v] > 0.0))
            .unwrap();
    }
    ex
}

#[test]
fn separable_data_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let train_set = separable(&mut rng, 2000);
    let mut tables = collisionless(&[10, 10], 4, 1);
    let mut model = Model::new(ModelSpec::logistic(vec![4, 4]), 1).unwrap();
    let cfg = TrainConfig {
        lr: 0.02,
        batch: 32,
        epochs: 1,
        steps_per_epoch: Some(1000),
        ..TrainConfig::default()
    };
    let out = train(&mut model, &mut tables, &train_set, &train_set, &cfg).unwrap();
    assert!(out.best.auc >= 0.99, "{:?}", out.best);
    assert_eq!(out.steps, 1000);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let data = separable(&mut rng, 300);
    let cfg = SchemeConfig::new(SchemeKind::HashEmbedding, vec![4, 4], 60).with_seed(2);
    let mut tables: FeatureTables = build_scheme(cfg, &[10, 10]).unwrap().into();
    let mut model = Model::new(ModelSpec::dcn_mlp(vec![4, 4], 1, vec![6]), 3).unwrap();
    let (before_m, before_t) = (model.clone(), tables.tables()[0].store().clone());
    let cfg = TrainConfig {
        lr: 0.0,
        batch: 16,
        epochs: 2,
        ..TrainConfig::default()
    };
    train(&mut model, &mut tables, &data, &data, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(model.params()), bits(before_m.params()));
    assert_eq!(
        bits(tables.tables()[0].store().values()),
        bits(before_t.values())
    );
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = separable(&mut rng, 400);
        let cfg = SchemeConfig::new(SchemeKind::Unified, vec![4, 4], 30).with_seed(4);
        let mut tables: FeatureTables = build_scheme(cfg, &[10, 10]).unwrap().into();
        let mut model = Model::new(ModelSpec::dcn_mlp(vec![4, 4], 1, vec![6]), 4).unwrap();
        let cfg = TrainConfig {
            lr: 0.01,
            batch: 16,
            epochs: 3,
            seed: 7,
            ..TrainConfig::default()
        };
        let out = train(&mut model, &mut tables, &data, &data, &cfg).unwrap();
        let mut csv = Vec::new();
        write_history_csv(&mut csv, &out.history).unwrap();
        (csv, model.params().to_vec())
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("step,epoch,split,metric,value\n"));
    assert_eq!(text.lines().count(), 1 + 3 * 3);
}

#[test]
fn best_epoch_is_restored() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let data = separable(&mut rng, 400);
    let mut tables = collisionless(&[10, 10], 4, 1);
    let mut model = Model::new(ModelSpec::logistic(vec![4, 4]), 1).unwrap();
    let cfg = TrainConfig {
        lr: 0.01,
        batch: 16,
        epochs: 3,
        ..TrainConfig::default()
    };
    let out = train(&mut model, &mut tables, &data, &data, &cfg).unwrap();
    let best_auc = out
        .history
        .iter()
        .filter(|r| r.split == "eval" && r.metric == "auc")
        .map(|r| r.value)
        .fold(f64::MIN, f64::max);
    assert_eq!(out.best.auc, best_auc);
    assert_eq!(evaluate(&model, &tables, &data).unwrap(), out.best);
}

#[test]
fn divergence_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data = separable(&mut rng, 100);
    let mut tables = collisionless(&[10, 10], 4, 1);
    let mut model = Model::new(ModelSpec::dcn_mlp(vec![4, 4], 2, vec![8]), 1).unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        lr: 1e200,
        batch: 8,
        epochs: 1,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(&mut model, &mut tables, &data, &data, &cfg),
        Err(TrainError::Diverged { .. })
    ));
}

#[test]
fn full_batch_descent_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = random_examples(&mut rng, &[5, 7], 40);
    let mut tables = collisionless(&[5, 7], 3, 2);
    let mut model = Model::new(ModelSpec::dcn_mlp(vec![3, 3], 1, vec![4]), 2).unwrap();
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut tape = Tape::default();
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        lr: 0.05,
        batch: data.len(),
        epochs: 1,
        steps_per_epoch: Some(1),
        ..TrainConfig::default()
    };
    let mut last = batch_loss(&model, &tables, &data, &idx, &mut tape).unwrap();
    for _ in 0..100 {
        train(&mut model, &mut tables, &data, &data, &cfg).unwrap();
        let now = batch_loss(&model, &tables, &data, &idx, &mut tape).unwrap();
        assert!(now <= last + 1e-12, "{now} > {last}");
        last = now;
    }
}

#[test]
fn feature_permutation_is_harmless() {
    let vocabs = [4, 6, 5];
    let scheme = build_scheme(
        SchemeConfig::new(SchemeKind::HashingTrick, vec![2, 3, 2], 30).with_seed(3),
        &vocabs,
    )
    .unwrap();
    let model = Model::new(ModelSpec::logistic(vec![2, 3, 2]), 5).unwrap();
    let tables: FeatureTables = scheme.clone().into();

    // Features reordered as (2, 0, 1), theta partitions likewise.
    let perm = [2usize, 0, 1];
    let permuted =
        FeatureTables::new(vec![scheme], perm.iter().map(|&t| (0, t)).collect()).unwrap();
    let mut pm = Model::zeros(ModelSpec::logistic(
        perm.iter().map(|&t| [2, 3, 2][t]).collect(),
    ))
    .unwrap();
    let parts = model.theta_partitions().unwrap();
    let reordered: Vec<f64> = perm.iter().flat_map(|&t| parts[t].to_vec()).collect();
    pm.params_mut().copy_from_slice(&reordered);

    for row in [[0u64, 1, 2], [3, 5, 4], [1, 0, 0]] {
        let p = forward(&model, &tables, &row).unwrap().0;
        let prow: Vec<u64> = perm.iter().map(|&t| row[t]).collect();
        assert_eq!(p, forward(&pm, &permuted, &prow).unwrap().0);
    }
}

#[test]
fn route_validation() {
    let s = build_scheme(
        SchemeConfig::new(SchemeKind::Collisionless, vec![2, 2], 0),
        &[3, 3],
    )
    .unwrap();
    assert!(FeatureTables::new(vec![s.clone()], vec![(0, 0), (0, 0)]).is_err());
    assert!(FeatureTables::new(vec![s], vec![(1, 0)]).is_err());
}

#[test]
fn align_theta_sets_every_partition() {
    let mut m = Model::new(ModelSpec::logistic(vec![3, 3, 3]), 0).unwrap();
    m.align_theta(&[1.0, 2.0, 3.0]).unwrap();
    assert!(m
        .theta_partitions()
        .unwrap()
        .iter()
        .all(|p| *p == [1.0, 2.0, 3.0]));
    assert!(m.align_theta(&[1.0]).is_err());
}
