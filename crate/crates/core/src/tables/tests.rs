use super::*;
use proptest::prelude::*;

fn scheme(cfg: SchemeConfig, vocabs: &[usize]) -> EmbeddingScheme {
    build_scheme(cfg, vocabs).unwrap()
}

/// Small config of every kind, optionally multiplexed.
pub(crate) fn sample_config(kind: SchemeKind, multiplexed: bool, seed: u64) -> SchemeConfig {
    let dims = if kind == SchemeKind::MultisizeUnified {
        vec![4, 8, 4]
    } else {
        vec![4, 4, 4]
    };
    let mut cfg = SchemeConfig::new(kind, dims, 160)
        .multiplexed(multiplexed || kind.always_multiplexed())
        .with_seed(seed);
    match kind {
        SchemeKind::HashEmbedding => cfg = cfg.with_k(3).with_importance_fraction(0.2),
        SchemeKind::RobeZ => cfg = cfg.with_block(2),
        SchemeKind::CompQr => cfg = cfg.with_k(3),
        SchemeKind::CompPq => cfg = cfg.with_k(2),
        SchemeKind::MultisizeUnified => cfg = cfg.with_table_dim(4),
        _ => {}
    }
    cfg
}

#[test]
fn proportional_rows_for_hashing_trick() {
    let d = 4;
    let s = scheme(
        SchemeConfig::new(SchemeKind::HashingTrick, vec![d, d], 100 * d),
        &[10, 90],
    );
    let rows: Vec<usize> = s.store().regions().iter().map(Region::rows).collect();
    assert_eq!(rows, vec![10, 90]);
    assert_eq!(s.allocation(), &[10 * d, 90 * d]);
}

#[test]
fn unified_single_shared_region() {
    let d = 4;
    let s = scheme(
        SchemeConfig::new(SchemeKind::Unified, vec![d, d, d], 100 * d),
        &[10, 90, 7],
    );
    assert_eq!(s.store().regions().len(), 1);
    assert_eq!(s.store().region(0).rows(), 100);
    assert!(s.allocation().is_empty());
}

#[test]
fn collisionless_sized_by_vocab() {
    let s = scheme(
        SchemeConfig::new(SchemeKind::Collisionless, vec![3, 3], 0),
        &[5, 7],
    );
    assert_eq!(s.store().len(), 36);
    assert_eq!(s.param_count(), 36);
    assert_eq!(s.config().budget, 36);
    assert!(matches!(
        s.lookup(0, 5),
        Err(TableError::TokenOutOfRange {
            feature: 0,
            token: 5,
            rows: 5
        })
    ));
}

#[test]
fn build_errors() {
    let tiny = SchemeConfig::new(SchemeKind::HashingTrick, vec![8, 8], 8);
    assert!(matches!(
        build_scheme(tiny, &[3, 3]),
        Err(TableError::BudgetTooSmall { .. })
    ));
    let pq = SchemeConfig::new(SchemeKind::CompPq, vec![6], 100).with_k(4);
    assert!(matches!(
        build_scheme(pq, &[3]),
        Err(TableError::Divisibility { .. })
    ));
    let robe = SchemeConfig::new(SchemeKind::RobeZ, vec![6], 100).with_block(4);
    assert!(matches!(
        build_scheme(robe, &[3]),
        Err(TableError::Divisibility { .. })
    ));
    let dims = SchemeConfig::new(SchemeKind::HashingTrick, vec![4], 100);
    assert!(build_scheme(dims, &[3, 3]).is_err());
    let s = scheme(SchemeConfig::new(SchemeKind::Unified, vec![2], 10), &[4]);
    assert!(matches!(
        s.lookup(1, 0),
        Err(TableError::FeatureOutOfRange { .. })
    ));
}

#[test]
fn same_token_two_features_unified_rows_differ() {
    let m = 8u64;
    let trials = 20_000u64;
    let same = (0..trials)
        .filter(|&seed| {
            let s = scheme(
                SchemeConfig::new(SchemeKind::Unified, vec![1, 1], m as usize).with_seed(seed),
                &[10, 10],
            );
            s.lookup(0, 3).unwrap().1.offsets == s.lookup(1, 3).unwrap().1.offsets
        })
        .count() as f64;
    let p = 1.0 / m as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((same / trials as f64 - p).abs() <= 3.0 * se);
}

#[test]
fn shared_seed_maps_same_token_to_same_row() {
    let s = scheme(
        SchemeConfig::new(SchemeKind::Unified, vec![2, 2], 200).with_shared_seed(true),
        &[10, 10],
    );
    for v in 0..10 {
        assert_eq!(s.lookup(0, v).unwrap(), {
            let (e, mut t) = s.lookup(1, v).unwrap();
            t.feature = 0;
            (e, t)
        });
    }
}

#[test]
fn pq_concatenates_chunks() {
    let s = scheme(
        SchemeConfig::new(SchemeKind::CompPq, vec![4], 40).with_k(2),
        &[50],
    );
    let (e, t) = s.lookup(0, 17).unwrap();
    assert_eq!(e.len(), 4);
    assert_eq!(t.offsets.len(), 4);
    let sub0 = s.store().region(0);
    let sub1 = s.store().region(1);
    assert_eq!((sub0.row_width, sub1.row_width), (2, 2));
    assert!(sub0.contains(t.offsets[0]) && sub0.contains(t.offsets[1]));
    assert!(sub1.contains(t.offsets[2]) && sub1.contains(t.offsets[3]));
    assert_eq!(t.offsets[1], t.offsets[0] + 1);
    let v = s.store().values();
    assert_eq!(e, t.offsets.iter().map(|&o| v[o]).collect::<Vec<_>>());
}

#[test]
fn qr_zeroed_component_annihilates() {
    let mut s = scheme(
        SchemeConfig::new(SchemeKind::CompQr, vec![4], 80).with_k(2),
        &[50],
    );
    s.store_mut()
        .region_values_mut(1)
        .iter_mut()
        .for_each(|v| *v = 0.0);
    for value in 0..50 {
        assert!(s.lookup(0, value).unwrap().0.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn hash_embedding_importance_region() {
    let budget = 1000;
    let cfg = SchemeConfig::new(SchemeKind::HashEmbedding, vec![8], budget)
        .with_k(2)
        .with_importance_fraction(0.2);
    let s = scheme(cfg, &[300]);
    let imp = s.store().region_by_name("f0/importance").unwrap();
    assert_eq!(imp.len, 200);
    assert_eq!(imp.row_width, 2);
    let emb = s.store().region_by_name("f0/emb").unwrap();
    assert_eq!(emb.len, 800);
    assert!(s.param_count() <= budget);
    assert!(s.store().region_values(1).iter().all(|&w| w == 0.5));
}

#[test]
fn colliding_values_sum_gradients() {
    let s = scheme(
        SchemeConfig::new(SchemeKind::HashingTrick, vec![3], 3),
        &[20],
    );
    let (_, ta) = s.lookup(0, 1).unwrap();
    let (_, tb) = s.lookup(0, 2).unwrap();
    assert_eq!(ta.offsets, tb.offsets);
    let mut grad = vec![0.0; s.param_count()];
    s.grad_accumulate(&ta, &[1.0, 2.0, 3.0], &mut grad).unwrap();
    s.grad_accumulate(&tb, &[0.5, 0.5, 0.5], &mut grad).unwrap();
    assert_eq!(grad, vec![1.5, 2.5, 3.5]);
}

#[test]
fn hash_embedding_weight_gradient_is_inner_product() {
    let cfg = SchemeConfig::new(SchemeKind::HashEmbedding, vec![4], 200)
        .with_k(2)
        .with_importance_fraction(0.1);
    let s = scheme(cfg, &[40]);
    let (_, t) = s.lookup(0, 9).unwrap();
    let up = [0.3, -1.0, 2.0, 0.25];
    let mut grad = vec![0.0; s.param_count()];
    s.grad_accumulate(&t, &up, &mut grad).unwrap();
    let v = s.store().values();
    for i in 0..2 {
        let row = &t.offsets[i * 4..(i + 1) * 4];
        let expected: f64 = row.iter().zip(&up).map(|(&o, g)| v[o] * g).sum();
        assert!((grad[t.weight_offsets[i]] - expected).abs() < 1e-14);
    }
}

#[test]
fn trace_mismatch_detected() {
    let s = scheme(
        SchemeConfig::new(SchemeKind::HashingTrick, vec![3], 30),
        &[20],
    );
    let (_, t) = s.lookup(0, 1).unwrap();
    let mut grad = vec![0.0; s.param_count()];
    assert!(s.grad_accumulate(&t, &[1.0; 2], &mut grad).is_err());
    let mut bad = t.clone();
    bad.feature = 4;
    assert!(s.grad_accumulate(&bad, &[1.0; 3], &mut grad).is_err());
    let mut short = t;
    short.offsets.pop();
    assert!(s.grad_accumulate(&short, &[1.0; 3], &mut grad).is_err());
}

/// Central-difference check of `grad_accumulate` for a quadratic loss
/// `0.5 * |lookup(v) - target|^2`, over every store entry.
fn fd_adjoint_error(s: &mut EmbeddingScheme, feature: usize, value: u64) -> f64 {
    let d = s.dim(feature);
    let target: Vec<f64> = (0..d).map(|j| 0.1 * j as f64 - 0.2).collect();
    let loss = |s: &EmbeddingScheme| {
        let (e, _) = s.lookup(feature, value).unwrap();
        0.5 * e
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
    };
    let (e, trace) = s.lookup(feature, value).unwrap();
    let up: Vec<f64> = e.iter().zip(&target).map(|(a, b)| a - b).collect();
    let mut grad = vec![0.0; s.param_count()];
    s.grad_accumulate(&trace, &up, &mut grad).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..s.param_count() {
        let orig = s.store().values()[i];
        s.store_mut().values_mut()[i] = orig + h;
        let plus = loss(s);
        s.store_mut().values_mut()[i] = orig - h;
        let minus = loss(s);
        s.store_mut().values_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn adjoint_matches_finite_differences_for_every_kind() {
    for kind in SchemeKind::ALL {
        for multiplexed in [false, true] {
            let mut s = scheme(sample_config(kind, multiplexed, 5), &[7, 9, 5]);
            for feature in 0..3 {
                for value in [0u64, 3, 4] {
                    let err = fd_adjoint_error(&mut s, feature, value);
                    assert!(
                        err <= 1e-5,
                        "{kind} mux={multiplexed} f={feature} v={value}: {err}"
                    );
                }
            }
        }
    }
}

#[test]
fn lookups_are_deterministic() {
    for kind in SchemeKind::ALL {
        let a = scheme(sample_config(kind, false, 11), &[7, 9, 5]);
        let b = scheme(sample_config(kind, false, 11), &[7, 9, 5]);
        assert_eq!(a.store(), b.store());
        for v in 0..5 {
            let (ea, ta) = a.lookup(2, v).unwrap();
            let (eb, tb) = b.lookup(2, v).unwrap();
            assert_eq!(ta, tb);
            assert_eq!(
                ea.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                eb.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}

#[test]
fn multiplexing_one_feature_is_identity() {
    for kind in SchemeKind::ALL {
        let mut base = sample_config(kind, false, 21);
        base.dims.truncate(1);
        let plain = scheme(base.clone(), &[30]);
        let muxed = scheme(base.multiplexed(true), &[30]);
        assert_eq!(plain.param_count(), muxed.param_count(), "{kind}");
        assert_eq!(plain.store().values(), muxed.store().values(), "{kind}");
        for v in 0..30 {
            assert_eq!(
                plain.lookup(0, v).unwrap(),
                muxed.lookup(0, v).unwrap(),
                "{kind}"
            );
        }
    }
}

#[test]
fn robe_blocks_wrap_inside_region() {
    let cfg = SchemeConfig::new(SchemeKind::RobeZ, vec![8], 11).with_block(4);
    let s = scheme(cfg, &[500]);
    let region = s.store().region(0).clone();
    let mut wrapped = false;
    for v in 0..500 {
        let (_, t) = s.lookup(0, v).unwrap();
        assert_eq!(t.offsets.len(), 8);
        for block in t.offsets.chunks(4) {
            assert!(block.iter().all(|&o| region.contains(o)));
            for w in block.windows(2) {
                let step = (w[1] + region.len - w[0]) % region.len;
                assert_eq!(step, 1);
                wrapped |= w[1] < w[0];
            }
        }
    }
    assert!(wrapped, "no block crossed the region end");
}

#[test]
fn multisize_concatenates_independent_slots() {
    let cfg =
        SchemeConfig::new(SchemeKind::MultisizeUnified, vec![2, 6], 2 * 1000).with_table_dim(2);
    let s = scheme(cfg, &[10, 10]);
    assert_eq!(s.output_width(), 8);
    let (e, t) = s.lookup(1, 4).unwrap();
    assert_eq!(e.len(), 6);
    let rows: Vec<usize> = t.offsets.chunks(2).map(|c| c[0] / 2).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0] != rows[1] || rows[1] != rows[2]);
}

#[test]
fn census_examples() {
    let s = scheme(
        SchemeConfig::new(SchemeKind::Collisionless, vec![2, 2], 0),
        &[3, 4],
    );
    let c = s.collision_census(&[3, 4], 0).unwrap();
    assert_eq!((c.intra, c.inter, c.sampled_fraction), (0, 0, 1.0));

    let one = scheme(
        SchemeConfig::new(SchemeKind::Unified, vec![2, 2], 2),
        &[2, 3],
    );
    let c = one.collision_census(&[2, 3], 0).unwrap();
    assert_eq!((c.intra, c.inter), (4, 6));

    let sampled = one.collision_census(&[2, 3], 2).unwrap();
    assert!(sampled.sampled_fraction < 1.0);
}

#[test]
fn census_birthday_count() {
    let (m, n, seeds) = (64usize, 256usize, 1000u64);
    let mut sum = 0.0;
    let mut sq = 0.0;
    for seed in 0..seeds {
        let s = scheme(
            SchemeConfig::new(SchemeKind::HashingTrick, vec![1], m).with_seed(seed),
            &[n],
        );
        let c = s.collision_census(&[n], 0).unwrap();
        assert_eq!(c.inter, 0);
        sum += c.intra as f64;
        sq += (c.intra as f64).powi(2);
    }
    let mean = sum / seeds as f64;
    let var = sq / seeds as f64 - mean * mean;
    let expected = (n * (n - 1) / 2) as f64 / m as f64;
    assert!(
        (mean - expected).abs() <= 3.0 * (var / seeds as f64).sqrt(),
        "{mean} vs {expected}"
    );
}

#[test]
fn allocation_minimums() {
    assert_eq!(
        allocate_proportional(10, &[1, 1], &[0, 0]).unwrap(),
        vec![5, 5]
    );
    assert_eq!(
        allocate_proportional(10, &[1, 2], &[0, 0]).unwrap(),
        vec![3, 7]
    );
    assert_eq!(
        allocate_proportional(100, &[1, 999], &[8, 8]).unwrap(),
        vec![8, 92]
    );
    assert!(matches!(
        allocate_proportional(10, &[1, 1], &[6, 6]),
        Err(TableError::BudgetTooSmall {
            budget: 10,
            needed: 12
        })
    ));
}

proptest! {
    #[test]
    fn budget_soundness(
        kind_idx in 0usize..9,
        multiplexed in any::<bool>(),
        vocabs in proptest::collection::vec(1usize..500, 1..6),
        slack in 20usize..80,
        seed in any::<u64>(),
    ) {
        let kind = SchemeKind::ALL[kind_idx];
        let t = vocabs.len();
        let d = 8;
        let mut dims = vec![d; t];
        if kind == SchemeKind::MultisizeUnified {
            dims[0] = 16;
        }
        let budget = slack * t * 16;
        let mut cfg = SchemeConfig::new(kind, dims, budget)
            .multiplexed(multiplexed || kind.always_multiplexed())
            .with_seed(seed)
            .with_k(2)
            .with_block(4)
            .with_importance_fraction(0.1)
            .with_table_dim(8);
        if kind == SchemeKind::Collisionless {
            cfg.multiplexed = false;
        }
        let s = build_scheme(cfg, &vocabs).unwrap();
        let budget = s.config().budget;
        prop_assert!(s.param_count() <= budget);
        prop_assert!(s.param_count() as f64 >= 0.95 * budget as f64);
        for (i, r) in s.store().regions().iter().enumerate() {
            for other in &s.store().regions()[i + 1..] {
                prop_assert!(r.end() <= other.offset);
            }
        }
        for f in 0..t {
            let (e, tr) = s.lookup(f, (vocabs[f] - 1) as u64).unwrap();
            prop_assert_eq!(e.len(), s.dim(f));
            prop_assert!(tr.touched().all(|o| o < s.param_count()));
        }
    }
}
