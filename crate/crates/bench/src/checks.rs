use std::fmt;

use anyhow::Result;
use fmux_core::data::Examples;
use fmux_core::hashing::derive_seed;
use fmux_core::nn::{full_gradient_check, FeatureTables, Head, Model, ModelSpec};
use fmux_core::sketch::{concat_scheme_moments, monte_carlo_moments, BagVector, MomentPair};
use fmux_core::tables::{build_scheme, SchemeConfig, SchemeKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchShape {
    pub n1: usize,
    pub n2: usize,
    pub m1: u64,
    pub m2: u64,
}

impl Default for SketchShape {
    fn default() -> Self {
        Self {
            n1: 8,
            n2: 8,
            m1: 4,
            m2: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SketchRow {
    pub instance: usize,
    pub scheme: &'static str,
    pub exact: MomentPair,
    pub mc_mean: f64,
    pub mean_se: f64,
    pub mc_variance: f64,
    pub variance_se: f64,
    pub pass: bool,
}

impl fmt::Display for SketchRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>3} {:<8} mean {:>9.4} vs {:>9.4} (se {:.4})  var {:>9.4} vs {:>9.4} (se {:.4})  {}",
            self.instance,
            self.scheme,
            self.exact.mean,
            self.mc_mean,
            self.mean_se,
            self.exact.variance,
            self.mc_variance,
            self.variance_se,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

fn random_bag(rng: &mut ChaCha8Rng, n: usize) -> BagVector {
    BagVector::from_bools((0..n).map(|_| rng.random_bool(0.5)).collect())
}

/// Monte Carlo moments of both sketches against the closed forms, on random
/// bag-of-values instances. Two rows per instance, unified then hashed.
pub fn sketch_check(
    shape: SketchShape,
    instances: usize,
    trials: u64,
    z: f64,
    seed: u64,
) -> Result<Vec<SketchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(2 * instances);
    for i in 0..instances {
        let (x1, x2) = (
            random_bag(&mut rng, shape.n1),
            random_bag(&mut rng, shape.n2),
        );
        let (y1, y2) = (
            random_bag(&mut rng, shape.n1),
            random_bag(&mut rng, shape.n2),
        );
        let exact = concat_scheme_moments(&x1, &x2, &y1, &y2, shape.m1, shape.m2)?;
        let mc = monte_carlo_moments(
            &x1,
            &x2,
            &y1,
            &y2,
            shape.m1,
            shape.m2,
            trials,
            derive_seed(seed, i as u64),
        )?;
        for (scheme, exact, est) in [
            ("unified", exact.unified, mc.unified),
            ("hashed", exact.hashed, mc.hashed),
        ] {
            rows.push(SketchRow {
                instance: i,
                scheme,
                exact,
                mc_mean: est.mean,
                mean_se: est.mean_se,
                mc_variance: est.variance,
                variance_se: est.variance_se,
                pass: est.agrees_with(&exact, z),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub scheme: String,
    pub head: Head,
    pub checked: usize,
    /// Parameters skipped at a ReLU kink.
    pub kinks: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

impl fmt::Display for GradRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head = match self.head {
            Head::Logistic => "logistic",
            Head::DcnMlp => "dcn_mlp",
        };
        write!(
            f,
            "{:<22} {:<8} {:>5} params ({} at kinks)  max rel err {:.2e}  {}",
            self.scheme,
            head,
            self.checked,
            self.kinks,
            self.max_rel_err,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Every scheme kind, plus the multiplexed variant of each per-feature one.
pub fn gradcheck_variants() -> Vec<(SchemeKind, bool)> {
    let mut out = Vec::new();
    for kind in SchemeKind::ALL {
        out.push((kind, kind.always_multiplexed()));
        if kind != SchemeKind::Collisionless && !kind.always_multiplexed() {
            out.push((kind, true));
        }
    }
    out
}

fn small_config(kind: SchemeKind, multiplexed: bool, dims: Vec<usize>, seed: u64) -> SchemeConfig {
    let mut cfg = SchemeConfig::new(kind, dims, 120)
        .multiplexed(multiplexed)
        .with_k(2)
        .with_seed(seed);
    if kind == SchemeKind::RobeZ {
        cfg = cfg.with_block(2);
    }
    if kind == SchemeKind::MultisizeUnified {
        cfg = cfg.with_table_dim(2);
    }
    cfg
}

/// Central-difference check of every parameter on small random instances.
pub fn gradcheck_suite(seed: u64, tolerance: f64) -> Result<Vec<GradRow>> {
    let vocabs = [7usize, 5, 9];
    let mut rows = Vec::new();
    for (i, (kind, multiplexed)) in gradcheck_variants().into_iter().enumerate() {
        let dims = if kind == SchemeKind::MultisizeUnified {
            vec![4, 2, 6]
        } else {
            vec![4; vocabs.len()]
        };
        for head in [Head::Logistic, Head::DcnMlp] {
            let s = derive_seed(seed, (2 * i + usize::from(head == Head::DcnMlp)) as u64);
            let scheme = build_scheme(small_config(kind, multiplexed, dims.clone(), s), &vocabs)?;
            let mut tables = FeatureTables::from(scheme);
            let spec = match head {
                Head::Logistic => ModelSpec::logistic(dims.clone()),
                Head::DcnMlp => ModelSpec::dcn_mlp(dims.clone(), 1, vec![5]),
            };
            let mut model = Model::new(spec, derive_seed(s, 1))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s, 2));
            let mut batch = Examples::new(vocabs.len());
            for _ in 0..6 {
                let tokens: Vec<u64> = vocabs
                    .iter()
                    .map(|&v| rng.random_range(0..v as u64))
                    .collect();
                batch.push(&tokens, rng.random_range(0..2))?;
            }
            let r = full_gradient_check(&mut model, &mut tables, &batch)?;
            let label = if multiplexed && !kind.always_multiplexed() {
                format!("mux-{}", kind.name())
            } else {
                kind.name().to_string()
            };
            rows.push(GradRow {
                scheme: label,
                head,
                checked: r.checked,
                kinks: r.kinks,
                max_rel_err: r.max_rel_err,
                pass: !r.noop && r.max_rel_err <= tolerance && r.kinks * 10 <= r.checked,
            });
        }
    }
    Ok(rows)
}
