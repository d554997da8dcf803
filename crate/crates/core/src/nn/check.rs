use crate::data::Examples;

use super::{
    batch_loss_and_grad, bce_with_logit, forward_into, FeatureTables, Gradients, Model, NnError,
    Tape, LOGIT_CLAMP,
};

const STEP: f64 = 1e-5;
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Parameters compared.
    pub checked: usize,
    /// Parameters skipped because a perturbation flipped a ReLU.
    pub kinks: usize,
    /// Nothing to check (empty batch).
    pub noop: bool,
}

/// Compares every analytic gradient of the mean batch BCE, dense and
/// embedding parameters alike, against central differences.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`. A parameter whose
/// perturbation changes which hidden units are active straddles a kink of
/// the loss; it is counted in `kinks` instead of compared. Parameters are
/// restored exactly afterwards.
pub fn full_gradient_check(
    model: &mut Model,
    tables: &mut FeatureTables,
    batch: &Examples,
) -> Result<GradCheck, NnError> {
    if batch.is_empty() {
        return Ok(GradCheck {
            max_rel_err: 0.0,
            checked: 0,
            kinks: 0,
            noop: true,
        });
    }
    let indices: Vec<usize> = (0..batch.len()).collect();
    let mut tape = Tape::default();
    let mut grads = Gradients::new(model, tables);
    batch_loss_and_grad(model, tables, batch, &indices, &mut tape, &mut grads)?;

    let mut base = Vec::new();
    probe(model, tables, batch, &mut tape, &mut base)?;
    let (mut up_pattern, mut down_pattern) = (Vec::new(), Vec::new());

    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut kinks = 0;
    let mut compare = |analytic: f64, up: f64, down: f64, up_p: &[bool], down_p: &[bool]| {
        if up_p != base.as_slice() || down_p != base.as_slice() {
            kinks += 1;
        } else {
            worst = worst.max(rel_err(analytic, (up - down) / (2.0 * STEP)));
            checked += 1;
        }
    };
    for i in 0..model.param_count() {
        let original = model.params()[i];
        model.params_mut()[i] = original + STEP;
        let up = probe(model, tables, batch, &mut tape, &mut up_pattern)?;
        model.params_mut()[i] = original - STEP;
        let down = probe(model, tables, batch, &mut tape, &mut down_pattern)?;
        model.params_mut()[i] = original;
        compare(grads.dense[i], up, down, &up_pattern, &down_pattern);
    }
    for s in 0..tables.tables().len() {
        for i in 0..tables.tables()[s].param_count() {
            let original = tables.tables()[s].store().values()[i];
            tables.tables_mut()[s].store_mut().values_mut()[i] = original + STEP;
            let up = probe(model, tables, batch, &mut tape, &mut up_pattern)?;
            tables.tables_mut()[s].store_mut().values_mut()[i] = original - STEP;
            let down = probe(model, tables, batch, &mut tape, &mut down_pattern)?;
            tables.tables_mut()[s].store_mut().values_mut()[i] = original;
            compare(grads.tables[s][i], up, down, &up_pattern, &down_pattern);
        }
    }
    Ok(GradCheck {
        max_rel_err: worst,
        checked,
        kinks,
        noop: false,
    })
}

/// Mean batch loss, recording every hidden unit's on/off state and whether
/// each logit sits inside the clamp.
fn probe(
    model: &Model,
    tables: &FeatureTables,
    batch: &Examples,
    tape: &mut Tape,
    pattern: &mut Vec<bool>,
) -> Result<f64, NnError> {
    pattern.clear();
    let mut total = 0.0;
    for i in 0..batch.len() {
        forward_into(model, tables, batch.tokens(i), tape)?;
        total += bce_with_logit(tape.logit, batch.label(i));
        pattern.push(tape.logit.abs() < LOGIT_CLAMP);
        for h in tape.hs.iter().skip(1) {
            pattern.extend(h.iter().map(|&x| x > 0.0));
        }
    }
    Ok(total / batch.len() as f64)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}
