use std::collections::BTreeMap;

use crate::methods::family_of;
use crate::sweep::RunRecord;

/// `a` dominates `b`: no more parameters, no lower AUC, and strictly better
/// in one of the two.
pub fn dominates(a: &RunRecord, b: &RunRecord) -> bool {
    a.params <= b.params && a.auc >= b.auc && (a.params < b.params || a.auc > b.auc)
}

/// Records not dominated by any other, sorted by parameter count.
/// Exact duplicates of a frontier point are all kept.
pub fn pareto_frontier(records: &[RunRecord]) -> Vec<RunRecord> {
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.params.cmp(&b.params).then(b.auc.total_cmp(&a.auc)));
    let mut out = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        // Everything with this parameter count; the first has the top AUC.
        let mut j = i;
        while j < sorted.len() && sorted[j].params == sorted[i].params {
            j += 1;
        }
        let top = sorted[i].auc;
        if top > best {
            out.extend(
                sorted[i..j]
                    .iter()
                    .take_while(|r| r.auc == top)
                    .map(|r| (*r).clone()),
            );
            best = top;
        }
        i = j;
    }
    out
}

/// Frontier of each method family, keyed by family label.
pub fn frontier_by_family(records: &[RunRecord]) -> BTreeMap<String, Vec<RunRecord>> {
    let mut groups: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry(family_of(&r.method))
            .or_default()
            .push(r.clone());
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, pareto_frontier(&v)))
        .collect()
}

/// The first frontier point dominated by some record, if any.
pub fn check_frontier<'a>(
    frontier: &'a [RunRecord],
    records: &[RunRecord],
) -> Option<&'a RunRecord> {
    frontier
        .iter()
        .find(|f| records.iter().any(|r| dominates(r, f)))
}
