use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::sweep::{RunRecord, Timing};

pub const REPORT_HEADER: &str =
    "method,multiplexed,multiplier,params,seed,best_epoch,auc,logloss,wall_s";

/// Mean and sample standard deviation of one (method, multiplier) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: String,
    pub multiplexed: bool,
    pub multiplier: f64,
    pub runs: usize,
    pub params: usize,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub logloss_mean: f64,
    pub logloss_sd: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Cells in order of first appearance.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut cells: HashMap<(String, u64), Vec<&RunRecord>> = HashMap::new();
    for r in records {
        let key = (r.method.clone(), r.multiplier.to_bits());
        cells
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &cells[&key];
            let aucs: Vec<f64> = rs.iter().map(|r| r.auc).collect();
            let losses: Vec<f64> = rs.iter().map(|r| r.logloss).collect();
            let (auc_mean, auc_sd) = mean_sd(&aucs);
            let (logloss_mean, logloss_sd) = mean_sd(&losses);
            CellSummary {
                method: key.0.clone(),
                multiplexed: rs[0].multiplexed,
                multiplier: rs[0].multiplier,
                runs: rs.len(),
                params: rs[0].params,
                auc_mean,
                auc_sd,
                logloss_mean,
                logloss_sd,
            }
        })
        .collect()
}

pub fn write_report_csv<W: Write>(
    mut out: W,
    records: &[RunRecord],
    timings: &[Timing],
) -> Result<()> {
    let wall: HashMap<(&str, u64, u64), f64> = timings
        .iter()
        .map(|t| {
            (
                (t.method.as_str(), t.multiplier.to_bits(), t.seed),
                t.wall_s,
            )
        })
        .collect();
    writeln!(out, "{REPORT_HEADER}")?;
    for r in records {
        let w = wall.get(&(r.method.as_str(), r.multiplier.to_bits(), r.seed));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.multiplexed,
            r.multiplier,
            r.params,
            r.seed,
            r.best_epoch,
            r.auc,
            r.logloss,
            w.map(|w| format!("{w:.3}")).unwrap_or_default()
        )?;
    }
    Ok(())
}

/// Writes `report.csv` and `summary.json` into `dir`.
pub fn emit_report(dir: &Path, records: &[RunRecord], timings: &[Timing]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("report.csv");
    let mut csv = BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    write_report_csv(&mut csv, records, timings)?;
    csv.flush()?;
    let summary = File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(summary, &summarize(records))?;
    Ok(())
}
