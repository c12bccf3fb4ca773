//! CSV outputs. Headers are fixed; floats use Rust's shortest round-trip
//! formatting, so identical runs produce identical bytes.

use std::io::Write;
use std::path::Path;

use cora_core::extraction::VarianceReport;
use cora_core::train::{Aggregate, SweepRow};
use cora_core::{Regime, RunMetrics};

use crate::checkpoint::write_atomic;

pub const METRICS_HEADER: [&str; 8] = [
    "rank",
    "regime",
    "seed",
    "step",
    "train_loss",
    "eval_loss",
    "eval_accuracy",
    "trainable_params",
];
pub const VARIANCE_HEADER: [&str; 3] = ["method", "threshold", "count"];
pub const CURVE_HEADER: [&str; 3] = ["method", "components", "cumulative_fraction"];
pub const TABLE_HEADER: [&str; 10] = [
    "rank",
    "regime",
    "seed",
    "status",
    "final_train_loss",
    "final_eval_loss",
    "best_eval_loss",
    "final_eval_accuracy",
    "trainable_params",
    "error",
];
pub const SUMMARY_HEADER: [&str; 8] = [
    "rank",
    "regime",
    "completed",
    "failed",
    "mean_final_eval_loss",
    "min_final_eval_loss",
    "max_final_eval_loss",
    "mean_final_eval_accuracy",
];

type CsvResult = Result<(), csv::Error>;

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn write_metrics<W: Write>(out: W, runs: &[(usize, Regime, u64, &RunMetrics)]) -> CsvResult {
    let mut w = writer(out);
    w.write_record(METRICS_HEADER)?;
    for (rank, regime, seed, m) in runs {
        for r in &m.rows {
            w.write_record([
                rank.to_string(),
                regime.as_str().to_string(),
                seed.to_string(),
                r.step.to_string(),
                r.train_loss.to_string(),
                r.eval_loss.to_string(),
                r.eval_accuracy.to_string(),
                r.trainable_params.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_variance<W: Write>(out: W, report: &VarianceReport) -> CsvResult {
    let mut w = writer(out);
    w.write_record(VARIANCE_HEADER)?;
    for r in &report.rows {
        w.write_record([r.method.as_str().to_string(), r.threshold.to_string(), r.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves<W: Write>(out: W, report: &VarianceReport) -> CsvResult {
    let mut w = writer(out);
    w.write_record(CURVE_HEADER)?;
    for (method, curve) in [("svd", &report.svd_curve), ("pca", &report.pca_curve)] {
        for (i, f) in curve.iter().enumerate() {
            w.write_record([method.to_string(), (i + 1).to_string(), f.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_table<W: Write>(out: W, rows: &[SweepRow]) -> CsvResult {
    let mut w = writer(out);
    w.write_record(TABLE_HEADER)?;
    for r in rows {
        let c = r.cell;
        let mut rec = vec![c.rank.to_string(), c.regime.as_str().to_string(), c.seed.to_string()];
        match &r.result {
            Ok(m) => {
                let s = &m.summary;
                rec.extend([
                    "ok".to_string(),
                    s.final_train_loss.to_string(),
                    s.final_eval_loss.to_string(),
                    s.best_eval_loss.to_string(),
                    s.final_eval_accuracy.to_string(),
                    s.trainable_params.to_string(),
                    String::new(),
                ]);
            }
            Err(e) => {
                rec.push("failed".to_string());
                rec.extend(std::iter::repeat_n(String::new(), 5));
                rec.push(e.clone());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(out: W, aggregates: &[Aggregate]) -> CsvResult {
    let mut w = writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for a in aggregates {
        w.write_record([
            a.rank.map_or_else(|| "all".to_string(), |r| r.to_string()),
            a.regime.as_str().to_string(),
            a.completed.to_string(),
            a.failed.to_string(),
            a.mean_final_eval_loss.to_string(),
            a.min_final_eval_loss.to_string(),
            a.max_final_eval_loss.to_string(),
            a.mean_final_eval_accuracy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Renders with `f` into memory and writes the file atomically.
pub fn save<F>(path: &Path, f: F) -> anyhow::Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> CsvResult,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cora_core::extraction::variance_report;
    use cora_core::Matrix;

    #[test]
    fn variance_csv_layout() {
        let m = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let r = variance_report(&m, &[0.5, 0.999]).unwrap();
        let mut out = Vec::new();
        write_variance(&mut out, &r).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,threshold,count");
        assert_eq!(lines[1], "svd,0.5,1");
        assert_eq!(lines[2], "svd,0.999,2");
        assert_eq!(lines.len(), 5);
    }
}
