use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::error::{Error, Result};

/// One metric value of one (sweep point, variant, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub protocol: String,
    pub sweep_value: f64,
    pub variant: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Seconds spent on the run this value came from.
    pub wall_time: f64,
}

/// Seed statistics of one (sweep point, variant, metric) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub protocol: String,
    pub sweep_value: f64,
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub n: usize,
    /// `100 (mean - baseline) / baseline` against the baseline variant at the
    /// same sweep point, when one was run.
    pub pct_change_vs_baseline: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub sweep_value: f64,
    pub variant: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub protocol: String,
    pub seeds: Vec<u64>,
    /// Hash of the held-out test rows shared by every run.
    pub test_set_hash: String,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StressReport {
    pub rows: Vec<ReportRow>,
    pub failures: Vec<JobFailure>,
    pub provenance: Provenance,
}

impl StressReport {
    /// Groups rows by (sweep value, variant, metric) in order of first
    /// appearance.
    pub fn aggregates(&self) -> Vec<AggregateRow> {
        let mut cells: Vec<(f64, &str, &str, Vec<f64>)> = Vec::new();
        for r in &self.rows {
            match cells
                .iter_mut()
                .find(|c| c.0.to_bits() == r.sweep_value.to_bits() && c.1 == r.variant && c.2 == r.metric)
            {
                Some(c) => c.3.push(r.value),
                None => cells.push((r.sweep_value, &r.variant, &r.metric, vec![r.value])),
            }
        }
        let stats = |v: &[f64]| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let protocol = &self.provenance.protocol;
        cells
            .iter()
            .map(|(sweep, variant, metric, values)| {
                let (mean, std) = stats(values);
                let baseline = cells
                    .iter()
                    .find(|c| {
                        c.0.to_bits() == sweep.to_bits() && c.1 == super::Variant::Baseline.name() && c.2 == *metric
                    })
                    .map(|c| stats(&c.3).0);
                AggregateRow {
                    protocol: protocol.clone(),
                    sweep_value: *sweep,
                    variant: variant.to_string(),
                    metric: metric.to_string(),
                    mean,
                    std,
                    n: values.len(),
                    pct_change_vs_baseline: baseline.filter(|b| *b != 0.0).map(|b| 100.0 * (mean - b) / b),
                }
            })
            .collect()
    }

    /// Mean of `metric` for `variant` at `sweep_value`, if present.
    pub fn mean(&self, sweep_value: f64, variant: &str, metric: &str) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| a.sweep_value == sweep_value && a.variant == variant && a.metric == metric)
            .map(|a| a.mean)
    }

    /// Per-seed values of `metric` for `variant` at `sweep_value`, in seed order.
    pub fn values(&self, sweep_value: f64, variant: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.sweep_value == sweep_value && r.variant == variant && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `rows.csv`, `aggregates.csv`, `provenance.json`, `failures.json`
/// and `summary.txt` into `dir` (created if missing). All of them are pure
/// functions of the configuration and seeds.
pub fn emit_report(report: &StressReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows(
        &dir.join("rows.csv"),
        &["protocol", "sweep_value", "variant", "seed", "metric", "value"],
        report.rows.iter().map(|r| {
            vec![
                r.protocol.clone(),
                r.sweep_value.to_string(),
                r.variant.clone(),
                r.seed.to_string(),
                r.metric.clone(),
                r.value.to_string(),
            ]
        }),
    )?;
    let aggregates = report.aggregates();
    write_rows(
        &dir.join("aggregates.csv"),
        &["protocol", "sweep_value", "variant", "metric", "mean", "std", "n", "pct_change_vs_baseline"],
        aggregates.iter().map(|a| {
            vec![
                a.protocol.clone(),
                a.sweep_value.to_string(),
                a.variant.clone(),
                a.metric.clone(),
                a.mean.to_string(),
                a.std.to_string(),
                a.n.to_string(),
                a.pct_change_vs_baseline.map(|p| p.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    let json = |path: &Path, text: String| fs::write(path, text + "\n").map_err(|e| Error::io(path, e));
    json(&dir.join("provenance.json"), serde_json::to_string_pretty(&report.provenance)?)?;
    json(&dir.join("failures.json"), serde_json::to_string_pretty(&report.failures)?)?;
    let summary = dir.join("summary.txt");
    fs::write(&summary, summary_table(report, &aggregates)).map_err(|e| Error::io(&summary, e))
}

fn summary_table(report: &StressReport, aggregates: &[AggregateRow]) -> String {
    let p = &report.provenance;
    let mut s = String::new();
    let _ = writeln!(s, "protocol: {}", p.protocol);
    let _ = writeln!(s, "seeds: {:?}", p.seeds);
    let _ = writeln!(s, "config hash: {}", p.config_hash);
    let _ = writeln!(s, "failed runs: {}", report.failures.len());
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:>12}  {:<12} {:<16} {:>10} {:>10} {:>10}",
        "sweep", "variant", "metric", "mean", "std", "vs base %"
    );
    for a in aggregates {
        let pct = a.pct_change_vs_baseline.map(|v| format!("{v:+.2}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:>12}  {:<12} {:<16} {:>10.4} {:>10.4} {:>10}",
            a.sweep_value, a.variant, a.metric, a.mean, a.std, pct
        );
    }
    s
}

/// Writes the wall time of every run to `timings.csv` in `dir`. Kept apart
/// from the other report files, which must not vary between reruns.
pub fn emit_timings(report: &StressReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut seen = Vec::new();
    write_rows(
        &dir.join("timings.csv"),
        &["protocol", "sweep_value", "variant", "seed", "wall_time_s"],
        report
            .rows
            .iter()
            .filter(|r| {
                let key = (r.sweep_value.to_bits(), r.variant.clone(), r.seed);
                !seen.contains(&key) && {
                    seen.push(key);
                    true
                }
            })
            .map(|r| {
                vec![
                    r.protocol.clone(),
                    r.sweep_value.to_string(),
                    r.variant.clone(),
                    r.seed.to_string(),
                    format!("{:.3}", r.wall_time),
                ]
            })
            .collect::<Vec<_>>(),
    )
}
