//! Aggregation of finished run records: mean/std summaries across seeds,
//! a combined CSV, and plain two-column .dat series for plotting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::continual::RunRecord;
use crate::error::{Error, Result};

pub fn load_record(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::DataFormat {
        path: path.to_path_buf(),
        reason: format!("run record parse: {e}"),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Sample standard deviation (n-1); zero for a single value.
    pub fn from_values(vs: &[f64]) -> Stat {
        let n = vs.len() as f64;
        let mean = vs.iter().sum::<f64>() / n;
        let std = if vs.len() < 2 {
            0.0
        } else {
            (vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

/// Cross-seed aggregate for one scenario. All metric stats are percentages.
#[derive(Clone, Debug)]
pub struct ScenarioSummary {
    pub name: String,
    pub family: String,
    pub seeds: Vec<u64>,
    pub last_accuracy: Stat,
    pub avg_incremental_accuracy: Stat,
    pub avg_global_forgetting: Stat,
    pub classical_avg_forgetting: Stat,
}

fn value_diff(a: &serde_json::Value, b: &serde_json::Value, path: &str, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(ao), Value::Object(bo)) => {
            let keys: std::collections::BTreeSet<&String> = ao.keys().chain(bo.keys()).collect();
            for k in keys {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match (ao.get(k), bo.get(k)) {
                    (Some(x), Some(y)) => value_diff(x, y, &sub, out),
                    _ => out.push(sub),
                }
            }
        }
        (Value::Array(aa), Value::Array(ba)) if aa.len() == ba.len() => {
            for (i, (x, y)) in aa.iter().zip(ba).enumerate() {
                value_diff(x, y, &format!("{path}[{i}]"), out);
            }
        }
        _ => {
            if a != b {
                out.push(path.to_string());
            }
        }
    }
}

/// Groups records by scenario name and aggregates across seeds. Records
/// that share a name but disagree on configuration are refused — averaging
/// across different setups would silently produce nonsense.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<ScenarioSummary>> {
    if records.is_empty() {
        return Err(Error::Param("no run records to summarize".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.name).or_default().push(r);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (name, group) in groups {
        let first = serde_json::to_value(&group[0].scenario)
            .map_err(|e| Error::Param(format!("scenario encode: {e}")))?;
        for r in &group[1..] {
            let other = serde_json::to_value(&r.scenario)
                .map_err(|e| Error::Param(format!("scenario encode: {e}")))?;
            let mut diffs = Vec::new();
            value_diff(&first, &other, "", &mut diffs);
            if !diffs.is_empty() {
                return Err(Error::Protocol(format!(
                    "records named {name:?} differ in configuration ({}); refusing to average them",
                    diffs.join(", ")
                )));
            }
        }
        let mut seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        let pct = |f: fn(&RunRecord) -> f64| -> Stat {
            Stat::from_values(&group.iter().map(|r| 100.0 * f(r)).collect::<Vec<_>>())
        };
        out.push(ScenarioSummary {
            name: name.to_string(),
            family: group[0].family.clone(),
            seeds,
            last_accuracy: pct(|r| r.metrics.last_accuracy),
            avg_incremental_accuracy: pct(|r| r.metrics.avg_incremental_accuracy),
            avg_global_forgetting: pct(|r| r.metrics.avg_global_forgetting),
            classical_avg_forgetting: pct(|r| r.metrics.classical_avg_forgetting),
        });
    }
    Ok(out)
}

/// One row per scenario; metric columns are `mean` and `std` percentages
/// with fixed 4-decimal formatting.
pub fn summary_csv(summaries: &[ScenarioSummary]) -> String {
    let mut out = String::from(
        "scenario,family,seeds,la_mean,la_std,aia_mean,aia_std,favg_g_mean,favg_g_std,f_classical_mean,f_classical_std\n",
    );
    for s in summaries {
        let seeds = s.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            s.name,
            s.family,
            seeds,
            s.last_accuracy.mean,
            s.last_accuracy.std,
            s.avg_incremental_accuracy.mean,
            s.avg_incremental_accuracy.std,
            s.avg_global_forgetting.mean,
            s.avg_global_forgetting.std,
            s.classical_avg_forgetting.mean,
            s.classical_avg_forgetting.std,
        );
    }
    out
}

/// Fixed-width console table.
pub fn format_table(summaries: &[ScenarioSummary]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:<8} {:>6} {:>16} {:>16} {:>16}",
        "scenario", "family", "seeds", "LA %", "AIA %", "F_AvgG %"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<24} {:<8} {:>6} {:>16} {:>16} {:>16}",
            s.name,
            s.family,
            s.seeds.len(),
            format!("{:.2} ± {:.2}", s.last_accuracy.mean, s.last_accuracy.std),
            format!("{:.2} ± {:.2}", s.avg_incremental_accuracy.mean, s.avg_incremental_accuracy.std),
            format!("{:.2} ± {:.2}", s.avg_global_forgetting.mean, s.avg_global_forgetting.std),
        );
    }
    out
}

/// Whitespace-separated series, one point per line, `#`-prefixed header.
fn dat(header: &str, points: impl Iterator<Item = (f64, Vec<f64>)>) -> String {
    let mut out = format!("# {header}\n");
    for (x, ys) in points {
        let _ = write!(out, "{x}");
        for y in ys {
            let _ = write!(out, " {y:.6}");
        }
        out.push('\n');
    }
    out
}

/// Writes the summary CSV plus per-record .dat series into `out_dir`,
/// returning every path written.
pub fn write_report(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let summaries = summarize(records)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let csv_path = out_dir.join("summary.csv");
    fs::write(&csv_path, summary_csv(&summaries))?;
    written.push(csv_path);

    for r in records {
        let stem = format!("{}_s{}", r.name, r.seed);

        let p = out_dir.join(format!("{stem}_avg_acc.dat"));
        fs::write(
            &p,
            dat(
                "task_boundary avg_accuracy_pct",
                r.metrics
                    .avg_accuracy_after
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| ((i + 1) as f64, vec![100.0 * a])),
            ),
        )?;
        written.push(p);

        let p = out_dir.join(format!("{stem}_forgetting.dat"));
        fs::write(
            &p,
            dat(
                "task_boundary global_forgetting_pct",
                r.metrics
                    .global_forgetting
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| ((i + 1) as f64, vec![100.0 * f])),
            ),
        )?;
        written.push(p);

        let p = out_dir.join(format!("{stem}_curve.dat"));
        let mut points = Vec::new();
        let mut step = 0usize;
        for curve in &r.curves {
            for e in &curve.epochs {
                step += 1;
                points.push((step as f64, vec![e.train_loss, 100.0 * e.train_acc, 100.0 * e.test_acc]));
            }
        }
        fs::write(&p, dat("global_epoch train_loss train_acc_pct current_task_test_acc_pct", points.into_iter()))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continual::{EpochStats, TaskCurve, RECORD_VERSION};
    use crate::metrics::{AccuracyMatrix, MetricsReport};

    fn record(name: &str, seed: u64, cols: &[Vec<f64>], batch: usize) -> RunRecord {
        let matrix = AccuracyMatrix::from_columns(cols).unwrap();
        let metrics = MetricsReport::from_matrix(&matrix).unwrap();
        let scenario = serde_json::from_value(serde_json::json!({
            "name": name,
            "dataset": "synthetic",
            "num_tasks": cols.len(),
            "batch_size": batch,
            "model": {"family": "mlp", "hidden": [8]}
        }))
        .unwrap();
        RunRecord {
            format_version: RECORD_VERSION,
            name: name.into(),
            seed,
            family: "mlp".into(),
            scenario,
            param_count: 100,
            normalization: None,
            task_classes: (0..cols.len()).map(|t| vec![2 * t, 2 * t + 1]).collect(),
            curves: vec![TaskCurve {
                task_id: 1,
                epochs: vec![EpochStats {
                    epoch: 1,
                    train_loss: 0.5,
                    train_acc: 0.8,
                    test_loss: 0.6,
                    test_acc: 0.75,
                    seconds: 0.1,
                }],
            }],
            matrix,
            metrics,
            total_seconds: 1.0,
        }
    }

    #[test]
    fn mean_and_std_across_seeds() {
        // LA: seed 0 -> 0.7, seed 1 -> 0.9; mean 80%, sample std ~14.142%
        let records = vec![
            record("sc", 0, &[vec![0.8], vec![0.6, 0.8]], 32),
            record("sc", 1, &[vec![0.8], vec![0.9, 0.9]], 32),
        ];
        let s = summarize(&records).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].seeds, vec![0, 1]);
        assert!((s[0].last_accuracy.mean - 80.0).abs() < 1e-9);
        assert!((s[0].last_accuracy.std - 14.142135623730951).abs() < 1e-9);

        // single record: std 0
        let one = summarize(&records[..1]).unwrap();
        assert_eq!(one[0].last_accuracy.std, 0.0);
    }

    #[test]
    fn refuses_mixed_configurations_under_one_name() {
        let records = vec![
            record("sc", 0, &[vec![0.8]], 32),
            record("sc", 1, &[vec![0.8]], 64),
        ];
        let err = summarize(&records).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("batch_size"), "diff should name the field: {msg}");
        assert!(msg.contains("refusing"), "{msg}");
    }

    #[test]
    fn csv_and_table_are_stable() {
        let records = vec![record("alpha", 0, &[vec![0.9], vec![0.6, 0.8]], 32)];
        let s = summarize(&records).unwrap();
        let csv = summary_csv(&s);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("scenario,family,seeds,la_mean"));
        assert_eq!(
            lines.next().unwrap(),
            "alpha,mlp,0,70.0000,0.0000,80.0000,0.0000,10.0000,0.0000,30.0000,0.0000"
        );
        let table = format_table(&s);
        assert!(table.contains("alpha"));
        assert!(table.contains("70.00"));
    }

    #[test]
    fn write_report_emits_csv_and_series() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![record("beta", 3, &[vec![0.9], vec![0.6, 0.8]], 32)];
        let files = write_report(&records, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let acc = fs::read_to_string(dir.path().join("beta_s3_avg_acc.dat")).unwrap();
        let mut lines = acc.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        assert_eq!(lines.next().unwrap(), "1 90.000000");
        assert_eq!(lines.next().unwrap(), "2 70.000000");
        let curve = fs::read_to_string(dir.path().join("beta_s3_curve.dat")).unwrap();
        assert!(curve.contains("1 0.500000 80.000000 75.000000"));

        let bad = load_record(&dir.path().join("beta_s3_avg_acc.dat")).unwrap_err();
        assert!(bad.to_string().contains("parse"), "{bad}");
    }
}
