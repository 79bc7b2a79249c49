//! Continual-learning metrics over a lower-triangular accuracy matrix.
//!
//! `a(c, b)` is the accuracy on task c's test split measured right after
//! training task b, for 1 <= c <= b <= K. From this triangle:
//!
//! * last accuracy `LA = A_K`, where `A_b = mean_c a(c, b)` over c <= b
//! * average incremental accuracy `AIA = mean_b A_b`
//! * global forgetting `F_G(k) = A_(k-1) - A_k` with `A_0 := A_1`
//! * `F_AvgG = mean_k F_G(k)`, which telescopes to `(A_1 - A_K)/K`
//!
//! Accuracies are stored as fractions in [0,1]; reports multiply by 100.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular accuracy matrix, stored ragged: row c (1-based) holds
/// `a(c, c..=K)`. Always complete by construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    k: usize,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    /// Builds from per-evaluation columns: `cols[b-1]` holds
    /// `a(1, b), ..., a(b, b)` measured after training task b.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<AccuracyMatrix> {
        let k = cols.len();
        if k == 0 {
            return Err(Error::Param("empty accuracy matrix".into()));
        }
        for (b, col) in cols.iter().enumerate() {
            if col.len() != b + 1 {
                return Err(Error::Param(format!(
                    "column {} has {} entries, want {}",
                    b + 1,
                    col.len(),
                    b + 1
                )));
            }
        }
        let mut rows = Vec::with_capacity(k);
        for c in 1..=k {
            let mut row = Vec::with_capacity(k - c + 1);
            for b in c..=k {
                let v = cols[b - 1][c - 1];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Param(format!("accuracy a({c},{b}) = {v} outside [0,1]")));
                }
                row.push(v);
            }
            rows.push(row);
        }
        Ok(AccuracyMatrix { k, rows })
    }

    /// Builds from ragged rows: `rows[c-1]` holds `a(c, c..=K)`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<AccuracyMatrix> {
        let k = rows.len();
        let mut cols = vec![Vec::new(); k];
        for (ci, row) in rows.iter().enumerate() {
            if row.len() != k - ci {
                return Err(Error::Param(format!(
                    "row {} has {} entries, want {}",
                    ci + 1,
                    row.len(),
                    k - ci
                )));
            }
            for (off, &v) in row.iter().enumerate() {
                cols[ci + off].push(v);
            }
        }
        Self::from_columns(&cols)
    }

    pub fn num_tasks(&self) -> usize {
        self.k
    }

    /// `a(c, b)`, both 1-based, requiring c <= b <= K.
    pub fn a(&self, c: usize, b: usize) -> Result<f64> {
        if c == 0 || b < c || b > self.k {
            return Err(Error::Param(format!(
                "a({c},{b}) outside lower triangle of a {0}x{0} matrix",
                self.k
            )));
        }
        Ok(self.rows[c - 1][b - c])
    }

    /// `A_b`: mean accuracy over tasks 1..=b right after training task b.
    pub fn avg_accuracy_after(&self, b: usize) -> Result<f64> {
        if b == 0 || b > self.k {
            return Err(Error::Param(format!("A_{b} undefined for {} tasks", self.k)));
        }
        let mut s = 0.0;
        for c in 1..=b {
            s += self.a(c, b)?;
        }
        Ok(s / b as f64)
    }

    pub fn last_accuracy(&self) -> Result<f64> {
        self.avg_accuracy_after(self.k)
    }

    pub fn avg_incremental_accuracy(&self) -> Result<f64> {
        let mut s = 0.0;
        for b in 1..=self.k {
            s += self.avg_accuracy_after(b)?;
        }
        Ok(s / self.k as f64)
    }

    /// `F_G(k) = A_(k-1) - A_k` for k in 1..=K, with `A_0 := A_1` so the
    /// first step contributes zero.
    pub fn global_forgetting(&self) -> Result<Vec<f64>> {
        let mut prev = self.avg_accuracy_after(1)?;
        let mut out = Vec::with_capacity(self.k);
        for k in 1..=self.k {
            let cur = self.avg_accuracy_after(k)?;
            out.push(prev - cur);
            prev = cur;
        }
        Ok(out)
    }

    pub fn avg_global_forgetting(&self) -> Result<f64> {
        let f = self.global_forgetting()?;
        Ok(f.iter().sum::<f64>() / f.len() as f64)
    }

    /// Classical per-task forgetting: mean over tasks c < K of
    /// `max_b a(c,b) - a(c,K)`. Diagnostic only; zero for K = 1.
    pub fn classical_avg_forgetting(&self) -> Result<f64> {
        if self.k == 1 {
            return Ok(0.0);
        }
        let mut s = 0.0;
        for c in 1..self.k {
            let mut best = f64::NEG_INFINITY;
            for b in c..=self.k {
                best = best.max(self.a(c, b)?);
            }
            s += best - self.a(c, self.k)?;
        }
        Ok(s / (self.k - 1) as f64)
    }

    /// CSV with header `task,after_1,...,after_K`; row c lists `a(c, b)` for
    /// b >= c and leaves untrained-yet cells empty. Fixed 6-decimal
    /// formatting keeps identical runs byte-identical.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task");
        for b in 1..=self.k {
            out.push_str(&format!(",after_{b}"));
        }
        out.push('\n');
        for c in 1..=self.k {
            out.push_str(&c.to_string());
            for b in 1..=self.k {
                out.push(',');
                if b >= c {
                    out.push_str(&format!("{:.6}", self.rows[c - 1][b - c]));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<AccuracyMatrix> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Param("empty accuracy csv".into()))?;
        let k = header.split(',').count() - 1;
        let mut rows = Vec::new();
        for (ci, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != k + 1 {
                return Err(Error::Param(format!(
                    "csv row {} has {} fields, want {}",
                    ci + 1,
                    fields.len(),
                    k + 1
                )));
            }
            let mut row = Vec::new();
            for (b, f) in fields[1..].iter().enumerate() {
                let f = f.trim();
                if b + 1 < ci + 1 {
                    if !f.is_empty() {
                        return Err(Error::Param(format!(
                            "csv row {} has a value in untrained cell after_{}",
                            ci + 1,
                            b + 1
                        )));
                    }
                } else {
                    row.push(f.parse::<f64>().map_err(|e| {
                        Error::Param(format!("csv row {}: {e}", ci + 1))
                    })?);
                }
            }
            rows.push(row);
        }
        Self::from_rows(rows)
    }
}

/// The summary numbers reported for one run, all as fractions in [0,1]
/// (forgetting can be negative when later tasks lift earlier ones).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub last_accuracy: f64,
    pub avg_incremental_accuracy: f64,
    pub avg_global_forgetting: f64,
    pub classical_avg_forgetting: f64,
    /// `A_b` for b in 1..=K.
    pub avg_accuracy_after: Vec<f64>,
    /// `F_G(k)` for k in 1..=K.
    pub global_forgetting: Vec<f64>,
}

impl MetricsReport {
    pub fn from_matrix(m: &AccuracyMatrix) -> Result<MetricsReport> {
        Ok(MetricsReport {
            last_accuracy: m.last_accuracy()?,
            avg_incremental_accuracy: m.avg_incremental_accuracy()?,
            avg_global_forgetting: m.avg_global_forgetting()?,
            classical_avg_forgetting: m.classical_avg_forgetting()?,
            avg_accuracy_after: (1..=m.num_tasks())
                .map(|b| m.avg_accuracy_after(b))
                .collect::<Result<_>>()?,
            global_forgetting: m.global_forgetting()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn two_task() -> AccuracyMatrix {
        // a(1,1)=0.9; after task 2: a(1,2)=0.6, a(2,2)=0.8
        AccuracyMatrix::from_columns(&[vec![0.9], vec![0.6, 0.8]]).unwrap()
    }

    #[test]
    fn worked_two_task_numbers() {
        let m = two_task();
        assert_eq!(m.a(1, 1).unwrap(), 0.9);
        assert_eq!(m.a(1, 2).unwrap(), 0.6);
        assert!((m.avg_accuracy_after(1).unwrap() - 0.9).abs() < 1e-12);
        assert!((m.avg_accuracy_after(2).unwrap() - 0.7).abs() < 1e-12);
        assert!((m.last_accuracy().unwrap() - 0.7).abs() < 1e-12);
        assert!((m.avg_incremental_accuracy().unwrap() - 0.8).abs() < 1e-12);
        let f = m.global_forgetting().unwrap();
        assert_eq!(f.len(), 2);
        assert!(f[0].abs() < 1e-12, "A_0 := A_1 so F_G(1) = 0");
        assert!((f[1] - 0.2).abs() < 1e-12);
        assert!((m.avg_global_forgetting().unwrap() - 0.1).abs() < 1e-12);
        // classical: max over b of a(1,b) = 0.9, minus a(1,2) = 0.6
        assert!((m.classical_avg_forgetting().unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_task_degenerates() {
        let m = AccuracyMatrix::from_columns(&[vec![0.95]]).unwrap();
        assert_eq!(m.last_accuracy().unwrap(), 0.95);
        assert_eq!(m.avg_incremental_accuracy().unwrap(), 0.95);
        assert_eq!(m.avg_global_forgetting().unwrap(), 0.0);
        assert_eq!(m.classical_avg_forgetting().unwrap(), 0.0);
    }

    #[test]
    fn negative_forgetting_when_later_training_helps() {
        let m = AccuracyMatrix::from_columns(&[vec![0.5], vec![0.9, 0.9]]).unwrap();
        let f = m.global_forgetting().unwrap();
        assert!(f[1] < 0.0);
    }

    #[test]
    fn out_of_triangle_and_malformed_inputs_error() {
        let m = two_task();
        assert!(m.a(2, 1).is_err());
        assert!(m.a(0, 1).is_err());
        assert!(m.a(1, 3).is_err());
        assert!(m.avg_accuracy_after(0).is_err());
        assert!(AccuracyMatrix::from_columns(&[]).is_err());
        assert!(AccuracyMatrix::from_columns(&[vec![0.5, 0.5]]).is_err());
        assert!(AccuracyMatrix::from_columns(&[vec![1.5]]).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![0.5], vec![0.5]]).is_err());
    }

    /// Brute-force re-computation straight from the definitions, kept free
    /// of the shortcuts the implementation may take.
    fn oracle(m: &AccuracyMatrix) -> (f64, f64, Vec<f64>, f64) {
        let k = m.num_tasks();
        let avg = |b: usize| -> f64 {
            (1..=b).map(|c| m.a(c, b).unwrap()).sum::<f64>() / b as f64
        };
        let la = avg(k);
        let aia = (1..=k).map(avg).sum::<f64>() / k as f64;
        let mut fg = vec![0.0];
        for t in 2..=k {
            fg.push(avg(t - 1) - avg(t));
        }
        let favg = fg.iter().sum::<f64>() / k as f64;
        (la, aia, fg, favg)
    }

    #[test]
    fn matches_definition_oracle_on_random_matrices() {
        let mut r = rng::stream(99, 1);
        for trial in 0..200 {
            let k = 1 + (trial % 7);
            let cols: Vec<Vec<f64>> = (1..=k)
                .map(|b| {
                    (0..b)
                        .map(|_| 0.5 + 0.5 * rng::uniform_sym(&mut r, 1.0) as f64)
                        .collect()
                })
                .collect();
            let m = AccuracyMatrix::from_columns(&cols).unwrap();
            let (la, aia, fg, favg) = oracle(&m);
            assert!((m.last_accuracy().unwrap() - la).abs() < 1e-12);
            assert!((m.avg_incremental_accuracy().unwrap() - aia).abs() < 1e-12);
            for (a, b) in m.global_forgetting().unwrap().iter().zip(&fg) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((m.avg_global_forgetting().unwrap() - favg).abs() < 1e-12);

            // telescoping identity
            let a1 = m.avg_accuracy_after(1).unwrap();
            let ak = m.last_accuracy().unwrap();
            assert!((m.avg_global_forgetting().unwrap() - (a1 - ak) / k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_round_trip_and_layout() {
        let m = two_task();
        let csv = m.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "task,after_1,after_2");
        assert_eq!(lines.next().unwrap(), "1,0.900000,0.600000");
        assert_eq!(lines.next().unwrap(), "2,,0.800000");
        let back = AccuracyMatrix::from_csv(&csv).unwrap();
        assert_eq!(back, m);

        // a value smuggled into the untrained corner is rejected
        let bad = csv.replace("2,,", "2,0.1,");
        assert!(AccuracyMatrix::from_csv(&bad).is_err());
        assert!(AccuracyMatrix::from_csv("").is_err());
    }

    #[test]
    fn csv_is_deterministic() {
        let a = two_task().to_csv();
        let b = two_task().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn report_collects_everything() {
        let rep = MetricsReport::from_matrix(&two_task()).unwrap();
        assert!((rep.last_accuracy - 0.7).abs() < 1e-12);
        assert!((rep.avg_incremental_accuracy - 0.8).abs() < 1e-12);
        assert_eq!(rep.avg_accuracy_after.len(), 2);
        assert_eq!(rep.global_forgetting.len(), 2);
        let text = serde_json::to_string(&rep).unwrap();
        let back: MetricsReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back.last_accuracy, rep.last_accuracy);
    }
}
