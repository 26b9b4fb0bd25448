//! AUC, the cross-task AUC matrix, average AUC, forgetting, and timing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_to_string, write_atomic};

/// Mann–Whitney AUC with average ranks for ties.
///
/// Equals `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)` over all positive/negative pairs.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their average
        let avg = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum_pos += avg * pos_in_group as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// `AUC[i][j]`: test AUC on task `j` after training stage `i`, for `j <= i` (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucMatrix {
    n: usize,
    entries: Vec<Option<f64>>,
}

impl AucMatrix {
    pub fn new(n: usize) -> Self {
        AucMatrix {
            n,
            entries: vec![None; n * n],
        }
    }

    /// Builds a complete matrix from lower-triangular rows (`rows[i].len() == i + 1`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let mut m = AucMatrix::new(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.len() != i + 1 {
                return Err(Error::Shape(format!("row {i} has {} entries, expected {}", row.len(), i + 1)));
            }
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v)?;
            }
        }
        Ok(m)
    }

    pub fn num_tasks(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, stage: usize, task: usize, value: f64) -> Result<()> {
        if stage >= self.n || task > stage {
            return Err(Error::Shape(format!(
                "AUC entry ({stage}, {task}) outside the lower triangle of {}",
                self.n
            )));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Shape(format!("AUC value {value} outside [0, 1]")));
        }
        self.entries[stage * self.n + task] = Some(value);
        Ok(())
    }

    pub fn get(&self, stage: usize, task: usize) -> Option<f64> {
        if stage < self.n && task <= stage {
            self.entries[stage * self.n + task]
        } else {
            None
        }
    }

    fn require(&self, stage: usize, task: usize) -> Result<f64> {
        self.get(stage, task).ok_or_else(|| {
            Error::UndefinedMetric(format!("AUC matrix entry ({stage}, {task}) is missing"))
        })
    }

    pub fn is_complete(&self) -> bool {
        (0..self.n).all(|i| (0..=i).all(|j| self.get(i, j).is_some()))
    }

    /// Row `stage`, or `None` if any entry is missing.
    pub fn row(&self, stage: usize) -> Option<Vec<f64>> {
        (0..=stage).map(|j| self.get(stage, j)).collect()
    }

    /// Rows are training stages, columns are tasks; cells above the diagonal are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage");
        for j in 0..self.n {
            let _ = write!(s, ",task_{}", j + 1);
        }
        s.push('\n');
        for i in 0..self.n {
            let _ = write!(s, "{}", i + 1);
            for j in 0..self.n {
                match self.get(i, j) {
                    Some(v) => {
                        let _ = write!(s, ",{v:?}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::Parse {
            path: "<auc matrix>".into(),
            line,
            message: m.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty"))?;
        let n = header.split(',').count() - 1;
        let mut m = AucMatrix::new(n);
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 1 {
                return Err(bad(i + 2, "wrong field count"));
            }
            for (j, f) in fields[1..].iter().enumerate() {
                if !f.is_empty() {
                    let v: f64 = f.parse().map_err(|_| bad(i + 2, "bad value"))?;
                    m.set(i, j, v).map_err(|_| bad(i + 2, "entry outside lower triangle"))?;
                }
            }
        }
        Ok(m)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&read_to_string(path)?)
    }
}

/// Mean of the final row: `(1/N) Σ_i AUC[N][i]`.
pub fn avg_auc(m: &AucMatrix) -> Result<f64> {
    let n = m.num_tasks();
    if n == 0 {
        return Err(Error::UndefinedMetric("empty AUC matrix".into()));
    }
    let mut s = 0.0;
    for j in 0..n {
        s += m.require(n - 1, j)?;
    }
    Ok(s / n as f64)
}

/// Average forgetting: `(1/(N−1)) Σ_{i<N} (AUC[i][i] − AUC[N][i])`. Negative means backward transfer.
pub fn fgt(m: &AucMatrix) -> Result<f64> {
    let n = m.num_tasks();
    if n < 2 {
        return Err(Error::UndefinedMetric("forgetting needs at least two tasks".into()));
    }
    let mut s = 0.0;
    for i in 0..n - 1 {
        s += m.require(i, i)? - m.require(n - 1, i)?;
    }
    Ok(s / (n - 1) as f64)
}

/// Per-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    pub seed: u64,
    pub avg_auc: f64,
    pub fgt: Option<f64>,
    /// `trajectory[i]` is row `i` of the AUC matrix.
    pub trajectory: Vec<Vec<f64>>,
    pub metadata: serde_json::Value,
}

impl MetricsReport {
    pub fn from_matrix(strategy: &str, seed: u64, m: &AucMatrix, metadata: serde_json::Value) -> Result<Self> {
        let trajectory = (0..m.num_tasks())
            .map(|i| m.row(i).ok_or_else(|| Error::UndefinedMetric(format!("AUC matrix row {i} incomplete"))))
            .collect::<Result<_>>()?;
        Ok(MetricsReport {
            strategy: strategy.to_string(),
            seed,
            avg_auc: avg_auc(m)?,
            fgt: if m.num_tasks() >= 2 { Some(fgt(m)?) } else { None },
            trajectory,
            metadata,
        })
    }
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN, count: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std, count: n }
    }
}

/// Accumulated wall time per label. Sections with the same label add up.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub sections: BTreeMap<String, Duration>,
    pub storage_bytes: usize,
}

impl ResourceReport {
    pub fn time_section<T>(&mut self, label: &str, thunk: impl FnOnce() -> T) -> T {
        let (out, elapsed) = time_section(thunk);
        *self.sections.entry(label.to_string()).or_default() += elapsed;
        out
    }

    pub fn seconds(&self, label: &str) -> f64 {
        self.sections.get(label).map_or(0.0, Duration::as_secs_f64)
    }

    pub fn merge(&mut self, other: &ResourceReport) {
        for (k, v) in &other.sections {
            *self.sections.entry(k.clone()).or_default() += *v;
        }
        self.storage_bytes = self.storage_bytes.max(other.storage_bytes);
    }
}

/// Runs `thunk` and returns its result with the elapsed monotonic wall time.
pub fn time_section<T>(thunk: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = thunk();
    (out, start.elapsed())
}

/// Divides every column by its minimum so the smallest entry is exactly 1.
/// Columns whose minimum is zero are left unnormalized.
pub fn normalize_columns(rows: &mut [Vec<f64>]) {
    let cols = rows.first().map_or(0, Vec::len);
    for c in 0..cols {
        let min = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min);
        if min > 0.0 && min.is_finite() {
            for r in rows.iter_mut() {
                r[c] = if r[c] == min { 1.0 } else { r[c] / min };
            }
        }
    }
}
