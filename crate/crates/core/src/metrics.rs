//! Run records, forgetting summaries (Ω) and distance correlation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::continual::Method;
use crate::error::{CoreError, Result};

/// One evaluation row. `a_prev`, `cpcf` and `q_alpha` are absent on the base
/// row. `a_base`, `a_all` and `param_hash` are in-memory extras that the CSV
/// schema does not carry.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    pub dataset: String,
    pub method: Method,
    pub task_index: usize,
    pub epoch: usize,
    pub a_prev: Option<f64>,
    pub a_new: f64,
    pub cpcf: Option<f64>,
    pub q_alpha: Option<f64>,
    pub alpha: f64,
    pub calib_ratio: f64,
    pub lr: f64,
    pub lambda: f64,
    pub a_base: Option<f64>,
    pub a_all: Option<f64>,
    pub param_hash: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<RunRecord>,
}

impl RunLog {
    pub fn new(records: Vec<RunRecord>) -> Self {
        RunLog { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn run_id(&self) -> Option<&str> {
        self.records.first().map(|r| r.run_id.as_str())
    }

    /// Stable sort by `(task_index, epoch)`.
    pub fn sort(&mut self) {
        self.records.sort_by_key(|r| (r.task_index, r.epoch));
    }

    /// Last-epoch record of every task present, ordered by task.
    pub fn end_of_task(&self) -> Vec<&RunRecord> {
        let mut last: BTreeMap<usize, &RunRecord> = BTreeMap::new();
        for r in &self.records {
            match last.get(&r.task_index) {
                Some(prev) if prev.epoch > r.epoch => {}
                _ => {
                    last.insert(r.task_index, r);
                }
            }
        }
        last.into_values().collect()
    }

    /// `(a_prev, cpcf)` pairs in task/epoch order, skipping rows without them.
    pub fn aprev_cpcf_series(&self) -> (Vec<f64>, Vec<f64>) {
        let mut rows: Vec<&RunRecord> = self.records.iter().collect();
        rows.sort_by_key(|r| (r.task_index, r.epoch));
        rows.iter()
            .filter_map(|r| Some((r.a_prev?, r.cpcf?)))
            .unzip()
    }
}

/// Forgetting summaries over the incremental tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaReport {
    pub omega_new: f64,
    pub omega_all: f64,
    pub omega_base: f64,
    pub omega_prev: f64,
    pub a_ideal: f64,
    pub tasks: usize,
}

/// Ω metrics from the end-of-task rows of tasks `1..=T`, where `T` is the
/// highest task index in the log. `Ω_new` is the mean `a_new`; the others are
/// means of `a_all`, `a_base` and `a_prev` divided by `a_ideal`.
pub fn omega_metrics(log: &RunLog, a_ideal: f64) -> Result<OmegaReport> {
    if !(a_ideal > 0.0 && a_ideal.is_finite()) {
        return Err(CoreError::contract(format!("a_ideal must be positive, got {a_ideal}")));
    }
    let ends = log.end_of_task();
    let last = match ends.last() {
        Some(r) if r.task_index >= 1 => r.task_index,
        _ => return Err(CoreError::contract("run log has no incremental tasks")),
    };
    let mut gaps = Vec::new();
    let (mut new, mut all, mut base, mut prev) = (0.0, 0.0, 0.0, 0.0);
    for t in 1..=last {
        let row = ends.iter().find(|r| r.task_index == t);
        match row.and_then(|r| Some((r.a_new, r.a_all?, r.a_base?, r.a_prev?))) {
            Some((n, a, b, p)) => {
                new += n;
                all += a;
                base += b;
                prev += p;
            }
            None => gaps.push(t),
        }
    }
    if !gaps.is_empty() {
        return Err(CoreError::contract(format!("missing end-of-task rows for tasks {gaps:?}")));
    }
    let k = last as f64;
    Ok(OmegaReport {
        omega_new: new / k,
        omega_all: all / k / a_ideal,
        omega_base: base / k / a_ideal,
        omega_prev: prev / k / a_ideal,
        a_ideal,
        tasks: last,
    })
}

fn centered_distances(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut d = Vec::with_capacity(n * n);
    for &a in v {
        d.extend(v.iter().map(|&b| (a - b).abs()));
    }
    let row_mean: Vec<f64> = d.chunks(n).map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            // the distance matrix is symmetric, so column means equal row means
            d[i * n + j] += grand - row_mean[i] - row_mean[j];
        }
    }
    d
}

/// Sample distance correlation (V-statistic, double-centered distance
/// matrices). Returns 0 when either series is constant.
pub fn distance_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(CoreError::contract(format!("series lengths differ: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(CoreError::contract("distance correlation needs at least 2 points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CoreError::contract("distance correlation input is not finite"));
    }
    let a = centered_distances(x);
    let b = centered_distances(y);
    let nn = a.len() as f64;
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).sum::<f64>() / nn;
    let dcov = dot(&a, &b);
    let vx = dot(&a, &a);
    let vy = dot(&b, &b);
    if vx <= 0.0 || vy <= 0.0 {
        return Ok(0.0);
    }
    let r2 = dcov.max(0.0) / libm::sqrt(vx * vy);
    Ok(libm::sqrt(r2).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    CalibRatio,
    Alpha,
}

impl GroupBy {
    fn key(self, r: &RunRecord) -> f64 {
        match self {
            GroupBy::CalibRatio => r.calib_ratio,
            GroupBy::Alpha => r.alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Concatenate all runs of a cell, then compute one dCor.
    Pooled,
    /// Compute dCor per run and average.
    MeanOfRuns,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationCell {
    pub group: f64,
    pub dataset: String,
    pub method: Method,
    /// `None` when there are fewer than two points to correlate.
    pub dcor: Option<f64>,
    pub points: usize,
    pub runs: usize,
}

/// dCor between `a_prev` and CPCF for every (group, dataset, method) cell.
/// Output is sorted by group, dataset, then method, and does not depend on
/// the order of `logs`.
pub fn correlation_table(logs: &[RunLog], group_by: GroupBy, pooling: Pooling) -> Vec<CorrelationCell> {
    let mut sorted: Vec<&RunLog> = logs.iter().filter(|l| !l.is_empty()).collect();
    sorted.sort_by(|a, b| a.run_id().cmp(&b.run_id()));

    type Key = (u64, String, Method);
    let mut cells: BTreeMap<Key, Vec<(Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for log in sorted {
        let first = &log.records[0];
        let key = (order_key(group_by.key(first)), first.dataset.clone(), first.method);
        cells.entry(key).or_default().push(log.aprev_cpcf_series());
    }

    cells
        .into_iter()
        .map(|((g, dataset, method), runs)| {
            let points = runs.iter().map(|r| r.0.len()).sum();
            let dcor = match pooling {
                Pooling::Pooled => {
                    let x: Vec<f64> = runs.iter().flat_map(|r| r.0.iter().copied()).collect();
                    let y: Vec<f64> = runs.iter().flat_map(|r| r.1.iter().copied()).collect();
                    distance_correlation(&x, &y).ok()
                }
                Pooling::MeanOfRuns => {
                    let per: Vec<f64> = runs.iter().filter_map(|(x, y)| distance_correlation(x, y).ok()).collect();
                    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
                }
            };
            CorrelationCell {
                group: from_order_key(g),
                dataset,
                method,
                dcor,
                points,
                runs: runs.len(),
            }
        })
        .collect()
}

// total order on f64 that sorts like the numbers themselves
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_order_key(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}
