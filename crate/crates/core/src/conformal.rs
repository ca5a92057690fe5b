//! Adaptive conformal prediction and the CPCF forgetting measure.
//!
//! A calibration point's score is the softmax mass accumulated, in descending
//! probability order, up to and including its true label. The threshold
//! `q_alpha` is the `ceil((n + 1)(1 - alpha)) / n` empirical quantile of those
//! scores. A test point's prediction set is the shortest descending prefix
//! whose mass reaches `q_alpha`, and CPCF is the mean set size over the test
//! samples of all previously learned tasks.
//!
//! Probability ties are ranked by lower class index everywhere.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::LabeledSet;
use crate::error::{CoreError, Result};
use crate::math::Matrix;
use crate::mlp::MlpModel;

/// Class indices sorted by descending probability, ties to the lower index.
pub fn descending_order(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| match probs[b].partial_cmp(&probs[a]) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    order
}

/// Cumulative descending mass through the rank of `true_label`, in `(0, 1]`.
pub fn conformal_score(probs: &[f64], true_label: usize) -> f64 {
    let mut cum = 0.0;
    for c in descending_order(probs) {
        cum += probs[c];
        if c == true_label {
            break;
        }
    }
    cum.min(1.0)
}

/// Finite-sample adjusted quantile of `scores` at level
/// `ceil((n + 1)(1 - alpha)) / n`; 1.0 when that level exceeds one.
pub fn fit_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(CoreError::contract("fit_quantile needs at least one score"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CoreError::contract(format!("alpha {alpha} outside (0, 1)")));
    }
    let n = scores.len();
    let rank = quantile_rank(n, alpha);
    if rank > n {
        return Ok(1.0);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    Ok(sorted[rank - 1])
}

/// `ceil((n + 1)(1 - alpha))`, the 1-based order statistic picked by
/// [`fit_quantile`]. Values above `n` mean the level exceeds one.
pub fn quantile_rank(n: usize, alpha: f64) -> usize {
    let raw = (n as f64 + 1.0) * (1.0 - alpha);
    // (n + 1)(1 - alpha) is often an integer in exact arithmetic (n = 9,
    // alpha = 0.1) but lands a few ulps above it in floating point
    let nearest = libm::round(raw);
    let level = if (raw - nearest).abs() <= 1e-9 * raw.abs().max(1.0) {
        nearest
    } else {
        libm::ceil(raw)
    };
    (level as usize).max(1)
}

/// Calibration scores with their fitted threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalCalibrator {
    scores: Vec<f64>,
    alpha: f64,
    q_alpha: f64,
}

impl ConformalCalibrator {
    pub fn fit(scores: Vec<f64>, alpha: f64) -> Result<Self> {
        let q_alpha = fit_quantile(&scores, alpha)?;
        Ok(ConformalCalibrator { scores, alpha, q_alpha })
    }

    /// Scores every row of `probs` against its label and fits the threshold.
    pub fn from_probs(probs: &Matrix, labels: &[usize], alpha: f64) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(CoreError::shape("calibrate", probs.shape(), (labels.len(), 1)));
        }
        let scores = probs.iter_rows().zip(labels).map(|(p, &y)| conformal_score(p, y)).collect();
        ConformalCalibrator::fit(scores, alpha)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn q_alpha(&self) -> f64 {
        self.q_alpha
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn predict(&self, probs: &[f64]) -> PredictionSet {
        prediction_set(probs, self.q_alpha)
    }
}

/// Classes of the shortest descending prefix reaching the threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionSet {
    classes: Vec<usize>,
}

impl PredictionSet {
    /// Members, ascending.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn size(&self) -> usize {
        self.classes.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.classes.binary_search(&class).is_ok()
    }
}

/// Smallest `K` whose top-`K` cumulative mass is `>= q_alpha`. When rounding
/// keeps the total just under the threshold every class is included.
pub fn prediction_set(probs: &[f64], q_alpha: f64) -> PredictionSet {
    let size = prediction_set_size(probs, q_alpha);
    let mut classes: Vec<usize> = descending_order(probs).into_iter().take(size).collect();
    classes.sort_unstable();
    PredictionSet { classes }
}

/// Size of [`prediction_set`] without building the set.
pub fn prediction_set_size(probs: &[f64], q_alpha: f64) -> usize {
    let mut cum = 0.0;
    for (k, c) in descending_order(probs).into_iter().enumerate() {
        cum += probs[c];
        if cum >= q_alpha {
            return k + 1;
        }
    }
    probs.len()
}

/// CPCF value together with the threshold it was computed at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpcfResult {
    pub cpcf: f64,
    pub q_alpha: f64,
}

/// CPCF from precomputed probabilities: fit `q_alpha` on the calibration rows,
/// then average the prediction-set size over the test rows.
pub fn cpcf_from_probs(calib_probs: &Matrix, calib_labels: &[usize], test_probs: &Matrix, alpha: f64) -> Result<CpcfResult> {
    if test_probs.rows() == 0 {
        return Err(CoreError::contract("CPCF needs a nonempty test pool"));
    }
    let cal = ConformalCalibrator::from_probs(calib_probs, calib_labels, alpha)
        .map_err(|e| match e {
            CoreError::Contract(_) if calib_labels.is_empty() => CoreError::contract("CPCF needs a nonempty calibration pool"),
            e => e,
        })?;
    let q = cal.q_alpha();
    let total: usize = test_probs.iter_rows().map(|p| prediction_set_size(p, q)).sum();
    Ok(CpcfResult {
        cpcf: total as f64 / test_probs.rows() as f64,
        q_alpha: q,
    })
}

/// CPCF of `model` over the pooled calibration and test samples of the
/// previously learned tasks.
pub fn cpcf(model: &MlpModel, calib_pool: &LabeledSet, test_pool: &LabeledSet, alpha: f64) -> Result<CpcfResult> {
    if calib_pool.is_empty() || test_pool.is_empty() {
        return Err(CoreError::contract(format!(
            "CPCF needs nonempty pools (calibration {}, test {})",
            calib_pool.len(),
            test_pool.len()
        )));
    }
    let calib_probs = model.predict_proba(calib_pool.x())?;
    let test_probs = model.predict_proba(test_pool.x())?;
    cpcf_from_probs(&calib_probs, calib_pool.y(), &test_probs, alpha)
}

/// Fraction of rows whose label falls inside its prediction set.
pub fn coverage_from_probs(probs: &Matrix, labels: &[usize], q_alpha: f64) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs
        .iter_rows()
        .zip(labels)
        .filter(|(p, &y)| prediction_set(p, q_alpha).contains(y))
        .count();
    hits as f64 / labels.len() as f64
}

/// Empirical coverage of `model`'s prediction sets on `eval_set`.
pub fn coverage_audit(model: &MlpModel, eval_set: &LabeledSet, q_alpha: f64) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(CoreError::contract("coverage audit on an empty set"));
    }
    let probs = model.predict_proba(eval_set.x())?;
    Ok(coverage_from_probs(&probs, eval_set.y(), q_alpha))
}
