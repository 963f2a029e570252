//! Test error, the delta and q metrics, and the Oracle baseline.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{Dataset, LabeledRows};
use crate::error::{Error, Result};
use crate::learner::{cv_errors, error_rate, Examples};
use crate::protocol::CommLedger;

/// Significance level of the multiple-testing correction.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Per-fold test errors of one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldErrors {
    pub learner: String,
    pub errors: Vec<f64>,
}

impl FoldErrors {
    pub fn new(learner: impl Into<String>, errors: Vec<f64>) -> Result<Self> {
        if errors.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::InvalidArgument(
                "fold errors must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            learner: learner.into(),
            errors,
        })
    }

    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }
}

/// Fraction of rows misclassified by `sign(θᵀx)`.
pub fn test_error(theta: &DVector<f64>, data: &impl LabeledRows) -> Result<f64> {
    error_rate(theta, data)
}

/// DRL error minus the best peer's error. Negative means DRL beats every
/// peer.
pub fn delta_metric(drl_err: f64, peer_errs: &[f64]) -> Result<f64> {
    let best = peer_errs
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(Error::Empty("peer errors"))?;
    Ok(drl_err - best)
}

/// One-sided paired t-test of `H1: mean(a - b) < 0`.
///
/// A zero-variance difference gives p = 0 when the mean difference is
/// negative and p = 1 otherwise.
pub fn paired_t_test_less(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(if mean < 0.0 { 0.0 } else { 1.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.cdf(t))
}

/// Benjamini–Hochberg step-up procedure: rejects the `k` smallest p-values
/// for the largest `k` with `p_(k) <= k·alpha/n`.
pub fn benjamini_hochberg(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let n = p_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]).then(i.cmp(&j)));
    let cutoff = (1..=n)
        .rev()
        .find(|&k| p_values[order[k - 1]] <= k as f64 * alpha / n as f64)
        .unwrap_or(0);
    let mut rejected = vec![false; n];
    for &i in &order[..cutoff] {
        rejected[i] = true;
    }
    rejected
}

/// Fraction of hypotheses rejected by Benjamini–Hochberg at `alpha`.
pub fn q_from_p_values(p_values: &[f64], alpha: f64) -> Result<f64> {
    if p_values.is_empty() {
        return Err(Error::Empty("p-values"));
    }
    let rejected = benjamini_hochberg(p_values, alpha)
        .into_iter()
        .filter(|&r| r)
        .count();
    Ok(rejected as f64 / p_values.len() as f64)
}

/// Proportion of peers statistically beaten by DRL: one-sided paired
/// t-tests on the fold errors, corrected with Benjamini–Hochberg.
pub fn q_metric(drl: &FoldErrors, peers: &[FoldErrors], alpha: f64) -> Result<f64> {
    let p_values = peers
        .iter()
        .map(|peer| paired_t_test_less(&drl.errors, &peer.errors))
        .collect::<Result<Vec<_>>>()?;
    q_from_p_values(&p_values, alpha)
}

/// The Oracle: the peer protocol's cross-validation, run on the complete
/// sample with all `d` features.
pub fn oracle_baseline(
    full_data: &Dataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<FoldErrors> {
    let errors = cv_errors(&Examples::from_rows(full_data), grid, folds, seed)?;
    FoldErrors::new("oracle", errors)
}

/// Summary of one experiment cell and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub domain: String,
    pub p: usize,
    pub dim_j: usize,
    pub b: usize,
    pub p_s: f64,
    pub seed: u64,
    pub m: usize,
    pub d: usize,
    pub drl_error: f64,
    pub oracle_error: f64,
    pub peer_errors: Vec<f64>,
    pub best_peer_error: f64,
    pub delta: f64,
    pub q: f64,
    /// Paired one-sided test of DRL against the Oracle, at the same alpha.
    pub drl_beats_oracle: bool,
    pub oracle_beats_drl: bool,
    pub mean_blocks: f64,
    pub ledger: CommLedger,
    /// Whether every crafting session sent at most `m*·d` scalars, and
    /// fewer than `m·d` when `m* < m`.
    pub comm_bound_holds: bool,
    pub gammas: Vec<f64>,
    pub fold_errors: Vec<FoldErrors>,
}
