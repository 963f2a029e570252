//! Losses, closed-form solvers and cross-validation, on examples and on
//! crafted rados.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledRows, PeerView};
use crate::error::{Error, Result};
use crate::folds::{fold_count, plain_folds, split_fold, stratified_folds};
use crate::linalg::solve_spd;
use crate::rado::RadoSet;

/// The regularization grid used throughout the experiments.
pub const DEFAULT_GAMMA_GRID: [f64; 3] = [0.01, 1.0, 100.0];

/// Diagonal SPD regularizer `Γ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    diag: DVector<f64>,
}

impl Regularizer {
    pub fn new(diag: DVector<f64>) -> Result<Self> {
        if diag.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidArgument(
                "regularizer entries must be finite and > 0".into(),
            ));
        }
        Ok(Self { diag })
    }

    /// `γ · Id`.
    pub fn scaled_identity(dim: usize, gamma: f64) -> Result<Self> {
        Self::new(DVector::from_element(dim, gamma))
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// `θᵀ Γ θ`.
    pub fn penalty(&self, theta: &DVector<f64>) -> f64 {
        theta
            .iter()
            .zip(self.diag.iter())
            .map(|(t, g)| g * t * t)
            .sum()
    }
}

/// Unit weight on shared features and `gamma` on the others.
pub fn make_drl_regularizer(dim: usize, shared_idx: &[usize], gamma: f64) -> Result<Regularizer> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gamma must be > 0, got {gamma}"
        )));
    }
    let mut diag = DVector::from_element(dim, gamma);
    for &k in shared_idx {
        if k >= dim {
            return Err(Error::IndexOutOfRange { index: k, dim });
        }
        diag[k] = 1.0;
    }
    Regularizer::new(diag)
}

/// Who produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "peer", rename_all = "snake_case")]
pub enum TrainedOn {
    Peer(usize),
    Drl,
    Oracle,
}

/// A linear classifier over the global feature indices in `features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub theta: DVector<f64>,
    pub features: Vec<usize>,
    pub trained_on: TrainedOn,
    pub gamma: f64,
}

impl Model {
    pub fn predict(&self, x: &DVector<f64>) -> Label {
        predict(&self.theta, x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// `sign(θᵀx)` with `sign(0) = +1`.
pub fn predict(theta: &DVector<f64>, x: &DVector<f64>) -> Label {
    if theta.dot(x) >= 0.0 {
        1
    } else {
        -1
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Ridge-regularized square loss `(1/m) Σ (1 - y θᵀx)² + θᵀΓθ`.
pub fn square_loss(
    data: &impl LabeledRows,
    theta: &DVector<f64>,
    reg: &Regularizer,
) -> Result<f64> {
    let d = data.rows().ncols();
    check_dim(d, theta.len())?;
    check_dim(d, reg.dim())?;
    if data.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let scores = data.rows() * theta;
    let data_term: f64 = scores
        .iter()
        .zip(data.labels())
        .map(|(s, &y)| (1.0 - f64::from(y) * s).powi(2))
        .sum();
    Ok(data_term / data.len() as f64 + reg.penalty(theta))
}

/// Mean and population variance of `θᵀπ` over a list of rados.
pub fn mean_variance(rados: &[DVector<f64>], theta: &DVector<f64>) -> Result<(f64, f64)> {
    if rados.is_empty() {
        return Err(Error::Empty("rado list"));
    }
    let mut scores = Vec::with_capacity(rados.len());
    for r in rados {
        check_dim(theta.len(), r.len())?;
        scores.push(theta.dot(r));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var))
}

/// M-loss of a rado list: `-(E[θᵀπ] - Var[θᵀπ])`, with the population
/// variance over the list.
///
/// With this normalization the M-loss over all `2^m` rados of a sample `S`
/// satisfies `ℓ_sq(S, θ; 0) = 1 + (4/m) ℓ_M` for every `θ`.
pub fn m_loss(rados: &[DVector<f64>], theta: &DVector<f64>) -> Result<f64> {
    let (mean, var) = mean_variance(rados, theta)?;
    Ok(-(mean - var))
}

/// Regularized M-loss of a rado list built from a sample of `m` examples:
/// `m_loss + (m/4) θᵀΓθ`, so that `ℓ_sq(S, θ; Γ) = 1 + (4/m) ℓ_M`.
pub fn m_loss_regularized(
    rados: &[DVector<f64>],
    theta: &DVector<f64>,
    reg: &Regularizer,
    m: usize,
) -> Result<f64> {
    check_dim(theta.len(), reg.dim())?;
    Ok(m_loss(rados, theta)? + 0.25 * m as f64 * reg.penalty(theta))
}

/// Regularized M-loss over every subset sum of the blocks, computed in
/// closed form: `-½ θᵀB1 + ¼ Σ_i (θᵀb_i)² + (n/4) θᵀΓθ` for `n` blocks.
///
/// This is `(n/4) (ℓ_sq(S', θ; Γ) - 1)` for a surrogate sample `S'` whose
/// edge vectors are the blocks.
pub fn block_m_loss(
    blocks: &[DVector<f64>],
    theta: &DVector<f64>,
    reg: &Regularizer,
) -> Result<f64> {
    if blocks.is_empty() {
        return Err(Error::Empty("block list"));
    }
    check_dim(theta.len(), reg.dim())?;
    let mut linear = 0.0;
    let mut quadratic = 0.0;
    for b in blocks {
        check_dim(theta.len(), b.len())?;
        let s = theta.dot(b);
        linear += s;
        quadratic += s * s;
    }
    let n = blocks.len() as f64;
    Ok(-0.5 * linear + 0.25 * quadratic + 0.25 * n * reg.penalty(theta))
}

fn add_scaled_diag(a: &mut DMatrix<f64>, scale: f64, reg: &Regularizer) {
    for (i, g) in reg.diag().iter().enumerate() {
        a[(i, i)] += scale * g;
    }
}

/// Minimizer of the ridge square loss: solves `(XᵀX + mΓ) θ = Σ y_i x_i`.
pub fn solve_examples(data: &impl LabeledRows, reg: &Regularizer) -> Result<DVector<f64>> {
    let x = data.rows();
    check_dim(x.ncols(), reg.dim())?;
    if data.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let y = DVector::from_iterator(data.len(), data.labels().iter().map(|&l| f64::from(l)));
    let mut a = x.tr_mul(x);
    add_scaled_diag(&mut a, data.len() as f64, reg);
    solve_spd(&a, &x.tr_mul(&y))
}

/// Minimizer of the regularized M-loss over all subset sums of the crafted
/// blocks: solves `(BBᵀ + m*·Γ) θ = B1` with `B` the `d x m*` block matrix.
pub fn solve_rados(rados: &RadoSet, reg: &Regularizer) -> Result<DVector<f64>> {
    if rados.is_empty() {
        return Err(Error::Empty("rado set"));
    }
    check_dim(rados.feature_dim, reg.dim())?;
    let b = rados.matrix();
    let mut a = &b * b.transpose();
    add_scaled_diag(&mut a, rados.len() as f64, reg);
    let rhs = b.column_sum();
    solve_spd(&a, &rhs)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("gamma grid"));
    }
    if grid.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
        return Err(Error::InvalidArgument(
            "gamma grid values must be finite and > 0".into(),
        ));
    }
    Ok(())
}

/// Smallest score wins; ties go to the smallest gamma.
fn argmin_gamma(grid: &[f64], scores: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for (&g, &s) in grid.iter().zip(scores) {
        if s < best.1 || (s == best.1 && g < best.0) {
            best = (g, s);
        }
    }
    best.0
}

/// Held-out regularized M-loss of each gamma, averaged over block folds.
pub fn cv_gamma_rados_scores(
    rados: &RadoSet,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    validate_grid(grid)?;
    if rados.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs at least 2 blocks, got {}",
            rados.len()
        )));
    }
    if rados.len() < folds {
        warn!(
            "only {} blocks; using {} folds instead of {folds}",
            rados.len(),
            rados.len()
        );
    }
    let assignment = plain_folds(rados.len(), folds, seed);
    let k = fold_count(&assignment);
    grid.iter()
        .map(|&gamma| {
            let reg = make_drl_regularizer(rados.feature_dim, &rados.shared_idx, gamma)?;
            let mut total = 0.0;
            for f in 0..k {
                let (train, test) = split_fold(&assignment, f);
                let theta = solve_rados(&rados.subset(&train), &reg)?;
                total += block_m_loss(&rados.subset(&test).vectors(), &theta, &reg)?;
            }
            Ok(total / k as f64)
        })
        .collect()
}

/// Picks the gamma of the block regularizer by cross-validation on the
/// crafted blocks. With a single block there is nothing to hold out and the
/// smallest gamma is returned.
pub fn cv_gamma_rados(rados: &RadoSet, grid: &[f64], folds: usize, seed: u64) -> Result<f64> {
    validate_grid(grid)?;
    if rados.len() < 2 {
        warn!(
            "{} block(s): cannot cross-validate, using the smallest gamma",
            rados.len()
        );
        return Ok(grid.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let scores = cv_gamma_rados_scores(rados, grid, folds, seed)?;
    Ok(argmin_gamma(grid, &scores))
}

/// Examples held as a plain matrix, used for fold subsets.
#[derive(Debug, Clone)]
pub struct Examples {
    pub rows: DMatrix<f64>,
    pub labels: Vec<Label>,
}

impl Examples {
    pub fn from_rows(data: &impl LabeledRows) -> Self {
        Self {
            rows: data.rows().clone(),
            labels: data.labels().to_vec(),
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            rows: self.rows.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

impl LabeledRows for Examples {
    fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    fn labels(&self) -> &[Label] {
        &self.labels
    }
}

/// Fraction of rows with `sign(θᵀx) != y`.
pub fn error_rate(theta: &DVector<f64>, data: &impl LabeledRows) -> Result<f64> {
    check_dim(data.rows().ncols(), theta.len())?;
    if data.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let scores = data.rows() * theta;
    let wrong = scores
        .iter()
        .zip(data.labels())
        .filter(|&(&s, &y)| (if s >= 0.0 { 1 } else { -1 }) != y)
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

fn has_both_classes(labels: &[Label]) -> bool {
    labels.contains(&1) && labels.contains(&-1)
}

/// Fits a ridge classifier with `Γ = γ·Id`, choosing `γ` by stratified
/// cross-validation on held-out error (ties to the smallest gamma).
pub fn fit_examples_cv(
    data: &impl LabeledRows,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(DVector<f64>, f64)> {
    validate_grid(grid)?;
    if !has_both_classes(data.labels()) {
        return Err(Error::SingleClass("training sample".into()));
    }
    let examples = Examples::from_rows(data);
    let d = examples.rows.ncols();
    let assignment = stratified_folds(&examples.labels, folds, seed);
    let k = fold_count(&assignment);
    let mut scores = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let reg = Regularizer::scaled_identity(d, gamma)?;
        let mut errors = 0.0;
        for f in 0..k {
            let (train, test) = split_fold(&assignment, f);
            let theta = solve_examples(&examples.subset(&train), &reg)?;
            errors += error_rate(&theta, &examples.subset(&test))?;
        }
        scores.push(errors / k as f64);
    }
    let gamma = argmin_gamma(grid, &scores);
    let theta = solve_examples(&examples, &Regularizer::scaled_identity(d, gamma)?)?;
    Ok((theta, gamma))
}

/// A peer's baseline: stratified `folds`-fold cross-validation on its own
/// examples, with an inner gamma search in each training part. Returns the
/// model refit on all local examples and the held-out error of every fold.
pub fn cv_peer_baseline(
    view: &PeerView,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(Model, Vec<f64>)> {
    if !has_both_classes(view.labels()) {
        return Err(Error::SingleClass(format!("peer {}", view.peer_id())));
    }
    let examples = Examples::from_rows(view);
    let errors = cv_errors(&examples, grid, folds, seed)?;
    let (theta, gamma) = fit_examples_cv(&examples, grid, folds, seed)?;
    let model = Model {
        theta,
        features: view.feature_idx().to_vec(),
        trained_on: TrainedOn::Peer(view.peer_id()),
        gamma,
    };
    Ok((model, errors))
}

/// Outer cross-validated errors of [`fit_examples_cv`].
pub fn cv_errors(examples: &Examples, grid: &[f64], folds: usize, seed: u64) -> Result<Vec<f64>> {
    let assignment = stratified_folds(&examples.labels, folds, seed);
    (0..fold_count(&assignment))
        .map(|f| {
            let (train, test) = split_fold(&assignment, f);
            let (theta, _) = fit_examples_cv(
                &examples.subset(&train),
                grid,
                folds,
                seed.wrapping_add(f as u64 + 1),
            )?;
            error_rate(&theta, &examples.subset(&test))
        })
        .collect()
}
