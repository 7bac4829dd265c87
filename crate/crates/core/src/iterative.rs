//! Iterative screening: alternate permutation-thresholded (conditional)
//! screening with group-penalized additive refits.
//!
//! Round `l` screens every covariate outside the current model `M_{l-1}`
//! conditionally on it, keeps those beating a fresh permutation threshold
//! (optionally only the best `greedy_cap` of them), and refits a
//! group-lasso additive model on `M_{l-1}` plus the newcomers to obtain `M_l`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::DesignMatrix;
use crate::data::Dataset;
use crate::loss::LossSpec;
use crate::marginal_fit::{fit_joint, fit_joint_design, fit_null, FitError, JointDesign};
use crate::rng::PERMUTATIONS_PER_ROUND;
use crate::screening::{
    check_quantile_level, covariate_design, pooled_quantile, random_permutation, CovariateStatus,
    ScreenConfig, ScreenError, ScreeningResult,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IterError {
    #[error(transparent)]
    Screen(#[from] ScreenError),

    #[error(transparent)]
    Fit(#[from] FitError),

    #[error("invalid option: {0}")]
    Options(String),
}

/// Penalty levels for the group-penalized refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyGrid {
    /// `points` log-spaced values from the smallest penalty that zeroes every
    /// block down to `min_ratio` times that value.
    Auto { points: usize, min_ratio: f64 },
    /// Explicit penalties, used in decreasing order.
    Explicit(#[serde(with = "crate::screening::finite_or_null::named_vec")] Vec<f64>),
}

impl Default for PenaltyGrid {
    fn default() -> Self {
        PenaltyGrid::Auto {
            points: 20,
            min_ratio: 1e-3,
        }
    }
}

impl PenaltyGrid {
    fn resolve(&self, lambda_max: f64) -> Result<Vec<f64>, IterError> {
        match self {
            PenaltyGrid::Auto { points, min_ratio } => {
                if *points == 0 || !(*min_ratio > 0.0 && *min_ratio <= 1.0) {
                    return Err(IterError::Options(
                        "automatic penalty grid needs points >= 1 and min_ratio in (0, 1]".into(),
                    ));
                }
                if *points == 1 {
                    return Ok(vec![lambda_max]);
                }
                Ok((0..*points)
                    .map(|k| lambda_max * min_ratio.powf(k as f64 / (*points - 1) as f64))
                    .collect())
            }
            PenaltyGrid::Explicit(values) => {
                if values.is_empty() || values.iter().any(|v| v.is_nan() || *v < 0.0) {
                    return Err(IterError::Options(
                        "penalty grid must be a nonempty list of nonnegative values".into(),
                    ));
                }
                let mut v = values.clone();
                v.sort_by(|a, b| b.total_cmp(a));
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeOptions {
    /// Stop once the model reaches this size; `None` uses `ceil(n / (d_n ln n))`.
    pub max_model_size: Option<usize>,
    /// Maximum number of covariates admitted per round; `None` for no cap.
    pub greedy_cap: Option<usize>,
    pub n_perm: usize,
    /// Quantile of the pooled permuted statistics used as threshold.
    pub perm_quantile: f64,
    pub penalty_grid: PenaltyGrid,
    pub seed: u64,
    pub max_rounds: usize,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            max_model_size: None,
            greedy_cap: None,
            n_perm: 1,
            perm_quantile: 1.0,
            penalty_grid: PenaltyGrid::default(),
            seed: 0,
            max_rounds: 50,
        }
    }
}

impl IterativeOptions {
    /// Greedy variant admitting one covariate per round.
    pub fn greedy(seed: u64) -> Self {
        Self {
            greedy_cap: Some(1),
            seed,
            ..Self::default()
        }
    }
}

/// `ceil(n / (d_n ln n))`.
pub fn default_max_model_size(n: usize, num_basis: usize) -> usize {
    let n_f = n as f64;
    ((n_f / (num_basis as f64 * n_f.ln())).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `|M_l|` reached the size cap.
    MaxModelSize,
    /// The refit returned the previous model.
    NoChange,
    /// No covariate beat the permutation threshold.
    NoNewCandidates,
    MaxRounds,
    /// The next conditional fit would exceed `n / 2` parameters.
    ModelTooLarge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Covariates admitted by the threshold (`A_l`).
    pub screened: Vec<usize>,
    /// Model after the penalized refit (`M_l`).
    pub selected: Vec<usize>,
    #[serde(with = "crate::screening::finite_or_null::named")]
    pub threshold: f64,
    /// Penalty chosen by the refit, absent when nothing was refitted.
    #[serde(with = "crate::screening::finite_or_null::option")]
    pub penalty: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub rounds: Vec<RoundRecord>,
    pub stop_reason: StopReason,
}

fn parameter_limit_ok(n: usize, model_size: usize, num_basis: usize) -> bool {
    1 + (model_size + 1) * (num_basis - 1) <= n / 2
}

struct ConditionalBase {
    design: JointDesign,
    objective: f64,
}

fn conditional_base(
    data: &Dataset,
    selected: &[usize],
    cfg: &ScreenConfig,
) -> Result<ConditionalBase, IterError> {
    let mut design = JointDesign::intercept_only(data.n());
    for &i in selected {
        let block = covariate_design(data, i, cfg)
            .map_err(|e| {
                IterError::Options(format!("selected covariate {i} cannot be expanded: {e}"))
            })?
            .without_intercept();
        design = design.with_block(&block);
    }
    let objective = if selected.is_empty() {
        fit_null(data.y(), &cfg.loss)?.objective
    } else {
        fit_joint_design(&design, data.y(), &cfg.loss, &cfg.solver)?.objective
    };
    Ok(ConditionalBase { design, objective })
}

fn conditional_stats(
    data: &Dataset,
    selected: &[usize],
    base: &ConditionalBase,
    cfg: &ScreenConfig,
) -> (Vec<f64>, Vec<CovariateStatus>) {
    let per: Vec<(f64, CovariateStatus)> = (0..data.p())
        .into_par_iter()
        .map(|j| {
            if selected.contains(&j) {
                return (f64::NEG_INFINITY, CovariateStatus::InModel);
            }
            let block = match covariate_design(data, j, cfg) {
                Ok(d) => d.without_intercept(),
                Err(_) => return (f64::NEG_INFINITY, CovariateStatus::Degenerate),
            };
            let joint = base.design.with_block(&block);
            match fit_joint_design(&joint, data.y(), &cfg.loss, &cfg.solver) {
                Ok(fit) if fit.objective.is_finite() => {
                    let status = if fit.converged {
                        CovariateStatus::Converged
                    } else {
                        CovariateStatus::NotConverged
                    };
                    (base.objective - fit.objective, status)
                }
                _ => (f64::NEG_INFINITY, CovariateStatus::Failed),
            }
        })
        .collect();
    per.into_iter().unzip()
}

fn check_selected(data: &Dataset, selected: &[usize], cfg: &ScreenConfig) -> Result<(), IterError> {
    cfg.check(data)?;
    if let Some(&j) = selected.iter().find(|&&j| j >= data.p()) {
        return Err(IterError::Options(format!(
            "selected covariate {j} is out of range"
        )));
    }
    if !parameter_limit_ok(data.n(), selected.len(), cfg.num_basis) {
        return Err(FitError::TooManyParameters {
            params: 1 + (selected.len() + 1) * (cfg.num_basis - 1),
            limit: data.n() / 2,
        }
        .into());
    }
    Ok(())
}

/// Statistics of every covariate outside `selected`, conditional on the
/// additive model over `selected`: the drop in mean loss from adding the
/// covariate's intercept-free spline block. Covariates in `selected` get
/// status `InModel` and statistic negative infinity.
pub fn conditional_screen(
    data: &Dataset,
    selected: &[usize],
    cfg: &ScreenConfig,
) -> Result<ScreeningResult, IterError> {
    check_selected(data, selected, cfg)?;
    let base = conditional_base(data, selected, cfg)?;
    let (stats, status) = conditional_stats(data, selected, &base, cfg);
    Ok(ScreeningResult::from_stats(stats, status))
}

/// Permutation threshold for conditional screening: the rows of every
/// covariate outside `selected` are shuffled jointly while `selected` and the
/// response stay aligned.
pub fn conditional_permutation_threshold(
    data: &Dataset,
    selected: &[usize],
    cfg: &ScreenConfig,
    n_perm: usize,
    q: f64,
    seed: u64,
    round: u64,
) -> Result<f64, IterError> {
    if n_perm == 0 {
        return Err(IterError::Options(
            "at least one permutation is required".into(),
        ));
    }
    check_quantile_level(q)?;
    check_selected(data, selected, cfg)?;
    let base = conditional_base(data, selected, cfg)?;
    let mut pool = Vec::with_capacity(n_perm * data.p());
    for r in 0..n_perm as u64 {
        let perm = random_permutation(data.n(), seed, round * PERMUTATIONS_PER_ROUND + r);
        let permuted = data.permute_rows(&perm, |j| !selected.contains(&j));
        let (stats, _) = conditional_stats(&permuted, selected, &base, cfg);
        pool.extend(stats);
    }
    Ok(pooled_quantile(pool, q))
}

/// One orthonormalized, centered spline block of the penalized model.
struct GroupBlock {
    covariate: usize,
    /// row-major `n x size`, columns centered with `Q^T Q / n = I`
    values: Vec<f64>,
    size: usize,
}

impl GroupBlock {
    fn new(design: &DesignMatrix) -> Option<Self> {
        let n = design.nrows();
        let k = design.ncols();
        let mut centered = design.as_slice().to_vec();
        for c in 0..k {
            let mean = (0..n).map(|i| centered[i * k + c]).sum::<f64>() / n as f64;
            for i in 0..n {
                centered[i * k + c] -= mean;
            }
        }
        let z = DMatrix::from_row_slice(n, k, &centered);
        let gram = z.transpose() * &z / n as f64;
        let eig = gram.symmetric_eigen();
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..k)
            .filter(|&c| eig.eigenvalues[c] > 1e-10 * top.max(1e-300))
            .collect();
        if keep.is_empty() {
            return None;
        }
        let size = keep.len();
        let mut transform = DMatrix::zeros(k, size);
        for (out, &c) in keep.iter().enumerate() {
            let scale = 1.0 / eig.eigenvalues[c].sqrt();
            for r in 0..k {
                transform[(r, out)] = eig.eigenvectors[(r, c)] * scale;
            }
        }
        let q = z * transform;
        let mut values = Vec::with_capacity(n * size);
        for i in 0..n {
            for c in 0..size {
                values.push(q[(i, c)]);
            }
        }
        Some(Self {
            covariate: design.column_index(),
            values,
            size,
        })
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    fn weight(&self) -> f64 {
        (self.size as f64).sqrt()
    }
}

/// Group-lasso additive model `mean loss + lambda * sum_g sqrt(|g|) ||b_g||`
/// with an unpenalized intercept, solved by an outer quadratic approximation
/// (Newton weights for smooth losses, majorization weights for the check
/// loss) and inner block coordinate descent.
pub struct GroupLassoProblem<'a> {
    blocks: Vec<GroupBlock>,
    y: &'a [f64],
    loss: LossSpec,
    smoothing_eps: f64,
}

/// Coefficients of a group-lasso fit in the orthonormalized block coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupLassoFit {
    pub intercept: f64,
    pub blocks: Vec<Vec<f64>>,
    pub lambda: f64,
    pub outer_iterations: usize,
}

impl GroupLassoFit {
    pub fn active(&self) -> Vec<usize> {
        (0..self.blocks.len())
            .filter(|&g| self.blocks[g].iter().any(|&b| b != 0.0))
            .collect()
    }
}

impl<'a> GroupLassoProblem<'a> {
    /// Builds the problem over the given covariates. Covariates whose spline
    /// block is numerically constant are dropped.
    pub fn new(
        data: &'a Dataset,
        covariates: &[usize],
        cfg: &ScreenConfig,
    ) -> Result<Self, IterError> {
        let mut blocks = Vec::with_capacity(covariates.len());
        for &j in covariates {
            let design = match covariate_design(data, j, cfg) {
                Ok(d) => d.without_intercept(),
                Err(_) => continue,
            };
            if let Some(block) = GroupBlock::new(&design) {
                blocks.push(block);
            }
        }
        cfg.loss
            .validate_response(data.y())
            .map_err(FitError::from)?;
        Ok(Self {
            blocks,
            y: data.y(),
            loss: cfg.loss,
            smoothing_eps: cfg.solver.smoothing_eps,
        })
    }

    pub fn covariates(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.covariate).collect()
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn predictor(&self, fit: &GroupLassoFit) -> Vec<f64> {
        let mut eta = vec![fit.intercept; self.n()];
        for (block, coef) in self.blocks.iter().zip(&fit.blocks) {
            if coef.iter().all(|&c| c == 0.0) {
                continue;
            }
            for (i, e) in eta.iter_mut().enumerate() {
                *e += block
                    .row(i)
                    .iter()
                    .zip(coef)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
        }
        eta
    }

    fn mean_loss(&self, eta: &[f64]) -> f64 {
        eta.iter()
            .zip(self.y)
            .map(|(&e, &v)| self.loss.value(e, v))
            .sum::<f64>()
            / self.n() as f64
    }

    fn penalty(&self, fit: &GroupLassoFit) -> f64 {
        if fit.lambda == 0.0 {
            return 0.0;
        }
        fit.lambda
            * self
                .blocks
                .iter()
                .zip(&fit.blocks)
                .map(|(b, c)| b.weight() * norm(c))
                .sum::<f64>()
    }

    pub fn objective(&self, fit: &GroupLassoFit) -> f64 {
        self.mean_loss(&self.predictor(fit)) + self.penalty(fit)
    }

    /// Gradient of the mean loss: intercept component and one vector per block.
    fn loss_gradient(&self, eta: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let n = self.n() as f64;
        let d: Vec<f64> = eta
            .iter()
            .zip(self.y)
            .map(|(&e, &v)| self.loss.deriv(e, v))
            .collect();
        let g0 = d.iter().sum::<f64>() / n;
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let mut g = vec![0.0; b.size];
                for (i, &di) in d.iter().enumerate() {
                    for (gc, &x) in g.iter_mut().zip(b.row(i)) {
                        *gc += di * x;
                    }
                }
                g.iter_mut().for_each(|v| *v /= n);
                g
            })
            .collect();
        (g0, blocks)
    }

    /// Smallest penalty at which every block is zero.
    pub fn lambda_max(&self) -> Result<f64, IterError> {
        let b0 = fit_null(self.y, &self.loss)?.intercept.unwrap_or(0.0);
        let eta = vec![b0; self.n()];
        let (_, grads) = self.loss_gradient(&eta);
        Ok(self
            .blocks
            .iter()
            .zip(&grads)
            .map(|(b, g)| norm(g) / b.weight())
            .fold(0.0, f64::max))
    }

    /// Largest violation of the stationarity conditions at `fit`:
    /// the intercept gradient, `grad_g + lambda w_g b_g / ||b_g||` for active
    /// blocks, and `max(0, ||grad_g|| - lambda w_g)` for zero blocks.
    pub fn kkt_violation(&self, fit: &GroupLassoFit) -> f64 {
        let eta = self.predictor(fit);
        let (g0, grads) = self.loss_gradient(&eta);
        let mut worst = g0.abs();
        for ((block, coef), grad) in self.blocks.iter().zip(&fit.blocks).zip(&grads) {
            let nb = norm(coef);
            let lw = fit.lambda * block.weight();
            let v = if nb > 0.0 {
                grad.iter()
                    .zip(coef)
                    .map(|(g, c)| (g + lw * c / nb).powi(2))
                    .sum::<f64>()
                    .sqrt()
            } else {
                (norm(grad) - lw).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn zero_fit(&self, lambda: f64) -> Result<GroupLassoFit, IterError> {
        let intercept = fit_null(self.y, &self.loss)?.intercept.unwrap_or(0.0);
        Ok(GroupLassoFit {
            intercept,
            blocks: self.blocks.iter().map(|b| vec![0.0; b.size]).collect(),
            lambda,
            outer_iterations: 0,
        })
    }

    /// Quadratic model weights and first derivatives in the linear predictor.
    fn local_model(&self, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.loss {
            LossSpec::Quantile { alpha } => {
                let a = alpha.get();
                let mut w = Vec::with_capacity(eta.len());
                let mut g = Vec::with_capacity(eta.len());
                for (&e, &v) in eta.iter().zip(self.y) {
                    let r = v - e;
                    let inv = 1.0 / (self.smoothing_eps + r.abs());
                    w.push(0.5 * inv);
                    g.push(-0.5 * r * inv - a + 0.5);
                }
                (w, g)
            }
            spec => {
                let w = eta
                    .iter()
                    .zip(self.y)
                    .map(|(&e, &v)| spec.curvature(e, v).unwrap_or(0.0).max(1e-12))
                    .collect();
                let g = eta
                    .iter()
                    .zip(self.y)
                    .map(|(&e, &v)| spec.deriv(e, v))
                    .collect();
                (w, g)
            }
        }
    }

    /// Minimizes the penalized objective at `lambda`, warm-started from `start`.
    pub fn solve(
        &self,
        lambda: f64,
        start: Option<&GroupLassoFit>,
    ) -> Result<GroupLassoFit, IterError> {
        let mut fit = match start {
            Some(s) => GroupLassoFit {
                lambda,
                outer_iterations: 0,
                ..s.clone()
            },
            None => self.zero_fit(lambda)?,
        };
        let n = self.n();
        let inv_n = 1.0 / n as f64;
        let smooth = self.loss.is_smooth();
        let max_outer = if smooth { 100 } else { 500 };
        let mut eta = self.predictor(&fit);
        let mut obj = self.mean_loss(&eta) + self.penalty(&fit);

        for outer in 0..max_outer {
            fit.outer_iterations = outer + 1;
            if smooth && self.kkt_violation(&fit) <= 1e-9 {
                break;
            }
            let (w, g) = self.local_model(&eta);
            let mut cand = fit.clone();
            // change of the linear predictor relative to `eta`
            let mut delta = vec![0.0; n];
            let lipschitz: Vec<f64> = self
                .blocks
                .iter()
                .map(|b| block_lipschitz(b, &w, inv_n))
                .collect();
            let w_mean = w.iter().sum::<f64>() * inv_n;

            for _sweep in 0..10_000 {
                let mut max_change = 0.0f64;
                // intercept
                let grad0 = (0..n).map(|i| g[i] + w[i] * delta[i]).sum::<f64>() * inv_n;
                let step0 = -grad0 / w_mean;
                if step0 != 0.0 {
                    cand.intercept += step0;
                    delta.iter_mut().for_each(|d| *d += step0);
                    max_change = max_change.max(step0.abs());
                }
                for (gi, block) in self.blocks.iter().enumerate() {
                    let lip = lipschitz[gi];
                    let coef = &mut cand.blocks[gi];
                    let mut grad = vec![0.0; block.size];
                    for i in 0..n {
                        let gi_i = g[i] + w[i] * delta[i];
                        for (gc, &x) in grad.iter_mut().zip(block.row(i)) {
                            *gc += gi_i * x;
                        }
                    }
                    let z: Vec<f64> = coef
                        .iter()
                        .zip(&grad)
                        .map(|(c, gr)| c - gr * inv_n / lip)
                        .collect();
                    let nz = norm(&z);
                    let thresh = lambda * block.weight() / lip;
                    let new: Vec<f64> = if nz <= thresh || !nz.is_finite() && !thresh.is_finite() {
                        vec![0.0; block.size]
                    } else {
                        let shrink = 1.0 - thresh / nz;
                        z.iter().map(|v| v * shrink).collect()
                    };
                    let change: Vec<f64> =
                        new.iter().zip(coef.iter()).map(|(a, b)| a - b).collect();
                    let mc = change.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    if mc > 0.0 {
                        for (i, d) in delta.iter_mut().enumerate() {
                            *d += block
                                .row(i)
                                .iter()
                                .zip(&change)
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                        *coef = new;
                        max_change = max_change.max(mc);
                    }
                }
                if max_change < 1e-12 {
                    break;
                }
            }

            let step_obj = |t: f64| -> (GroupLassoFit, Vec<f64>, f64) {
                let mut trial = fit.clone();
                trial.intercept += t * (cand.intercept - fit.intercept);
                for (tb, (cb, fb)) in trial
                    .blocks
                    .iter_mut()
                    .zip(cand.blocks.iter().zip(&fit.blocks))
                {
                    for (tv, (c, f)) in tb.iter_mut().zip(cb.iter().zip(fb)) {
                        *tv = f + t * (c - f);
                    }
                }
                let e: Vec<f64> = eta.iter().zip(&delta).map(|(a, d)| a + t * d).collect();
                let o = self.mean_loss(&e) + self.penalty(&trial);
                (trial, e, o)
            };

            let (mut trial, mut trial_eta, mut trial_obj) = step_obj(1.0);
            if smooth {
                let mut t = 1.0;
                while !(trial_obj <= obj + 1e-12 * obj.abs().max(1.0)) && t > 1e-8 {
                    t *= 0.5;
                    (trial, trial_eta, trial_obj) = step_obj(t);
                }
                if !(trial_obj <= obj + 1e-12 * obj.abs().max(1.0)) {
                    break;
                }
            }
            let change = obj - trial_obj;
            fit = trial;
            eta = trial_eta;
            obj = trial_obj;
            if !smooth && change.abs() < 1e-10 {
                break;
            }
        }
        Ok(fit)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest eigenvalue of `Q_g^T diag(w) Q_g / n`.
fn block_lipschitz(block: &GroupBlock, w: &[f64], inv_n: f64) -> f64 {
    let k = block.size;
    let mut h = DMatrix::zeros(k, k);
    for (i, &wi) in w.iter().enumerate() {
        let row = block.row(i);
        for a in 0..k {
            for b in a..k {
                h[(a, b)] += wi * row[a] * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    h *= inv_n;
    let top = h
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    top.max(1e-12)
}

/// Information criterion `2 n * mean loss + ln(n) * (number of parameters)`.
pub fn information_criterion(n: usize, mean_loss: f64, params: usize) -> f64 {
    2.0 * n as f64 * mean_loss + (n as f64).ln() * params as f64
}

/// Criterion of the unpenalized additive fit over `covariates`.
pub fn subset_criterion(
    data: &Dataset,
    covariates: &[usize],
    cfg: &ScreenConfig,
) -> Result<f64, IterError> {
    let designs = covariates
        .iter()
        .map(|&j| {
            covariate_design(data, j, cfg)
                .map(|d| d.without_intercept())
                .map_err(|e| IterError::Options(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&DesignMatrix> = designs.iter().collect();
    let fit = fit_joint(&refs, data.y(), &cfg.loss, &cfg.solver)?;
    let params = 1 + designs.iter().map(DesignMatrix::ncols).sum::<usize>();
    Ok(information_criterion(data.n(), fit.objective, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    #[serde(with = "crate::screening::finite_or_null::named")]
    pub lambda: f64,
    pub active: Vec<usize>,
    #[serde(with = "crate::screening::finite_or_null::named")]
    pub criterion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitResult {
    pub selected: Vec<usize>,
    #[serde(with = "crate::screening::finite_or_null::option")]
    pub lambda: Option<f64>,
    pub path: Vec<PathPoint>,
}

/// Group-penalized additive refit over `candidates`.
///
/// The penalized path is computed over the grid with warm starts; every
/// distinct active set on the path is refitted without penalty and scored by
/// [`information_criterion`]. The active set with the smallest score is
/// returned (ties go to the larger penalty).
pub fn penalized_refit(
    data: &Dataset,
    candidates: &[usize],
    cfg: &ScreenConfig,
    grid: &PenaltyGrid,
) -> Result<RefitResult, IterError> {
    let mut candidates = candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Ok(RefitResult {
            selected: Vec::new(),
            lambda: None,
            path: Vec::new(),
        });
    }
    let problem = GroupLassoProblem::new(data, &candidates, cfg)?;
    let covs = problem.covariates();
    let lambdas = grid.resolve(problem.lambda_max()?)?;

    let mut cache: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut path = Vec::with_capacity(lambdas.len());
    let mut warm: Option<GroupLassoFit> = None;
    let mut best: Option<(f64, usize)> = None;
    for &lambda in &lambdas {
        let fit = problem.solve(lambda, warm.as_ref())?;
        let active: Vec<usize> = fit.active().into_iter().map(|g| covs[g]).collect();
        let criterion = match cache.get(&active) {
            Some(&c) => c,
            None => {
                let c = subset_criterion(data, &active, cfg).unwrap_or(f64::INFINITY);
                cache.insert(active.clone(), c);
                c
            }
        };
        if best.is_none_or(|(b, _)| criterion < b) {
            best = Some((criterion, path.len()));
        }
        path.push(PathPoint {
            lambda,
            active,
            criterion,
        });
        if lambda.is_finite() {
            warm = Some(fit);
        }
    }
    let (selected, lambda) = match best {
        Some((c, k)) if c.is_finite() => (path[k].active.clone(), Some(path[k].lambda)),
        _ => (Vec::new(), None),
    };
    Ok(RefitResult {
        selected,
        lambda,
        path,
    })
}

/// Runs iterative screening; returns the final model and the per-round trace.
pub fn run_iterative(
    data: &Dataset,
    cfg: &ScreenConfig,
    opts: &IterativeOptions,
) -> Result<(Vec<usize>, IterationTrace), IterError> {
    cfg.check(data)?;
    if opts.greedy_cap == Some(0) {
        return Err(IterError::Options("greedy cap must be at least 1".into()));
    }
    if opts.max_rounds == 0 {
        return Err(IterError::Options("max_rounds must be at least 1".into()));
    }
    let s0 = opts
        .max_model_size
        .unwrap_or_else(|| default_max_model_size(data.n(), cfg.num_basis));
    if s0 == 0 {
        return Err(IterError::Options(
            "maximum model size must be at least 1".into(),
        ));
    }

    let mut model: Vec<usize> = Vec::new();
    let mut rounds = Vec::new();
    for round in 1..=opts.max_rounds {
        if !parameter_limit_ok(data.n(), model.len(), cfg.num_basis) {
            return Ok((
                model,
                IterationTrace {
                    rounds,
                    stop_reason: StopReason::ModelTooLarge,
                },
            ));
        }
        let screen = conditional_screen(data, &model, cfg)?;
        let threshold = conditional_permutation_threshold(
            data,
            &model,
            cfg,
            opts.n_perm,
            opts.perm_quantile,
            opts.seed,
            round as u64,
        )?;
        let mut admitted: Vec<usize> = screen
            .ranking
            .iter()
            .copied()
            .filter(|&j| screen.status[j].is_usable() && screen.stats[j] >= threshold)
            .collect();
        if let Some(cap) = opts.greedy_cap {
            admitted.truncate(cap);
        }
        admitted.sort_unstable();

        if admitted.is_empty() {
            rounds.push(RoundRecord {
                round,
                screened: admitted,
                selected: model.clone(),
                threshold,
                penalty: None,
            });
            return Ok((
                model,
                IterationTrace {
                    rounds,
                    stop_reason: StopReason::NoNewCandidates,
                },
            ));
        }

        let mut union = model.clone();
        union.extend_from_slice(&admitted);
        union.sort_unstable();
        union.dedup();
        let refit = penalized_refit(data, &union, cfg, &opts.penalty_grid)?;
        let next = refit.selected;
        rounds.push(RoundRecord {
            round,
            screened: admitted,
            selected: next.clone(),
            threshold,
            penalty: refit.lambda,
        });
        if next.len() >= s0 {
            return Ok((
                next,
                IterationTrace {
                    rounds,
                    stop_reason: StopReason::MaxModelSize,
                },
            ));
        }
        if next == model {
            return Ok((
                next,
                IterationTrace {
                    rounds,
                    stop_reason: StopReason::NoChange,
                },
            ));
        }
        model = next;
    }
    Ok((
        model,
        IterationTrace {
            rounds,
            stop_reason: StopReason::MaxRounds,
        },
    ))
}
