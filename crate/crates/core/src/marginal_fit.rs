//! Empirical minimum-divergence fits: intercept-only, single-covariate
//! spline, and small joint additive models.
//!
//! Smooth losses are minimized by damped Newton with a backtracking line
//! search on the exact mean loss. The check loss is minimized by a
//! majorize-minimize iteration on its epsilon-smoothed version (each step is a
//! weighted least-squares solve), followed by a snap to the nearest
//! interpolating fit, where quantile-regression optima live.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::DesignMatrix;
use crate::loss::{null_minimizer, LossError, LossSpec};

/// Linear predictors beyond this magnitude flag a fit as diverging
/// (separation for binary losses, runaway rates for Poisson).
pub const OMEGA_CAP: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error(transparent)]
    Loss(#[from] LossError),

    #[error("Hessian is singular even after ridge regularization")]
    Singular,

    #[error("design has {design} rows but the response has {response}")]
    DimensionMismatch { design: usize, response: usize },

    #[error("joint model has {params} parameters, more than n/2 = {limit}")]
    TooManyParameters { params: usize, limit: usize },

    #[error("solver options must be strictly positive")]
    InvalidOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol_grad: f64,
    pub max_iter: usize,
    pub smoothing_eps: f64,
    pub ridge_floor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_grad: 1e-8,
            max_iter: 100,
            smoothing_eps: 1e-6,
            ridge_floor: 1e-10,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), FitError> {
        let ok = self.tol_grad > 0.0
            && self.max_iter > 0
            && self.smoothing_eps > 0.0
            && self.ridge_floor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(FitError::InvalidOptions)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Spline coefficients. For marginal fits the constant is carried by the
    /// basis itself and `intercept` is `None`.
    pub coefficients: Vec<f64>,
    pub intercept: Option<f64>,
    /// Mean empirical loss at the returned coefficients.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// Row-major `n x k` matrix borrowed from a design.
#[derive(Clone, Copy)]
pub(crate) struct Dense<'a> {
    pub values: &'a [f64],
    pub nrows: usize,
    pub ncols: usize,
}

impl<'a> Dense<'a> {
    pub fn new(values: &'a [f64], nrows: usize, ncols: usize) -> Self {
        debug_assert_eq!(values.len(), nrows * ncols);
        Self {
            values,
            nrows,
            ncols,
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    fn predict(&self, beta: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), beta);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Accumulates `sum_i w_i x_i x_i^T / n` into the upper triangle, then mirrors.
fn weighted_gram(x: Dense<'_>, weights: &[f64], ridge: f64) -> DMatrix<f64> {
    let k = x.ncols;
    let mut gram = vec![0.0; k * k];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = x.row(i);
        for a in 0..k {
            let wa = w * row[a];
            if wa == 0.0 {
                continue;
            }
            let dst = &mut gram[a * k..(a + 1) * k];
            for b in a..k {
                dst[b] += wa * row[b];
            }
        }
    }
    let inv_n = 1.0 / x.nrows as f64;
    let mut m = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = gram[a * k + b] * inv_n;
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
        m[(a, a)] += ridge;
    }
    m
}

/// Solves `(H + ridge I) d = rhs` with a few rounds of iterative refinement
/// against the unregularized `H`, so the ridge only matters in directions
/// where `H` is (near) singular.
fn regularized_solve(
    hessian: &DMatrix<f64>,
    rhs: &[f64],
    ridge: f64,
) -> Result<Vec<f64>, FitError> {
    let k = rhs.len();
    let mut shift = ridge;
    let chol = loop {
        let mut m = hessian.clone();
        for a in 0..k {
            m[(a, a)] += shift;
        }
        if let Some(c) = Cholesky::<f64, Dyn>::new(m) {
            break c;
        }
        shift *= 100.0;
        if shift > 1e-2 {
            return Err(FitError::Singular);
        }
    };
    let b = DVector::from_column_slice(rhs);
    let mut d = chol.solve(&b);
    for _ in 0..2 {
        let resid = &b - hessian * &d;
        d += chol.solve(&resid);
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(FitError::Singular);
    }
    Ok(d.as_slice().to_vec())
}

fn mean_kernel(spec: &LossSpec, eta: &[f64], y: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .map(|(&e, &v)| spec.value_kernel(e, v))
        .sum::<f64>()
        / y.len() as f64
}

fn mean_offset(spec: &LossSpec, y: &[f64]) -> f64 {
    match spec {
        LossSpec::Poisson => y.iter().map(|&v| spec.value_offset(v)).sum::<f64>() / y.len() as f64,
        _ => 0.0,
    }
}

/// Minimizes the mean loss over `beta` starting from `beta0`.
pub(crate) fn minimize(
    x: Dense<'_>,
    y: &[f64],
    spec: &LossSpec,
    opts: &SolverOptions,
    beta0: Vec<f64>,
) -> Result<FitResult, FitError> {
    opts.validate()?;
    if x.nrows != y.len() {
        return Err(FitError::DimensionMismatch {
            design: x.nrows,
            response: y.len(),
        });
    }
    spec.validate_response(y)?;
    let mut fit = match spec {
        LossSpec::Quantile { alpha } => minimize_check_loss(x, y, alpha.get(), opts, beta0)?,
        _ => newton(x, y, spec, opts, beta0)?,
    };
    fit.objective += mean_offset(spec, y);
    Ok(fit)
}

fn newton(
    x: Dense<'_>,
    y: &[f64],
    spec: &LossSpec,
    opts: &SolverOptions,
    mut beta: Vec<f64>,
) -> Result<FitResult, FitError> {
    let n = x.nrows;
    let k = x.ncols;
    let inv_n = 1.0 / n as f64;
    let mut eta = vec![0.0; n];
    x.predict(&beta, &mut eta);
    let mut f = mean_kernel(spec, &eta, y);

    let mut grad = vec![0.0; k];
    let mut curv = vec![0.0; n];
    let mut trial = vec![0.0; k];
    let mut eta_trial = vec![0.0; n];
    let mut converged = false;
    let mut gnorm: f64;
    let mut iterations = 0;

    loop {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let d = spec.deriv(eta[i], y[i]);
            let row = x.row(i);
            for (g, &xa) in grad.iter_mut().zip(row) {
                *g += d * xa;
            }
        }
        grad.iter_mut().for_each(|g| *g *= inv_n);
        gnorm = norm(&grad);
        if gnorm <= opts.tol_grad {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter || eta.iter().any(|e| e.abs() > OMEGA_CAP) {
            break;
        }
        iterations += 1;

        for i in 0..n {
            curv[i] = spec.curvature(eta[i], y[i]).unwrap_or(0.0);
        }
        let hessian = weighted_gram(x, &curv, 0.0);
        let neg_grad: Vec<f64> = grad.iter().map(|g| -g).collect();
        let step = regularized_solve(&hessian, &neg_grad, opts.ridge_floor)?;
        let slope = dot(&grad, &step);
        if !(slope < 0.0) {
            break;
        }

        let mut t = 1.0;
        let accepted = loop {
            for ((b, s), tr) in beta.iter().zip(&step).zip(trial.iter_mut()) {
                *tr = b + t * s;
            }
            x.predict(&trial, &mut eta_trial);
            let f_trial = mean_kernel(spec, &eta_trial, y);
            let noise = 4.0 * f64::EPSILON * f.abs().max(1.0);
            let armijo = f_trial <= f + 1e-4 * t * slope;
            let flat = -slope * t <= noise && f_trial <= f + noise;
            if f_trial.is_finite() && (armijo || flat) {
                break Some(f_trial);
            }
            t *= 0.5;
            if t < 1e-12 {
                break None;
            }
        };
        match accepted {
            Some(f_new) => {
                debug_assert!(
                    f_new <= f + 8.0 * f64::EPSILON * f.abs().max(1.0),
                    "Newton step increased the objective: {f} -> {f_new}"
                );
                std::mem::swap(&mut beta, &mut trial);
                std::mem::swap(&mut eta, &mut eta_trial);
                f = f_new;
            }
            None => break,
        }
    }

    Ok(FitResult {
        coefficients: beta,
        intercept: None,
        objective: f,
        iterations,
        converged,
        gradient_norm: gnorm,
    })
}

/// Mean of the smoothed check loss `rho(r) - (eps/2) ln(eps + |r|)`.
fn smoothed_check(resid: &[f64], alpha: f64, eps: f64) -> f64 {
    resid
        .iter()
        .map(|&r| check(r, alpha) - 0.5 * eps * (eps + r.abs()).ln())
        .sum::<f64>()
        / resid.len() as f64
}

#[inline]
fn check(r: f64, alpha: f64) -> f64 {
    if r < 0.0 {
        r * (alpha - 1.0)
    } else {
        r * alpha
    }
}

fn mean_check(resid: &[f64], alpha: f64) -> f64 {
    resid.iter().map(|&r| check(r, alpha)).sum::<f64>() / resid.len() as f64
}

fn residuals(x: Dense<'_>, y: &[f64], beta: &[f64], out: &mut [f64]) {
    x.predict(beta, out);
    for (o, &v) in out.iter_mut().zip(y) {
        *o = v - *o;
    }
}

fn minimize_check_loss(
    x: Dense<'_>,
    y: &[f64],
    alpha: f64,
    opts: &SolverOptions,
    mut beta: Vec<f64>,
) -> Result<FitResult, FitError> {
    let n = x.nrows;
    let k = x.ncols;
    let eps = opts.smoothing_eps;
    let mut resid = vec![0.0; n];
    residuals(x, y, &beta, &mut resid);
    let mut smooth = smoothed_check(&resid, alpha, eps);
    let mut best_beta = beta.clone();
    let mut best = mean_check(&resid, alpha);
    let mut weights = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        for (w, &r) in weights.iter_mut().zip(&resid) {
            *w = 1.0 / (eps + r.abs());
        }
        let gram = weighted_gram(x, &weights, 0.0);
        let mut rhs = vec![0.0; k];
        for i in 0..n {
            let c = weights[i] * y[i] + 2.0 * alpha - 1.0;
            for (r, &xa) in rhs.iter_mut().zip(x.row(i)) {
                *r += c * xa;
            }
        }
        rhs.iter_mut().for_each(|r| *r /= n as f64);
        beta = regularized_solve(&gram, &rhs, opts.ridge_floor)?;
        residuals(x, y, &beta, &mut resid);
        let smooth_new = smoothed_check(&resid, alpha, eps);
        debug_assert!(
            smooth_new <= smooth + 1e-9 * smooth.abs().max(1.0),
            "MM step increased the smoothed objective: {smooth} -> {smooth_new}"
        );
        let exact = mean_check(&resid, alpha);
        if exact < best {
            best = exact;
            best_beta.clone_from(&beta);
        }
        let change = smooth - smooth_new;
        smooth = smooth_new;
        if change.abs() < opts.tol_grad {
            converged = true;
            break;
        }
    }

    // Finish exactly: start from a vertex interpolating the smallest
    // residuals and walk along descending edges.
    residuals(x, y, &best_beta, &mut resid);
    if let Some(rows) = independent_rows(x, &resid) {
        if let Some((vertex, _, optimal)) = vertex_descent(x, y, alpha, rows) {
            let mut r2 = vec![0.0; n];
            residuals(x, y, &vertex, &mut r2);
            let value = mean_check(&r2, alpha);
            if value <= best {
                best = value;
                best_beta = vertex;
                converged |= optimal;
                resid = r2;
            }
        }
    }

    let mut grad = vec![0.0; k];
    for i in 0..n {
        let r = resid[i];
        // derivative in beta of the smoothed loss
        let d =
            -(if r < 0.0 { alpha - 1.0 } else { alpha }) + 0.5 * eps * r.signum() / (eps + r.abs());
        for (g, &xa) in grad.iter_mut().zip(x.row(i)) {
            *g += d * xa / n as f64;
        }
    }

    Ok(FitResult {
        coefficients: best_beta,
        intercept: None,
        objective: best,
        iterations,
        converged,
        gradient_norm: norm(&grad),
    })
}

/// `k` linearly independent rows, taken greedily by increasing absolute residual.
fn independent_rows(x: Dense<'_>, resid: &[f64]) -> Option<Vec<usize>> {
    let k = x.ncols;
    let mut order: Vec<usize> = (0..x.nrows).collect();
    order.sort_by(|&a, &b| resid[a].abs().total_cmp(&resid[b].abs()).then(a.cmp(&b)));
    let mut rows = Vec::with_capacity(k);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(k);
    for i in order {
        let mut v = x.row(i).to_vec();
        let scale = norm(&v);
        if scale == 0.0 {
            continue;
        }
        for q in &ortho {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let rest = norm(&v);
        if rest > 1e-8 * scale {
            v.iter_mut().for_each(|a| *a /= rest);
            ortho.push(v);
            rows.push(i);
            if rows.len() == k {
                return Some(rows);
            }
        }
    }
    None
}

fn basis_solve(x: Dense<'_>, y: &[f64], rows: &[usize]) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let k = x.ncols;
    let m = DMatrix::from_fn(k, k, |r, c| x.row(rows[r])[c]);
    let inv = m.try_inverse()?;
    let rhs = DVector::from_iterator(k, rows.iter().map(|&i| y[i]));
    let beta = &inv * rhs;
    beta.iter()
        .all(|v| v.is_finite())
        .then(|| (inv, beta.as_slice().to_vec()))
}

/// Descent over vertices of the check-loss objective. At a vertex the fit
/// interpolates the `k` basis rows; each edge frees one of them, and the
/// exact minimum along an edge is a weighted median of its breakpoints.
/// Returns the final coefficients, objective, and whether no edge descends.
fn vertex_descent(
    x: Dense<'_>,
    y: &[f64],
    alpha: f64,
    mut rows: Vec<usize>,
) -> Option<(Vec<f64>, f64, bool)> {
    let n = x.nrows;
    let k = x.ncols;
    let (mut inv, mut beta) = basis_solve(x, y, &rows)?;
    let mut resid = vec![0.0; n];
    residuals(x, y, &beta, &mut resid);
    for &i in &rows {
        resid[i] = 0.0;
    }
    let mut value = mean_check(&resid, alpha);
    let mut in_basis = vec![false; n];
    rows.iter().for_each(|&i| in_basis[i] = true);
    let mut a = vec![0.0; n];
    let mut breaks: Vec<(f64, f64, usize)> = Vec::with_capacity(n);

    for _ in 0..50 * n {
        // (released position, entering row, step, direction, new value)
        let mut best: Option<(usize, usize, f64, Vec<f64>, f64)> = None;
        for r in 0..k {
            for sign in [1.0, -1.0] {
                let d: Vec<f64> = (0..k).map(|c| sign * inv[(c, r)]).collect();
                x.predict(&d, &mut a);
                let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let mut slope = 0.0;
                breaks.clear();
                for i in 0..n {
                    let ai = a[i];
                    if in_basis[i] && i != rows[r] || ai.abs() <= 1e-12 * scale {
                        continue;
                    }
                    let ri = if i == rows[r] { 0.0 } else { resid[i] };
                    // residual r_i - t a_i just after t = 0
                    let positive = if ri != 0.0 { ri > 0.0 } else { ai < 0.0 };
                    slope += if positive {
                        -alpha * ai
                    } else {
                        (1.0 - alpha) * ai
                    };
                    if i != rows[r] && ri != 0.0 && ri / ai > 0.0 {
                        breaks.push((ri / ai, ai.abs(), i));
                    }
                }
                if slope >= -1e-14 || breaks.is_empty() {
                    continue;
                }
                breaks.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.2.cmp(&q.2)));
                let mut s = slope;
                let mut stop = breaks[breaks.len() - 1];
                for &b in &breaks {
                    s += b.1;
                    if s >= 0.0 {
                        stop = b;
                        break;
                    }
                }
                let t = stop.0;
                let trial: f64 = (0..n)
                    .map(|i| {
                        let ri = if in_basis[i] { 0.0 } else { resid[i] };
                        check(ri - t * a[i], alpha)
                    })
                    .sum::<f64>()
                    / n as f64;
                if best.as_ref().is_none_or(|b| trial < b.4) {
                    best = Some((r, stop.2, t, d, trial));
                }
            }
        }
        let Some((r, entering, t, d, trial)) = best else {
            return Some((beta, value, true));
        };
        if trial >= value - 1e-15 * value.abs().max(1.0) {
            return Some((beta, value, true));
        }
        let mut next = rows.clone();
        next[r] = entering;
        let Some((inv2, beta2)) = basis_solve(x, y, &next) else {
            // numerically singular vertex: keep the point reached along the edge
            beta.iter_mut().zip(&d).for_each(|(b, di)| *b += t * di);
            residuals(x, y, &beta, &mut resid);
            return Some((beta.clone(), mean_check(&resid, alpha), false));
        };
        in_basis[rows[r]] = false;
        in_basis[entering] = true;
        rows = next;
        inv = inv2;
        beta = beta2;
        residuals(x, y, &beta, &mut resid);
        for &i in &rows {
            resid[i] = 0.0;
        }
        value = mean_check(&resid, alpha);
    }
    Some((beta, value, false))
}

fn null_start(y: &[f64], spec: &LossSpec) -> f64 {
    null_minimizer(spec, y)
        .unwrap_or(0.0)
        .clamp(-OMEGA_CAP, OMEGA_CAP)
}

/// Single-covariate spline fit on a full (partition-of-unity) basis.
pub fn fit_marginal(
    design: &DesignMatrix,
    y: &[f64],
    spec: &LossSpec,
    opts: &SolverOptions,
) -> Result<FitResult, FitError> {
    if design.nrows() != y.len() {
        return Err(FitError::DimensionMismatch {
            design: design.nrows(),
            response: y.len(),
        });
    }
    let start = null_start(y, spec);
    let x = Dense::new(design.as_slice(), design.nrows(), design.ncols());
    minimize(x, y, spec, opts, vec![start; design.ncols()])
}

/// Intercept-only fit.
pub fn fit_null(y: &[f64], spec: &LossSpec) -> Result<FitResult, FitError> {
    let b0 = null_minimizer(spec, y)?;
    let objective = spec.mean_value(b0, y);
    let gradient = y.iter().map(|&v| spec.deriv(b0, v)).sum::<f64>() / y.len() as f64;
    Ok(FitResult {
        coefficients: Vec::new(),
        intercept: Some(b0),
        objective,
        iterations: 0,
        converged: true,
        gradient_norm: gradient.abs(),
    })
}

/// Additive design `[1 | Z_1 | Z_2 | ...]` built from intercept-free blocks.
#[derive(Debug, Clone)]
pub(crate) struct JointDesign {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl JointDesign {
    pub fn intercept_only(nrows: usize) -> Self {
        Self {
            values: vec![1.0; nrows],
            nrows,
            ncols: 1,
        }
    }

    pub fn with_block(&self, block: &DesignMatrix) -> Self {
        assert_eq!(block.nrows(), self.nrows);
        let k = self.ncols + block.ncols();
        let mut values = Vec::with_capacity(self.nrows * k);
        for i in 0..self.nrows {
            values.extend_from_slice(&self.values[i * self.ncols..(i + 1) * self.ncols]);
            values.extend_from_slice(block.row(i));
        }
        Self {
            values,
            nrows: self.nrows,
            ncols: k,
        }
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn dense(&self) -> Dense<'_> {
        Dense::new(&self.values, self.nrows, self.ncols)
    }
}

/// Joint additive fit with a free intercept and one intercept-free spline
/// block per covariate. The intercept is reported separately; `coefficients`
/// holds the concatenated block coefficients.
pub fn fit_joint(
    designs: &[&DesignMatrix],
    y: &[f64],
    spec: &LossSpec,
    opts: &SolverOptions,
) -> Result<FitResult, FitError> {
    let n = y.len();
    if let Some(bad) = designs.iter().find(|d| d.nrows() != n) {
        return Err(FitError::DimensionMismatch {
            design: bad.nrows(),
            response: n,
        });
    }
    if designs.is_empty() {
        return fit_null(y, spec);
    }
    let params = 1 + designs.iter().map(|d| d.ncols()).sum::<usize>();
    if params > n / 2 {
        return Err(FitError::TooManyParameters {
            params,
            limit: n / 2,
        });
    }
    let mut joint = JointDesign::intercept_only(n);
    for d in designs {
        joint = joint.with_block(d);
    }
    fit_joint_design(&joint, y, spec, opts)
}

pub(crate) fn fit_joint_design(
    joint: &JointDesign,
    y: &[f64],
    spec: &LossSpec,
    opts: &SolverOptions,
) -> Result<FitResult, FitError> {
    let mut beta0 = vec![0.0; joint.ncols()];
    beta0[0] = null_start(y, spec);
    let mut fit = minimize(joint.dense(), y, spec, opts, beta0)?;
    let intercept = fit.coefficients.remove(0);
    fit.intercept = Some(intercept);
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::{design_matrix, make_basis};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_design(n: usize, d: usize, rng: &mut impl Rng) -> (Vec<f64>, DesignMatrix) {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let basis = make_basis(&x, d, 3).unwrap();
        let design = design_matrix(&basis, &x, 0);
        (x, design)
    }

    /// Normal-equations least squares via nalgebra's QR, independent of the solver.
    fn ols(values: &[f64], n: usize, k: usize, y: &[f64]) -> Vec<f64> {
        let a = DMatrix::from_row_slice(n, k, values);
        let b = DVector::from_column_slice(y);
        let qr = a.clone().qr();
        let qtb = qr.q().transpose() * b;
        qr.r()
            .solve_upper_triangular(&qtb)
            .unwrap()
            .as_slice()
            .to_vec()
    }

    #[test]
    fn gaussian_fit_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, design) = uniform_design(200, 6, &mut rng);
        let y: Vec<f64> = x
            .iter()
            .map(|v| (6.0 * v).sin() + rng.random::<f64>())
            .collect();
        let fit =
            fit_marginal(&design, &y, &LossSpec::Gaussian, &SolverOptions::default()).unwrap();
        assert!(fit.converged);
        let beta = ols(design.as_slice(), 200, 6, &y);
        for (a, b) in fit.coefficients.iter().zip(&beta) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let rss: f64 = (0..200)
            .map(|i| (y[i] - dot(design.row(i), &beta)).powi(2))
            .sum::<f64>();
        assert_abs_diff_eq!(fit.objective, rss / 200.0 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_interpolation_recovers_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, design) = uniform_design(300, 6, &mut rng);
        let truth = [0.3, -1.2, 2.0, 0.7, -0.4, 1.1];
        let y: Vec<f64> = (0..300).map(|i| dot(design.row(i), &truth)).collect();
        let fit =
            fit_marginal(&design, &y, &LossSpec::Gaussian, &SolverOptions::default()).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&truth) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(fit.objective < 1e-20);
    }

    #[test]
    fn smooth_fits_satisfy_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, design) = uniform_design(400, 6, &mut rng);
        let cases: [(LossSpec, Box<dyn Fn(f64, &mut ChaCha8Rng) -> f64>); 3] = [
            (
                LossSpec::Poisson,
                Box::new(|v, r| {
                    let lam = (1.0 + v).exp();
                    rand_distr::Distribution::sample(&rand_distr::Poisson::new(lam).unwrap(), r)
                }),
            ),
            (
                LossSpec::Logistic,
                Box::new(|v, r| f64::from(r.random::<f64>() < crate::loss::sigmoid(3.0 * v - 1.5))),
            ),
            (
                LossSpec::ExponentialClassification,
                Box::new(|v, r| if r.random::<f64>() < v { 1.0 } else { -1.0 }),
            ),
        ];
        for (spec, draw) in cases {
            let y: Vec<f64> = x.iter().map(|&v| draw(v, &mut rng)).collect();
            let fit = fit_marginal(&design, &y, &spec, &SolverOptions::default()).unwrap();
            assert!(fit.converged, "{spec}");
            assert!(fit.gradient_norm <= 1e-8);
            let null = fit_null(&y, &spec).unwrap();
            assert!(fit.objective <= null.objective + 1e-12);
            // Hessian at the optimum is positive semidefinite.
            let eta: Vec<f64> = (0..400)
                .map(|i| dot(design.row(i), &fit.coefficients))
                .collect();
            let w: Vec<f64> = eta
                .iter()
                .zip(&y)
                .map(|(&e, &v)| spec.curvature(e, v).unwrap())
                .collect();
            let h = weighted_gram(Dense::new(design.as_slice(), 400, 6), &w, 0.0);
            let eig = h.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12));
        }
    }

    #[test]
    fn quantile_fit_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, design) = uniform_design(150, 5, &mut rng);
        let y: Vec<f64> = x.iter().map(|v| v * v + rng.random::<f64>()).collect();
        let spec = LossSpec::quantile(0.75).unwrap();
        let fit = fit_marginal(&design, &y, &spec, &SolverOptions::default()).unwrap();
        let eval = |b: &[f64]| spec.mean_value_of(design.as_slice(), 5, b, &y);
        assert_abs_diff_eq!(eval(&fit.coefficients), fit.objective, epsilon = 1e-14);
        for _ in 0..2000 {
            let pert: Vec<f64> = fit
                .coefficients
                .iter()
                .map(|b| b + 1e-3 * (rng.random::<f64>() - 0.5))
                .collect();
            assert!(fit.objective <= eval(&pert) + 1e-12);
        }
    }

    impl LossSpec {
        fn mean_value_of(&self, values: &[f64], k: usize, beta: &[f64], y: &[f64]) -> f64 {
            values
                .chunks_exact(k)
                .zip(y)
                .map(|(row, &v)| self.value(dot(row, beta), v))
                .sum::<f64>()
                / y.len() as f64
        }
    }

    #[test]
    fn null_fits() {
        let g = fit_null(&[0.0, 2.0], &LossSpec::Gaussian).unwrap();
        assert_eq!(g.intercept, Some(1.0));
        assert_eq!(g.objective, 0.5);
        let q = fit_null(&[1.0, 2.0, 3.0, 4.0], &LossSpec::quantile(0.75).unwrap()).unwrap();
        assert_eq!(q.intercept, Some(3.0));
        let l = fit_null(&[0.0, 1.0, 1.0, 0.0], &LossSpec::Logistic).unwrap();
        assert_eq!(l.intercept, Some(0.0));
    }

    #[test]
    fn joint_with_one_block_matches_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x, design) = uniform_design(300, 6, &mut rng);
        let y: Vec<f64> = x
            .iter()
            .map(|&v| {
                let lam = (0.5 + (4.0 * v).sin()).exp();
                rand_distr::Distribution::sample(&rand_distr::Poisson::new(lam).unwrap(), &mut rng)
            })
            .collect();
        let opts = SolverOptions::default();
        for spec in [LossSpec::Gaussian, LossSpec::Poisson] {
            let marginal = fit_marginal(&design, &y, &spec, &opts).unwrap();
            let reduced = design.without_intercept();
            let joint = fit_joint(&[&reduced], &y, &spec, &opts).unwrap();
            assert_abs_diff_eq!(marginal.objective, joint.objective, epsilon = 1e-8);
        }
        let none = fit_joint(&[], &y, &LossSpec::Poisson, &opts).unwrap();
        assert_eq!(none, fit_null(&y, &LossSpec::Poisson).unwrap());
    }

    #[test]
    fn joint_gaussian_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 250;
        let (x1, d1) = uniform_design(n, 6, &mut rng);
        let (x2, d2) = uniform_design(n, 6, &mut rng);
        let y: Vec<f64> = (0..n)
            .map(|i| (3.0 * x1[i]).cos() + x2[i] * x2[i] + 0.1 * rng.random::<f64>())
            .collect();
        let (z1, z2) = (d1.without_intercept(), d2.without_intercept());
        let fit = fit_joint(
            &[&z1, &z2],
            &y,
            &LossSpec::Gaussian,
            &SolverOptions::default(),
        )
        .unwrap();
        let mut values = Vec::new();
        for i in 0..n {
            values.push(1.0);
            values.extend_from_slice(z1.row(i));
            values.extend_from_slice(z2.row(i));
        }
        let beta = ols(&values, n, 11, &y);
        assert_abs_diff_eq!(fit.intercept.unwrap(), beta[0], epsilon = 1e-10);
        for (a, b) in fit.coefficients.iter().zip(&beta[1..]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn joint_rejects_oversized_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, d) = uniform_design(20, 6, &mut rng);
        let z = d.without_intercept();
        let y = vec![0.0; 20];
        let err = fit_joint(
            &[&z, &z],
            &y,
            &LossSpec::Gaussian,
            &SolverOptions::default(),
        );
        assert!(matches!(
            err,
            Err(FitError::TooManyParameters {
                params: 11,
                limit: 10
            })
        ));
    }

    #[test]
    fn separation_is_flagged_not_fatal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (x, design) = uniform_design(100, 6, &mut rng);
        let y: Vec<f64> = x.iter().map(|&v| f64::from(v > 0.5)).collect();
        let fit =
            fit_marginal(&design, &y, &LossSpec::Logistic, &SolverOptions::default()).unwrap();
        assert!(fit.objective.is_finite());
        assert!(fit.objective < fit_null(&y, &LossSpec::Logistic).unwrap().objective);
    }

    #[test]
    fn invalid_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (_, design) = uniform_design(30, 6, &mut rng);
        let opts = SolverOptions::default();
        assert!(matches!(
            fit_marginal(&design, &[1.0; 29], &LossSpec::Gaussian, &opts),
            Err(FitError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            fit_marginal(&design, &[0.5; 30], &LossSpec::Logistic, &opts),
            Err(FitError::Loss(_))
        ));
        let bad = SolverOptions {
            tol_grad: 0.0,
            ..opts
        };
        assert_eq!(
            fit_marginal(&design, &[1.0; 30], &LossSpec::Gaussian, &bad),
            Err(FitError::InvalidOptions)
        );
    }
}
