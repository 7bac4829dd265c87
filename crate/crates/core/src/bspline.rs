//! Clamped, normalized B-spline bases for a single covariate.
//!
//! A basis is built from the observed values of one covariate: the support is
//! the padded sample range, interior knots sit at empirical quantiles, and the
//! boundary knots are repeated `degree + 1` times so the functions form a
//! partition of unity on the whole support.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default polynomial degree (cubic).
pub const DEFAULT_DEGREE: usize = 3;

/// Relative padding applied to the sample range when building the support.
pub const SUPPORT_PAD: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BasisError {
    #[error("spline degree must be at least 1, got {0}")]
    InvalidDegree(usize),

    #[error("need at least degree + 1 = {required} basis functions, got {num_basis}")]
    TooFewFunctions { num_basis: usize, required: usize },

    #[error("need more observations than basis functions: n = {n}, d_n = {num_basis}")]
    TooFewObservations { n: usize, num_basis: usize },

    #[error("covariate has {distinct} distinct values, at least {required} are required")]
    DegenerateCovariate { distinct: usize, required: usize },

    #[error("covariate contains non-finite values")]
    NonFinite,

    #[error("knot vector of length {len} is invalid for degree {degree}: {reason}")]
    InvalidKnots {
        len: usize,
        degree: usize,
        reason: &'static str,
    },
}

/// A clamped B-spline basis on `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Builds a basis from an explicit clamped knot vector.
    pub fn from_knots(knots: Vec<f64>, degree: usize) -> Result<Self, BasisError> {
        if degree < 1 {
            return Err(BasisError::InvalidDegree(degree));
        }
        let len = knots.len();
        let invalid = |reason| BasisError::InvalidKnots {
            len,
            degree,
            reason,
        };
        if len < 2 * (degree + 1) {
            return Err(invalid("too short"));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(invalid("non-finite knot"));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("knots must be nondecreasing"));
        }
        let lower = knots[0];
        let upper = knots[len - 1];
        if lower >= upper {
            return Err(invalid("empty support"));
        }
        if knots[..=degree].iter().any(|&k| k != lower)
            || knots[len - degree - 1..].iter().any(|&k| k != upper)
        {
            return Err(invalid("boundary knots must be repeated degree + 1 times"));
        }
        if knots[degree + 1..len - degree - 1]
            .iter()
            .any(|&k| k <= lower || k >= upper)
        {
            return Err(invalid(
                "interior knots must lie strictly inside the support",
            ));
        }
        Ok(Self { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn support(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.knots.len() - self.degree - 1]
    }

    /// Index `mu` of the knot span with `t[mu] <= x < t[mu + 1]`, using the
    /// last nonempty span for the right endpoint.
    fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let last = self.num_basis() - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // Binary search over t[p..=last+1].
        let mut lo = p;
        let mut hi = last + 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Evaluates the `degree + 1` possibly-nonzero basis functions at `x`.
    ///
    /// Returns the index of the first of them; `out` must have length
    /// `degree + 1`. Values outside the support are clamped to the boundary.
    pub fn eval_nonzero(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        debug_assert_eq!(out.len(), p + 1);
        let (lower, upper) = self.support();
        let x = if x.is_nan() {
            lower
        } else {
            x.clamp(lower, upper)
        };
        let mu = self.span(x);
        let t = &self.knots;

        // Cox-de Boor triangle (de Boor, A Practical Guide to Splines, BSPLVB).
        let mut left = [0.0f64; 16];
        let mut right = [0.0f64; 16];
        let use_heap = p + 1 > left.len();
        let mut left_v;
        let mut right_v;
        let (left, right): (&mut [f64], &mut [f64]) = if use_heap {
            left_v = vec![0.0; p + 1];
            right_v = vec![0.0; p + 1];
            (&mut left_v, &mut right_v)
        } else {
            (&mut left[..p + 1], &mut right[..p + 1])
        };

        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        mu - p
    }

    /// Full length-`d_n` vector of basis values at `x`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut full = vec![0.0; self.num_basis()];
        let mut local = vec![0.0; self.degree + 1];
        let start = self.eval_nonzero(x, &mut local);
        full[start..start + local.len()].copy_from_slice(&local);
        full
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`). `sorted` must be sorted ascending and nonempty.
pub(crate) fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Builds a clamped basis with `num_basis` functions adapted to `x_column`.
///
/// Interior knots are placed at the empirical quantiles `k / (num_basis - degree)`,
/// `k = 1, ..., num_basis - degree - 1`.
pub fn make_basis(
    x_column: &[f64],
    num_basis: usize,
    degree: usize,
) -> Result<SplineBasis, BasisError> {
    if degree < 1 {
        return Err(BasisError::InvalidDegree(degree));
    }
    if num_basis < degree + 1 {
        return Err(BasisError::TooFewFunctions {
            num_basis,
            required: degree + 1,
        });
    }
    if x_column.iter().any(|v| !v.is_finite()) {
        return Err(BasisError::NonFinite);
    }
    let n = x_column.len();
    if n < num_basis + 1 {
        return Err(BasisError::TooFewObservations { n, num_basis });
    }
    let mut sorted = x_column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = 1;
    for w in sorted.windows(2) {
        if w[1] != w[0] {
            distinct += 1;
        }
    }
    let required = (num_basis - degree).max(2);
    if distinct < required {
        return Err(BasisError::DegenerateCovariate { distinct, required });
    }

    let min = sorted[0];
    let max = sorted[n - 1];
    let pad = SUPPORT_PAD * (max - min);
    let (lower, upper) = (min - pad, max + pad);

    let n_interior = num_basis - degree - 1;
    let segments = (num_basis - degree) as f64;
    let mut knots = Vec::with_capacity(num_basis + degree + 1);
    knots.extend(std::iter::repeat_n(lower, degree + 1));
    for k in 1..=n_interior {
        knots.push(interpolated_quantile(&sorted, k as f64 / segments));
    }
    knots.extend(std::iter::repeat_n(upper, degree + 1));
    SplineBasis::from_knots(knots, degree)
}

/// Row-major `n x d_n` matrix of basis values for one covariate.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
    column_index: usize,
}

impl DesignMatrix {
    pub fn from_rows(values: Vec<f64>, nrows: usize, ncols: usize, column_index: usize) -> Self {
        assert_eq!(
            values.len(),
            nrows * ncols,
            "design dimensions do not match data"
        );
        Self {
            values,
            nrows,
            ncols,
            column_index,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Covariate this design was built from.
    pub fn column_index(&self) -> usize {
        self.column_index
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Same design with the first basis column removed. Together with a free
    /// intercept this spans the same function space as the full basis.
    pub fn without_intercept(&self) -> DesignMatrix {
        let k = self.ncols - 1;
        let mut values = Vec::with_capacity(self.nrows * k);
        for i in 0..self.nrows {
            values.extend_from_slice(&self.row(i)[1..]);
        }
        DesignMatrix::from_rows(values, self.nrows, k, self.column_index)
    }
}

/// Evaluates `basis` at every entry of `x_column`.
pub fn design_matrix(basis: &SplineBasis, x_column: &[f64], column_index: usize) -> DesignMatrix {
    let d = basis.num_basis();
    let p1 = basis.degree() + 1;
    let mut values = vec![0.0; x_column.len() * d];
    let mut local = vec![0.0; p1];
    for (row, &x) in values.chunks_exact_mut(d).zip(x_column) {
        let start = basis.eval_nonzero(x, &mut local);
        row[start..start + p1].copy_from_slice(&local);
    }
    DesignMatrix::from_rows(values, x_column.len(), d, column_index)
}
