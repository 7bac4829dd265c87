//! Conditional strictly convex losses `l(omega, y)`.
//!
//! Four losses are twice differentiable in `omega` (the exponential-family
//! negative log-likelihoods and the exponential classification loss); the
//! quantile check loss only has a piecewise-constant derivative.

use std::fmt;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("response value {value} is invalid for the {loss} loss: {expected}")]
    InvalidResponse {
        loss: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("{0} loss has no second derivative")]
    Unsupported(&'static str),

    #[error("binary response contains a single class; the intercept-only fit diverges")]
    Separation,

    #[error("Poisson response is identically zero; the intercept-only fit diverges")]
    Boundary,

    #[error("response vector is empty")]
    Empty,
}

/// Quantile level `alpha` in the open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(alpha: f64) -> Result<Self, LossError> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(LossError::InvalidAlpha(alpha))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = LossError;
    fn try_from(alpha: f64) -> Result<Self, Self::Error> {
        Self::new(alpha)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    TwiceDifferentiable,
    PiecewiseLinearDerivative,
}

/// Loss used to measure the divergence between a fitted value and the response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    /// `(y - omega)^2 / 2`
    Gaussian,
    /// `-omega y + ln(1 + e^omega)`, `y` in {0, 1}
    Logistic,
    /// `-y omega + e^omega + ln(y!)`, `y` a nonnegative integer
    Poisson,
    /// `e^(-y omega)`, `y` in {-1, +1}
    ExponentialClassification,
    /// `(y - omega)(alpha - 1{y - omega < 0})`
    Quantile { alpha: QuantileLevel },
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossSpec::Quantile { alpha } => write!(f, "quantile({})", alpha.get()),
            other => f.write_str(other.name()),
        }
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const LN_FACTORIAL_TABLE_LEN: usize = 256;

static LN_FACTORIAL: LazyLock<[f64; LN_FACTORIAL_TABLE_LEN]> = LazyLock::new(|| {
    let mut table = [0.0; LN_FACTORIAL_TABLE_LEN];
    for k in 1..LN_FACTORIAL_TABLE_LEN {
        table[k] = table[k - 1] + (k as f64).ln();
    }
    table
});

/// `ln(y!)` for a nonnegative integer-valued `y`.
pub fn ln_factorial(y: f64) -> f64 {
    if y >= 0.0 && y < LN_FACTORIAL_TABLE_LEN as f64 && y.fract() == 0.0 {
        LN_FACTORIAL[y as usize]
    } else {
        statrs::function::gamma::ln_gamma(y + 1.0)
    }
}

impl LossSpec {
    pub fn quantile(alpha: f64) -> Result<Self, LossError> {
        Ok(LossSpec::Quantile {
            alpha: QuantileLevel::new(alpha)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Gaussian => "gaussian",
            LossSpec::Logistic => "logistic",
            LossSpec::Poisson => "poisson",
            LossSpec::ExponentialClassification => "expclass",
            LossSpec::Quantile { .. } => "quantile",
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            LossSpec::Quantile { .. } => Smoothness::PiecewiseLinearDerivative,
            _ => Smoothness::TwiceDifferentiable,
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.smoothness() == Smoothness::TwiceDifferentiable
    }

    /// Checks that a single response value is in the loss's domain.
    pub fn check_response(&self, y: f64) -> Result<(), LossError> {
        let bad = |expected| {
            Err(LossError::InvalidResponse {
                loss: self.name(),
                value: y,
                expected,
            })
        };
        if !y.is_finite() {
            return bad("must be finite");
        }
        match self {
            LossSpec::Logistic if y != 0.0 && y != 1.0 => bad("expected 0 or 1"),
            LossSpec::ExponentialClassification if y != -1.0 && y != 1.0 => {
                bad("expected -1 or +1")
            }
            LossSpec::Poisson if y < 0.0 || y.fract() != 0.0 => {
                bad("expected a nonnegative integer")
            }
            _ => Ok(()),
        }
    }

    pub fn validate_response(&self, y: &[f64]) -> Result<(), LossError> {
        y.iter().try_for_each(|&v| self.check_response(v))
    }

    /// Loss value without validating `y`.
    #[inline]
    pub fn value(&self, omega: f64, y: f64) -> f64 {
        match self {
            LossSpec::Poisson => self.value_kernel(omega, y) + ln_factorial(y),
            _ => self.value_kernel(omega, y),
        }
    }

    /// Loss value minus terms that do not depend on `omega` (only `ln(y!)`
    /// for Poisson).
    #[inline]
    pub(crate) fn value_kernel(&self, omega: f64, y: f64) -> f64 {
        match *self {
            LossSpec::Gaussian => 0.5 * (y - omega) * (y - omega),
            LossSpec::Logistic => -omega * y + softplus(omega),
            LossSpec::Poisson => -y * omega + omega.exp(),
            LossSpec::ExponentialClassification => (-y * omega).exp(),
            LossSpec::Quantile { alpha } => {
                let r = y - omega;
                if r < 0.0 {
                    r * (alpha.get() - 1.0)
                } else {
                    r * alpha.get()
                }
            }
        }
    }

    /// The `omega`-free part of the loss, `ln(y!)` for Poisson and zero otherwise.
    #[inline]
    pub(crate) fn value_offset(&self, y: f64) -> f64 {
        match self {
            LossSpec::Poisson => ln_factorial(y),
            _ => 0.0,
        }
    }

    /// Generalized derivative in `omega`. For the check loss the indicator
    /// `1{y - omega < 0}` is taken as 0 at `y == omega`.
    #[inline]
    pub fn deriv(&self, omega: f64, y: f64) -> f64 {
        match *self {
            LossSpec::Gaussian => omega - y,
            LossSpec::Logistic => sigmoid(omega) - y,
            LossSpec::Poisson => omega.exp() - y,
            LossSpec::ExponentialClassification => -y * (-y * omega).exp(),
            LossSpec::Quantile { alpha } => {
                if y - omega < 0.0 {
                    1.0 - alpha.get()
                } else {
                    -alpha.get()
                }
            }
        }
    }

    /// Second derivative in `omega`; `None` for the quantile loss.
    #[inline]
    pub fn curvature(&self, omega: f64, y: f64) -> Option<f64> {
        match *self {
            LossSpec::Gaussian => Some(1.0),
            LossSpec::Logistic => {
                let s = sigmoid(omega);
                Some(s * (1.0 - s))
            }
            LossSpec::Poisson => Some(omega.exp()),
            LossSpec::ExponentialClassification => Some(y * y * (-y * omega).exp()),
            LossSpec::Quantile { .. } => None,
        }
    }

    pub fn try_value(&self, omega: f64, y: f64) -> Result<f64, LossError> {
        self.check_response(y)?;
        Ok(self.value(omega, y))
    }

    pub fn try_deriv(&self, omega: f64, y: f64) -> Result<f64, LossError> {
        self.check_response(y)?;
        Ok(self.deriv(omega, y))
    }

    pub fn try_curvature(&self, omega: f64, y: f64) -> Result<f64, LossError> {
        self.check_response(y)?;
        self.curvature(omega, y)
            .ok_or(LossError::Unsupported(self.name()))
    }

    /// Mean loss of the constant predictor `omega`.
    pub fn mean_value(&self, omega: f64, y: &[f64]) -> f64 {
        y.iter().map(|&v| self.value(omega, v)).sum::<f64>() / y.len() as f64
    }
}

/// `ceil(n alpha)`-th order statistic (1-based) of `values`.
pub(crate) fn order_statistic_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let k = ((n as f64 * alpha).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Minimizer of the mean loss over constant predictors.
pub fn null_minimizer(spec: &LossSpec, y: &[f64]) -> Result<f64, LossError> {
    if y.is_empty() {
        return Err(LossError::Empty);
    }
    spec.validate_response(y)?;
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    match *spec {
        LossSpec::Gaussian => Ok(mean),
        LossSpec::Logistic => {
            if mean <= 0.0 || mean >= 1.0 {
                return Err(LossError::Separation);
            }
            Ok((mean / (1.0 - mean)).ln())
        }
        LossSpec::Poisson => {
            if mean <= 0.0 {
                return Err(LossError::Boundary);
            }
            Ok(mean.ln())
        }
        LossSpec::ExponentialClassification => {
            let pos = y.iter().filter(|&&v| v > 0.0).count() as f64;
            let neg = n - pos;
            if pos == 0.0 || neg == 0.0 {
                return Err(LossError::Separation);
            }
            Ok(0.5 * (pos / neg).ln())
        }
        LossSpec::Quantile { alpha } => Ok(order_statistic_quantile(y, alpha.get())),
    }
}
