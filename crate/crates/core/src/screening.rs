//! Goodness-of-fit screening: per-covariate statistics, ranking, and
//! fixed or permutation-calibrated thresholds.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspline::{design_matrix, make_basis, BasisError, DesignMatrix, DEFAULT_DEGREE};
use crate::data::Dataset;
use crate::loss::LossSpec;
use crate::marginal_fit::{fit_marginal, fit_null, FitError, FitResult, SolverOptions};
use crate::rng::{domain, stream_rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScreenError {
    #[error("intercept-only fit failed: {0}")]
    NullFit(FitError),

    #[error("invalid screening configuration: {0}")]
    Config(String),
}

/// Number of basis functions `ceil(n^(1/5)) + 2`.
pub fn default_num_basis(n: usize) -> usize {
    let root = (n as f64).powf(0.2);
    // guard against powf landing just above an integer
    let rounded = root.round();
    let ceil = if (root - rounded).abs() < 1e-12 {
        rounded
    } else {
        root.ceil()
    };
    ceil as usize + 2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenConfig {
    pub loss: LossSpec,
    pub num_basis: usize,
    pub degree: usize,
    pub solver: SolverOptions,
}

impl ScreenConfig {
    pub fn new(loss: LossSpec, num_basis: usize) -> Self {
        Self {
            loss,
            num_basis,
            degree: DEFAULT_DEGREE,
            solver: SolverOptions::default(),
        }
    }

    pub fn for_sample_size(loss: LossSpec, n: usize) -> Self {
        Self::new(loss, default_num_basis(n))
    }

    pub(crate) fn check(&self, data: &Dataset) -> Result<(), ScreenError> {
        if self.num_basis < self.degree + 1 {
            return Err(ScreenError::Config(format!(
                "d_n = {} is below degree + 1 = {}",
                self.num_basis,
                self.degree + 1
            )));
        }
        if data.n() < self.num_basis + 1 {
            return Err(ScreenError::Config(format!(
                "n = {} must exceed d_n = {}",
                data.n(),
                self.num_basis
            )));
        }
        self.solver
            .validate()
            .map_err(|e| ScreenError::Config(e.to_string()))
    }
}

/// Outcome of fitting one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateStatus {
    Converged,
    NotConverged,
    /// too few distinct values to build a basis
    Degenerate,
    /// the fit itself failed (singular design)
    Failed,
    /// already part of the conditioning model
    InModel,
}

impl CovariateStatus {
    pub fn is_usable(self) -> bool {
        matches!(
            self,
            CovariateStatus::Converged | CovariateStatus::NotConverged
        )
    }
}

/// Serde helpers for statistics that may be non-finite.
pub(crate) mod finite_or_null {
    pub mod vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                seq.serialize_element(&x.is_finite().then_some(*x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let raw = Vec::<Option<f64>>::deserialize(d)?;
            Ok(raw
                .into_iter()
                .map(|v| v.unwrap_or(f64::NEG_INFINITY))
                .collect())
        }
    }

    /// Plain `f64` that keeps infinities as the strings `"inf"` and `"-inf"`.
    pub mod named {
        use serde::{Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            super::option::serialize(&Some(*v), s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            Ok(super::option::deserialize(d)?.unwrap_or(f64::NAN))
        }
    }

    /// Like [`named`] for sequences.
    pub mod named_vec {
        use serde::ser::SerializeSeq;
        use serde::{Deserialize, Deserializer, Serializer};

        #[derive(serde::Serialize)]
        struct Item(#[serde(with = "super::named")] f64);

        #[derive(Deserialize)]
        struct Back(#[serde(with = "super::named")] f64);

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for &x in v {
                seq.serialize_element(&Item(x))?;
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Ok(Vec::<Back>::deserialize(d)?
                .into_iter()
                .map(|b| b.0)
                .collect())
        }
    }

    pub mod option {
        use serde::{Deserialize, Deserializer, Serialize, Serializer};

        #[derive(Serialize, Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Finite(f64),
            Named(String),
        }

        pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                None => s.serialize_none(),
                Some(x) if x.is_finite() => Repr::Finite(*x).serialize(s),
                Some(x) if *x > 0.0 => Repr::Named("inf".into()).serialize(s),
                Some(x) if *x < 0.0 => Repr::Named("-inf".into()).serialize(s),
                Some(_) => Repr::Named("nan".into()).serialize(s),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Ok(match Option::<Repr>::deserialize(d)? {
                None => None,
                Some(Repr::Finite(x)) => Some(x),
                Some(Repr::Named(s)) => Some(match s.as_str() {
                    "inf" => f64::INFINITY,
                    "-inf" => f64::NEG_INFINITY,
                    _ => f64::NAN,
                }),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    /// Goodness-of-fit statistic per covariate; negative infinity for
    /// covariates that could not be fitted.
    #[serde(with = "finite_or_null::vec")]
    pub stats: Vec<f64>,
    /// Covariate indices by decreasing statistic, ties by ascending index.
    pub ranking: Vec<usize>,
    #[serde(with = "finite_or_null::option")]
    pub threshold: Option<f64>,
    pub selected: Vec<usize>,
    pub status: Vec<CovariateStatus>,
}

impl ScreeningResult {
    pub fn from_stats(stats: Vec<f64>, status: Vec<CovariateStatus>) -> Self {
        assert_eq!(stats.len(), status.len());
        let ranking = rank_descending(&stats);
        Self {
            stats,
            ranking,
            threshold: None,
            selected: Vec::new(),
            status,
        }
    }

    pub fn p(&self) -> usize {
        self.stats.len()
    }

    /// Applies `threshold`, filling `threshold` and `selected`.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.selected = select(&self, threshold);
        self.threshold = Some(threshold);
        self
    }

    /// Keeps the `k` best-ranked usable covariates; the threshold becomes the
    /// `k`-th largest statistic.
    pub fn with_top_k(mut self, k: usize) -> Self {
        let mut chosen: Vec<usize> = self
            .ranking
            .iter()
            .copied()
            .filter(|&j| self.status[j].is_usable())
            .take(k)
            .collect();
        self.threshold = Some(chosen.last().map_or(f64::INFINITY, |&j| self.stats[j]));
        chosen.sort_unstable();
        self.selected = chosen;
        self
    }

    /// 1-based rank position of each covariate.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.ranking.len()];
        for (r, &j) in self.ranking.iter().enumerate() {
            pos[j] = r + 1;
        }
        pos
    }
}

/// Indices sorted by decreasing value with ties broken by ascending index.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// `null.objective - marginal.objective`.
pub fn gof_statistic(null_fit: &FitResult, marginal_fit: &FitResult) -> f64 {
    null_fit.objective - marginal_fit.objective
}

/// Sorted indices whose statistic is at least `threshold`.
pub fn select(result: &ScreeningResult, threshold: f64) -> Vec<usize> {
    (0..result.p())
        .filter(|&j| result.status[j].is_usable() && result.stats[j] >= threshold)
        .collect()
}

pub(crate) fn covariate_design(
    data: &Dataset,
    j: usize,
    cfg: &ScreenConfig,
) -> Result<DesignMatrix, BasisError> {
    let column = data.column(j);
    let basis = make_basis(column, cfg.num_basis, cfg.degree)?;
    Ok(design_matrix(&basis, column, j))
}

fn marginal_stat(
    data: &Dataset,
    j: usize,
    cfg: &ScreenConfig,
    null: &FitResult,
) -> (f64, CovariateStatus) {
    let design = match covariate_design(data, j, cfg) {
        Ok(d) => d,
        Err(_) => return (f64::NEG_INFINITY, CovariateStatus::Degenerate),
    };
    match fit_marginal(&design, data.y(), &cfg.loss, &cfg.solver) {
        Ok(fit) if fit.objective.is_finite() => {
            let status = if fit.converged {
                CovariateStatus::Converged
            } else {
                CovariateStatus::NotConverged
            };
            (gof_statistic(null, &fit), status)
        }
        _ => (f64::NEG_INFINITY, CovariateStatus::Failed),
    }
}

/// Statistics for every covariate, in covariate order.
pub(crate) fn marginal_stats(
    data: &Dataset,
    cfg: &ScreenConfig,
) -> Result<(Vec<f64>, Vec<CovariateStatus>), ScreenError> {
    cfg.check(data)?;
    let null = fit_null(data.y(), &cfg.loss).map_err(ScreenError::NullFit)?;
    let per: Vec<(f64, CovariateStatus)> = (0..data.p())
        .into_par_iter()
        .map(|j| marginal_stat(data, j, cfg, &null))
        .collect();
    Ok(per.into_iter().unzip())
}

/// Fits the null model and all `p` marginal models and ranks the covariates.
/// The threshold is left unset.
pub fn screen_all(data: &Dataset, cfg: &ScreenConfig) -> Result<ScreeningResult, ScreenError> {
    let (stats, status) = marginal_stats(data, cfg)?;
    Ok(ScreeningResult::from_stats(stats, status))
}

/// Uniform random permutation of `0..n` from stream `index` of `seed`.
pub(crate) fn random_permutation(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = stream_rng(seed, domain::PERMUTATION, index);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    perm
}

/// `ceil(q N)`-th smallest of the finite pooled values (`q = 1` gives the maximum).
pub(crate) fn pooled_quantile(mut pool: Vec<f64>, q: f64) -> f64 {
    pool.retain(|v| v.is_finite());
    if pool.is_empty() {
        return f64::INFINITY;
    }
    pool.sort_by(f64::total_cmp);
    let k = ((q * pool.len() as f64).ceil() as usize).clamp(1, pool.len());
    pool[k - 1]
}

pub(crate) fn check_quantile_level(q: f64) -> Result<(), ScreenError> {
    if q > 0.0 && q <= 1.0 {
        Ok(())
    } else {
        Err(ScreenError::Config(format!(
            "permutation quantile must lie in (0, 1], got {q}"
        )))
    }
}

/// Threshold from `n_perm` row permutations of the covariate matrix.
///
/// Each round shuffles the rows of `X` jointly, recomputes every statistic on
/// the decoupled data, and the `q`-quantile of all pooled permuted statistics
/// is returned.
pub fn permutation_threshold(
    data: &Dataset,
    cfg: &ScreenConfig,
    n_perm: usize,
    q: f64,
    seed: u64,
) -> Result<f64, ScreenError> {
    if n_perm == 0 {
        return Err(ScreenError::Config(
            "at least one permutation is required".into(),
        ));
    }
    check_quantile_level(q)?;
    let mut pool = Vec::with_capacity(n_perm * data.p());
    for r in 0..n_perm {
        let perm = random_permutation(data.n(), seed, r as u64);
        let permuted = data.permute_rows(&perm, |_| true);
        let (stats, _) = marginal_stats(&permuted, cfg)?;
        pool.extend(stats);
    }
    Ok(pooled_quantile(pool, q))
}

/// How the selection threshold is chosen after ranking.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `q`-quantile of statistics pooled over `n_perm` row permutations.
    Permutation {
        n_perm: usize,
        q: f64,
    },
    Manual {
        value: f64,
    },
    TopK {
        k: usize,
    },
}

impl Default for ThresholdRule {
    fn default() -> Self {
        ThresholdRule::Permutation { n_perm: 1, q: 1.0 }
    }
}

impl std::str::FromStr for ThresholdRule {
    type Err = String;

    /// Parses `perm`, `manual:V` or `topk:K`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "perm" {
            return Ok(Self::default());
        }
        if let Some(v) = s.strip_prefix("manual:") {
            let value: f64 = v
                .parse()
                .map_err(|_| format!("bad manual threshold `{v}`"))?;
            if value.is_nan() {
                return Err("manual threshold must be a number".into());
            }
            return Ok(ThresholdRule::Manual { value });
        }
        if let Some(k) = s.strip_prefix("topk:") {
            let k: usize = k.parse().map_err(|_| format!("bad top-k count `{k}`"))?;
            return Ok(ThresholdRule::TopK { k });
        }
        Err(format!(
            "unknown threshold rule `{s}` (expected perm, manual:V or topk:K)"
        ))
    }
}

/// Screens every covariate and applies `rule`.
pub fn screen_and_select(
    data: &Dataset,
    cfg: &ScreenConfig,
    rule: ThresholdRule,
    seed: u64,
) -> Result<ScreeningResult, ScreenError> {
    let result = screen_all(data, cfg)?;
    Ok(match rule {
        ThresholdRule::Permutation { n_perm, q } => {
            let t = permutation_threshold(data, cfg, n_perm, q, seed)?;
            result.with_threshold(t)
        }
        ThresholdRule::Manual { value } => result.with_threshold(value),
        ThresholdRule::TopK { k } => result.with_top_k(k),
    })
}
