//! Simulation models and minimum-model-size benchmarks.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::loss::{sigmoid, LossSpec};
use crate::rng::{derive_seed, domain, stream_rng};
use crate::screening::{
    screen_and_select, ScreenConfig, ScreenError, ScreeningResult, ThresholdRule,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("f_{0} is not defined (expected 1..=9)")]
    UnknownFunction(usize),

    #[error("model {0} is not defined (expected 1..=8)")]
    UnknownModel(u8),

    #[error("model {model} needs {required}, got {got}")]
    Dimension {
        model: u8,
        required: &'static str,
        got: String,
    },

    #[error("truth set is empty")]
    EmptyTruth,

    #[error("truth index {index} is out of range for p = {p}")]
    TruthOutOfRange { index: usize, p: usize },

    #[error("at least one replication is required")]
    NoReplications,

    #[error("every replication failed; first error: {0}")]
    AllFailed(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Screen(#[from] ScreenError),
}

/// Component functions `f_1` to `f_9`.
pub fn eval_f(k: usize, x: f64) -> Result<f64, SimError> {
    let s = (2.0 * PI * x).sin();
    let c = (2.0 * PI * x).cos();
    Ok(match k {
        1 => x,
        2 => (2.0 * x - 1.0).powi(2),
        3 => s / (2.0 - s),
        4 => 0.1 * s + 0.2 * c + 0.3 * s * s + 0.4 * c.powi(3) + 0.5 * s.powi(3),
        5 => (x - 0.5).exp(),
        6 => 0.1 * s * s + 0.4 * c.powi(3),
        7 => (x - 1.0).sin(),
        8 => (x - 1.5).powi(2),
        9 => 2.0 * x.cos() / (2.0 - x.sin()),
        _ => return Err(SimError::UnknownFunction(k)),
    })
}

fn f(k: usize, x: f64) -> f64 {
    eval_f(k, x).expect("component index is fixed by the model")
}

/// Random-effects mixing weight of the correlated designs.
const RANDOM_EFFECT_T: f64 = 0.4;
/// Lag-one correlation of the Gaussian designs.
const AR_RHO: f64 = 0.8;
/// Noise variance of the homoscedastic regressions.
const NOISE_VARIANCE: f64 = 1.74;
/// Scale of the Laplace noise.
const LAPLACE_SCALE: f64 = 2.0;

/// One simulated data-generating setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimModel {
    pub model_id: u8,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl SimModel {
    pub fn new(model_id: u8, n: usize, p: usize, seed: u64) -> Self {
        Self {
            model_id,
            n,
            p,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let min_p = match self.model_id {
            1..=6 => 4,
            7 | 8 => 22,
            id => return Err(SimError::UnknownModel(id)),
        };
        if self.p < min_p {
            return Err(SimError::Dimension {
                model: self.model_id,
                required: if min_p == 4 { "p >= 4" } else { "p >= 22" },
                got: format!("p = {}", self.p),
            });
        }
        if self.n < 2 {
            return Err(SimError::Dimension {
                model: self.model_id,
                required: "n >= 2",
                got: format!("n = {}", self.n),
            });
        }
        Ok(())
    }

    /// Covariates entering the conditional mean (0-based).
    pub fn mean_truth(&self) -> Vec<usize> {
        vec![0, 1, 2, 3]
    }

    /// Every covariate the response depends on (0-based); for the
    /// heteroscedastic models this adds the three scale covariates.
    pub fn full_truth(&self) -> Vec<usize> {
        match self.model_id {
            7 | 8 => vec![0, 1, 2, 3, 19, 20, 21],
            _ => self.mean_truth(),
        }
    }

    /// Loss matching the response type.
    pub fn natural_loss(&self) -> LossSpec {
        match self.model_id {
            3 | 4 => LossSpec::Logistic,
            5 | 6 => LossSpec::Poisson,
            _ => LossSpec::Gaussian,
        }
    }
}

fn uniform_columns(rng: &mut ChaCha20Rng, n: usize, p: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n * p).map(|_| rng.random_range(lo..hi)).collect()
}

/// `X_j = (W_j + t U) / (1 + t)` with one shared `U ~ U(0, 1)` per row.
fn random_effect_columns(rng: &mut ChaCha20Rng, n: usize, p: usize, lo: f64, hi: f64) -> Vec<f64> {
    let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let mut x = uniform_columns(rng, n, p, lo, hi);
    for col in x.chunks_mut(n) {
        for (v, &ui) in col.iter_mut().zip(&u) {
            *v = (*v + RANDOM_EFFECT_T * ui) / (1.0 + RANDOM_EFFECT_T);
        }
    }
    x
}

/// Stationary Gaussian AR(1) across columns: unit variance, correlation
/// `rho^|i-j|` between columns `i` and `j`.
fn ar1_columns(rng: &mut ChaCha20Rng, n: usize, p: usize) -> Vec<f64> {
    let innov = (1.0 - AR_RHO * AR_RHO).sqrt();
    let mut x = vec![0.0; n * p];
    for i in 0..n {
        x[i] = rng.sample(StandardNormal);
    }
    for j in 1..p {
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            x[j * n + i] = AR_RHO * x[(j - 1) * n + i] + innov * z;
        }
    }
    x
}

fn laplace(rng: &mut ChaCha20Rng, scale: f64) -> f64 {
    // inverse CDF on (-1/2, 1/2)
    let u: f64 = rng.random::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Draws one dataset; returns it with the mean-active truth set.
pub fn gen_dataset(model: &SimModel) -> Result<(Dataset, Vec<usize>), SimError> {
    model.validate()?;
    let (n, p) = (model.n, model.p);
    let mut rng = stream_rng(model.seed, domain::DATA, 0);
    let x = match model.model_id {
        1 | 5 => uniform_columns(&mut rng, n, p, 0.0, 1.0),
        3 => uniform_columns(&mut rng, n, p, -2.5, 2.5),
        2 | 6 => random_effect_columns(&mut rng, n, p, 0.0, 1.0),
        4 => random_effect_columns(&mut rng, n, p, -2.5, 2.5),
        _ => ar1_columns(&mut rng, n, p),
    };
    let col = |j: usize, i: usize| x[j * n + i];
    let sd = NOISE_VARIANCE.sqrt();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let (x1, x2, x3, x4) = (col(0, i), col(1, i), col(2, i), col(3, i));
            match model.model_id {
                1 | 2 => {
                    let e: f64 = rng.sample(StandardNormal);
                    5.0 * f(1, x1) + 3.0 * f(2, x2) + 4.0 * f(3, x3) + 6.0 * f(4, x4) + sd * e
                }
                3 | 4 => {
                    let eta = 2.0 * f(1, x1) + 3.0 * f(7, x2) + 2.0 * f(8, x3) + 3.5 * f(9, x4);
                    let b = Bernoulli::new(sigmoid(eta)).expect("probability in [0, 1]");
                    f64::from(u8::from(b.sample(&mut rng)))
                }
                5 | 6 => {
                    let mu = (f(1, x1) + f(3, x2) + f(5, x3) + f(6, x4)).exp();
                    Poisson::new(mu).expect("positive mean").sample(&mut rng)
                }
                _ => {
                    let mean = 5.0 * f(1, x1) + 3.0 * f(2, x2) + 4.0 * f(3, x3) + 4.0 * f(5, x4);
                    let scale =
                        0.5 * (f(6, col(19, i)) + f(7, col(20, i)) + f(8, col(21, i))).exp();
                    let e = if model.model_id == 7 {
                        rng.sample(StandardNormal)
                    } else {
                        laplace(&mut rng, LAPLACE_SCALE)
                    };
                    mean + scale * e
                }
            }
        })
        .collect();
    let data = Dataset::from_column_major(x, n, p, y)?;
    Ok((data, model.mean_truth()))
}

/// Smallest `k` such that the `k` best-ranked covariates contain `truth`.
pub fn minimum_model_size(result: &ScreeningResult, truth: &[usize]) -> Result<usize, SimError> {
    if truth.is_empty() {
        return Err(SimError::EmptyTruth);
    }
    let positions = result.positions();
    truth
        .iter()
        .map(|&j| {
            positions.get(j).copied().ok_or(SimError::TruthOutOfRange {
                index: j,
                p: result.p(),
            })
        })
        .try_fold(0, |acc, pos| pos.map(|v| acc.max(v)))
}

/// Type-7 (linear interpolation) sample quantile.
pub fn type7_quantile(sorted: &[f64], q: f64) -> f64 {
    crate::bspline::interpolated_quantile(sorted, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub median: f64,
    pub iqr: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
}

impl QuantileSummary {
    /// Summary of a nonempty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p| type7_quantile(&v, p);
        Some(Self {
            median: q(0.5),
            iqr: q(0.75) - q(0.25),
            q05: q(0.05),
            q25: q(0.25),
            q75: q(0.75),
            q95: q(0.95),
        })
    }
}

/// Minimum model sizes against one truth set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthScore {
    pub truth: Vec<usize>,
    /// One entry per successful replication, in replication order.
    pub sizes: Vec<usize>,
    pub summary: QuantileSummary,
}

impl TruthScore {
    fn new(truth: Vec<usize>, sizes: Vec<usize>) -> Option<Self> {
        let as_f: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        QuantileSummary::of(&as_f).map(|summary| Self {
            truth,
            sizes,
            summary,
        })
    }
}

/// How often the thresholded selection covered the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub threshold_rule: ThresholdRule,
    /// Fraction of replications whose selected set contains the truth.
    pub coverage: f64,
    pub mean_selected: f64,
    pub mean_false_positives: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub model_id: u8,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub config: ScreenConfig,
    /// Scored against the covariates entering the mean.
    pub primary: TruthScore,
    /// Scored against every covariate the response depends on, for models
    /// where that differs from the mean-active set.
    pub secondary: Option<TruthScore>,
    pub selection: Option<SelectionSummary>,
    pub failed: usize,
    pub failures: Vec<String>,
}

/// Runs `body` on `reps` independently seeded datasets of `model`, in
/// parallel, returning results in replication order. Replication `r` uses
/// seed `derive_seed(master_seed, r)`.
pub fn run_replications<T, F>(
    model_id: u8,
    n: usize,
    p: usize,
    reps: usize,
    master_seed: u64,
    body: F,
) -> Vec<Result<T, SimError>>
where
    T: Send,
    F: Fn(usize, &Dataset, &SimModel) -> Result<T, SimError> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let model = SimModel::new(model_id, n, p, derive_seed(master_seed, r as u64));
            let (data, _) = gen_dataset(&model)?;
            body(r, &data, &model)
        })
        .collect()
}

struct Replication {
    primary: usize,
    secondary: usize,
    covered: bool,
    selected: usize,
    false_positives: usize,
}

/// Screens `reps` replications of `template` (its seed is the master seed)
/// and summarizes the minimum model sizes; with a threshold rule, the
/// selected sets are summarized too.
pub fn run_benchmark(
    template: &SimModel,
    reps: usize,
    config: &ScreenConfig,
    threshold: Option<ThresholdRule>,
) -> Result<BenchmarkSummary, SimError> {
    if reps == 0 {
        return Err(SimError::NoReplications);
    }
    template.validate()?;
    // surface a loss/response mismatch once instead of per replication
    let probe = SimModel::new(
        template.model_id,
        template.n,
        template.p,
        derive_seed(template.seed, 0),
    );
    gen_dataset(&probe)?.0.prepare_for(&config.loss)?;
    let rule = threshold.unwrap_or(ThresholdRule::TopK { k: 0 });
    let outcomes = run_replications(
        template.model_id,
        template.n,
        template.p,
        reps,
        template.seed,
        |_, data, model| {
            let data = data.prepare_for(&config.loss)?;
            let result = screen_and_select(&data, config, rule, model.seed)?;
            let mean = model.mean_truth();
            let full = model.full_truth();
            Ok(Replication {
                primary: minimum_model_size(&result, &mean)?,
                secondary: minimum_model_size(&result, &full)?,
                covered: mean
                    .iter()
                    .all(|j| result.selected.binary_search(j).is_ok()),
                selected: result.selected.len(),
                false_positives: result.selected.iter().filter(|j| !full.contains(j)).count(),
            })
        },
    );

    let mut ok = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (r, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(format!("replication {r}: {e}")),
        }
    }
    if ok.is_empty() {
        return Err(SimError::AllFailed(
            failures.first().cloned().unwrap_or_default(),
        ));
    }
    let primary = TruthScore::new(
        template.mean_truth(),
        ok.iter().map(|r| r.primary).collect(),
    )
    .expect("at least one replication");
    let secondary = (template.full_truth() != template.mean_truth())
        .then(|| {
            TruthScore::new(
                template.full_truth(),
                ok.iter().map(|r| r.secondary).collect(),
            )
        })
        .flatten();
    let m = ok.len() as f64;
    let selection = threshold.map(|rule| SelectionSummary {
        threshold_rule: rule,
        coverage: ok.iter().filter(|r| r.covered).count() as f64 / m,
        mean_selected: ok.iter().map(|r| r.selected as f64).sum::<f64>() / m,
        mean_false_positives: ok.iter().map(|r| r.false_positives as f64).sum::<f64>() / m,
    });
    Ok(BenchmarkSummary {
        model_id: template.model_id,
        n: template.n,
        p: template.p,
        reps,
        master_seed: template.seed,
        config: *config,
        primary,
        secondary,
        selection,
        failed: failures.len(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::screening::CovariateStatus;
    use approx::assert_abs_diff_eq;

    #[test]
    fn component_functions() {
        assert_eq!(eval_f(2, 0.5).unwrap(), 0.0);
        assert_eq!(eval_f(5, 0.5).unwrap(), 1.0);
        assert_abs_diff_eq!(eval_f(3, 0.25).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(eval_f(1, 0.3).unwrap(), 0.3);
        // sin = 0, cos = 1 at x = 0
        assert_abs_diff_eq!(eval_f(4, 0.0).unwrap(), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_f(6, 0.0).unwrap(), 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_f(7, 1.0).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_f(8, 0.5).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eval_f(9, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(eval_f(0, 0.0), Err(SimError::UnknownFunction(0))));
        assert!(eval_f(10, 0.0).is_err());
    }

    fn ranked(ranking: Vec<usize>) -> ScreeningResult {
        let p = ranking.len();
        let mut stats = vec![0.0; p];
        for (r, &j) in ranking.iter().enumerate() {
            stats[j] = (p - r) as f64;
        }
        ScreeningResult::from_stats(stats, vec![CovariateStatus::Converged; p])
    }

    #[test]
    fn minimum_model_size_cases() {
        let res = ranked(vec![0, 1, 2, 8, 9, 5, 3, 4, 6, 7]);
        assert_eq!(minimum_model_size(&res, &[0, 1, 2, 3]).unwrap(), 7);
        let res = ranked((0..10).collect());
        assert_eq!(minimum_model_size(&res, &[0, 1, 2, 3]).unwrap(), 4);
        let res = ranked(vec![0, 1, 2, 3, 5, 6, 7, 8, 9, 4]);
        assert_eq!(minimum_model_size(&res, &[4]).unwrap(), 10);
        assert!(matches!(
            minimum_model_size(&res, &[]),
            Err(SimError::EmptyTruth)
        ));
        assert!(minimum_model_size(&res, &[10]).is_err());
    }

    #[test]
    fn quantile_summary_by_hand() {
        // sorted 1, 2, 3, 4, 10: h = (n - 1) q
        let s = QuantileSummary::of(&[4.0, 1.0, 10.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q25, 2.0);
        assert_eq!(s.q75, 4.0);
        assert_eq!(s.iqr, 2.0);
        assert_abs_diff_eq!(s.q05, 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.q95, 8.8, epsilon = 1e-12);
        let s = QuantileSummary::of(&[4.0, 4.0, 5.0, 11.0]).unwrap();
        assert_eq!(s.median, 4.5);
        assert_abs_diff_eq!(s.q75, 6.5, epsilon = 1e-12);
        let one = QuantileSummary::of(&[7.0]).unwrap();
        assert_eq!([one.median, one.q05, one.q25, one.q75, one.q95], [7.0; 5]);
        assert_eq!(one.iqr, 0.0);
        assert!(QuantileSummary::of(&[]).is_none());
    }

    /// Kolmogorov-Smirnov distance to U(0, 1).
    fn ks_uniform(values: &[f64]) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        v.iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
            .fold(0.0, f64::max)
    }

    #[test]
    fn uniform_designs_pass_ks() {
        // asymptotic 1e-3 critical value: sqrt(-ln(0.0005) / 2) / sqrt(n)
        let n = 100_000;
        let crit = (-(0.0005f64).ln() / 2.0).sqrt() / (n as f64).sqrt();
        for id in [1, 5] {
            let (data, _) = gen_dataset(&SimModel::new(id, n, 5, 17)).unwrap();
            for j in 0..5 {
                let d = ks_uniform(data.column(j));
                assert!(d < crit, "model {id} column {j}: D = {d}, critical {crit}");
            }
        }
    }

    #[test]
    fn injected_noise_has_stated_variance() {
        let n = 1_000_000;
        let (data, _) = gen_dataset(&SimModel::new(1, n, 4, 3)).unwrap();
        let resid: Vec<f64> = (0..n)
            .map(|i| {
                let c = |j: usize| data.column(j)[i];
                data.y()[i] - (5.0 * c(0) + 3.0 * f(2, c(1)) + 4.0 * f(3, c(2)) + 6.0 * f(4, c(3)))
            })
            .collect();
        let mean = resid.iter().sum::<f64>() / n as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / NOISE_VARIANCE - 1.0).abs() < 0.01, "{var}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn random_effect_design_is_correlated_and_bounded() {
        let (data, _) = gen_dataset(&SimModel::new(2, 10_000, 6, 5)).unwrap();
        for j in 0..6 {
            assert!(data.column(j).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        for (a, b) in [(0, 1), (2, 5), (3, 4)] {
            let r = correlation(data.column(a), data.column(b));
            assert!(r > 0.05, "corr({a}, {b}) = {r}");
        }
    }

    #[test]
    fn ar1_design_has_geometric_correlation() {
        let (data, _) = gen_dataset(&SimModel::new(7, 20_000, 25, 2)).unwrap();
        for (a, b) in [(0, 1), (4, 6), (10, 13)] {
            let r = correlation(data.column(a), data.column(b));
            let target = AR_RHO.powi((b - a) as i32);
            assert!(
                (r - target).abs() < 0.03,
                "corr({a}, {b}) = {r}, expected {target}"
            );
        }
    }

    #[test]
    fn logistic_model_response_matches_link() {
        let n = 200_000;
        let (data, truth) = gen_dataset(&SimModel::new(3, n, 4, 9)).unwrap();
        assert_eq!(truth, vec![0, 1, 2, 3]);
        assert!(data.y().iter().all(|&v| v == 0.0 || v == 1.0));
        // mean residual Y - P(Y = 1 | X) is zero, overall and on a half-space
        let (mut all, mut half, mut nh) = (0.0, 0.0, 0usize);
        for i in 0..n {
            let c = |j: usize| data.column(j)[i];
            let prob = sigmoid(2.0 * c(0) + 3.0 * f(7, c(1)) + 2.0 * f(8, c(2)) + 3.5 * f(9, c(3)));
            all += data.y()[i] - prob;
            if c(1) > 0.0 {
                half += data.y()[i] - prob;
                nh += 1;
            }
        }
        assert!((all / n as f64).abs() < 0.005);
        assert!((half / nh as f64).abs() < 0.007);
    }

    #[test]
    fn count_and_heteroscedastic_models() {
        let (data, _) = gen_dataset(&SimModel::new(6, 500, 10, 1)).unwrap();
        assert!(data.y().iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        let model = SimModel::new(8, 300, 22, 4);
        let (data, truth) = gen_dataset(&model).unwrap();
        assert_eq!(data.p(), 22);
        assert_eq!(truth, vec![0, 1, 2, 3]);
        assert_eq!(model.full_truth(), vec![0, 1, 2, 3, 19, 20, 21]);
        assert!(gen_dataset(&SimModel::new(7, 100, 21, 0)).is_err());
        assert!(gen_dataset(&SimModel::new(9, 100, 30, 0)).is_err());
    }

    #[test]
    fn laplace_draws_have_scale_two() {
        let mut rng = stream_rng(11, domain::DATA, 0);
        let draws: Vec<f64> = (0..400_000)
            .map(|_| laplace(&mut rng, LAPLACE_SCALE))
            .collect();
        let mean_abs = draws.iter().map(|v| v.abs()).sum::<f64>() / draws.len() as f64;
        assert!((mean_abs - 2.0).abs() < 0.02, "{mean_abs}");
    }

    #[test]
    fn generation_is_reproducible() {
        let m = SimModel::new(4, 50, 8, 21);
        assert_eq!(gen_dataset(&m).unwrap().0, gen_dataset(&m).unwrap().0);
        assert_ne!(
            gen_dataset(&m).unwrap().0,
            gen_dataset(&SimModel { seed: 22, ..m }).unwrap().0
        );
    }

    #[test]
    fn small_benchmark_is_thread_count_independent() {
        let template = SimModel::new(1, 120, 30, 5);
        let cfg = ScreenConfig::for_sample_size(LossSpec::Gaussian, 120);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    run_benchmark(&template, 6, &cfg, Some(ThresholdRule::default())).unwrap()
                })
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a, b);
        assert_eq!(a.primary.sizes.len(), 6);
        assert!(a.primary.sizes.iter().all(|&s| (4..=30).contains(&s)));
        assert!(a.secondary.is_none());
        assert_eq!(a.failed, 0);
        let single = run_benchmark(&template, 1, &cfg, None).unwrap();
        let s = single.primary.summary;
        assert_eq!(
            [s.median, s.q05, s.q25, s.q75, s.q95],
            [single.primary.sizes[0] as f64; 5]
        );
    }
}
