//! Goodness-of-fit nonparametric screening for ultrahigh-dimensional sparse
//! regression.
//!
//! Each covariate is fitted marginally with a B-spline under a convex loss;
//! the drop in mean loss relative to the intercept-only fit ranks the
//! covariates. Thresholds come from row permutations of the design, and an
//! iterative variant alternates conditional screening with group-penalized
//! additive refits.

pub mod bspline;
pub mod data;
pub mod iterative;
pub mod loss;
pub mod marginal_fit;
pub mod report;
pub mod rng;
pub mod screening;
pub mod simbench;

pub use bspline::{design_matrix, make_basis, DesignMatrix, SplineBasis};
pub use data::{load_csv, Dataset, ResponseKind};
pub use iterative::{
    conditional_screen, penalized_refit, run_iterative, IterationTrace, IterativeOptions,
    PenaltyGrid, StopReason,
};
pub use loss::{null_minimizer, LossSpec};
pub use marginal_fit::{fit_joint, fit_marginal, fit_null, FitResult, SolverOptions};
pub use screening::{
    permutation_threshold, screen_all, screen_and_select, select, ScreenConfig, ScreeningResult,
    ThresholdRule,
};
pub use simbench::{gen_dataset, minimum_model_size, run_benchmark, BenchmarkSummary, SimModel};
