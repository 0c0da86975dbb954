//! Post-selection inference for a scalar endogenous effect in linear IV
//! models with many controls and many instruments.
//!
//! The crate provides:
//!
//! - a weighted-penalty Lasso solver with a data-driven penalty level,
//!   iterated heteroscedasticity-adapted loadings, and Post-Lasso refits
//!   ([`lasso`]);
//! - classical baselines: OLS with robust covariance and forward-backward
//!   stepwise selection ([`ols`], [`stepwise`]);
//! - the double-selection orthogonal-moment IV estimator with robust
//!   standard errors, a score test, naive baselines, and a
//!   union-of-controls 2SLS variant ([`iv`]);
//! - a reproducible Monte Carlo engine measuring median bias, median
//!   absolute deviation, and test size ([`monte_carlo`]);
//! - a demand-panel toolkit: characteristic expansion, sum-of-characteristics
//!   instruments, logit outcomes, and elasticity accounting ([`demand`]).

// Validation guards use `!(x > y)` so that NaN inputs are rejected; indexed
// loops are kept where several parallel columns are walked together.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod demand;
pub mod dist;
pub mod error;
pub mod iv;
pub mod lasso;
pub mod monte_carlo;
pub mod ols;
pub mod problem;
pub mod stepwise;

pub use error::{Error, Result};
pub use iv::{
    empirical_moment, estimate_double_selection, estimate_naive_nonorthogonal,
    estimate_naive_stepwise, estimate_union_2sls, moment_psi, residuals_at,
    score_confidence_set, score_statistic, solve_alpha, AlphaEstimate, IVDataset,
    NuisanceParameters, PipelineConfig, ResidualTriple, ScoreConfidenceSet, SelectionCounts,
    SolveOptions,
};
pub use lasso::{compute_penalty_level, fit_lasso, post_lasso_refit, LassoFit, PenaltyRule};
pub use monte_carlo::{
    generate_dataset, oracle_estimate, run_simulation, EstimatorId, SimulationConfig,
    SimulationSummary,
};
pub use ols::{fit_ols, OlsFit};
pub use problem::RegressionProblem;
pub use stepwise::{stepwise_select, StepwiseRule, StepwiseSelection};
