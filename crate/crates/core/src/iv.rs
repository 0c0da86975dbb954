//! Orthogonal-moment IV estimation of a scalar endogenous effect with
//! high-dimensional controls and instruments.
//!
//! The main entry point is [`estimate_double_selection`]: Post-Lasso
//! regressions of `d` on `(x, z)`, `y` on `x`, and the fitted first stage on
//! `x` produce a residual triple whose IV ratio solves the empirical
//! orthogonal moment. Naive baselines (stepwise selection, a non-orthogonal
//! moment) and a union-of-controls 2SLS variant are provided for comparison.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dist::{chi_squared_1_quantile, normal_quantile};
use crate::error::{Error, Result};
use crate::lasso::{fit_lasso, post_lasso_refit, PenaltyRule};
use crate::ols::{least_squares, pseudo_inverse};
use crate::problem::RegressionProblem;
use crate::stepwise::{stepwise_select, StepwiseRule};

/// Observations for the linear IV model: outcome `y`, scalar endogenous
/// regressor `d`, controls `x`, instruments `z`. `p_z = 0` signals the
/// exogenous case.
#[derive(Debug, Clone)]
pub struct IVDataset {
    y: DVector<f64>,
    d: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    intercept_index: Option<usize>,
}

impl IVDataset {
    pub fn new(
        y: DVector<f64>,
        d: DVector<f64>,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        intercept_index: Option<usize>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Input("dataset has no rows".into()));
        }
        if d.len() != n || x.nrows() != n || (z.ncols() > 0 && z.nrows() != n) {
            return Err(Error::Input(format!(
                "inconsistent row counts: y={}, d={}, x={}, z={}",
                n,
                d.len(),
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Input("control matrix must have at least one column".into()));
        }
        if let Some(k) = intercept_index {
            if k >= x.ncols() {
                return Err(Error::Input(format!(
                    "intercept index {k} out of range for {} controls",
                    x.ncols()
                )));
            }
        }
        for (name, it) in [("y", y.iter()), ("d", d.iter())] {
            if it.clone().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("{name} contains non-finite values")));
            }
        }
        if x.iter().any(|v| !v.is_finite()) || z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("design matrices contain non-finite values".into()));
        }
        Ok(Self { y, d, x, z, intercept_index })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn p_z(&self) -> usize {
        self.z.ncols()
    }

    /// True when no instruments are present and `d` is treated as exogenous
    /// after controls.
    pub fn is_exogenous(&self) -> bool {
        self.z.ncols() == 0
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn intercept_index(&self) -> Option<usize> {
        self.intercept_index
    }
}

/// Plain nuisance coefficient values `(theta, vartheta, gamma, delta)` on the
/// original control/instrument coordinates, without intercepts.
#[derive(Debug, Clone)]
pub struct NuisanceParameters {
    pub theta: DVector<f64>,
    pub vartheta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub delta: DVector<f64>,
}

/// Selected-set sizes for the pipeline regressions (penalized columns only).
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SelectionCounts {
    /// Controls selected in the `d` on `(x, z)` regression.
    pub first_stage_controls: usize,
    /// Instruments selected in the `d` on `(x, z)` regression.
    pub first_stage_instruments: usize,
    /// Controls selected in the `y` on `x` regression.
    pub outcome_controls: usize,
    /// Controls selected in the projection regression (fitted first stage on
    /// `x`; the `d` on `x` reduced form for the baselines that use it).
    pub projection_controls: usize,
}

/// Estimated nuisances with their intercepts and selection diagnostics.
#[derive(Debug, Clone)]
pub struct NuisanceEstimates {
    pub params: NuisanceParameters,
    pub first_stage_intercept: f64,
    pub outcome_intercept: f64,
    pub projection_intercept: f64,
    pub selection: SelectionCounts,
}

/// Residuals entering the orthogonal moment: `rho_y = y - x'theta`,
/// `rho_d = d - x'vartheta`, `v = x'gamma + z'delta - x'vartheta`.
#[derive(Debug, Clone)]
pub struct ResidualTriple {
    pub rho_y: DVector<f64>,
    pub rho_d: DVector<f64>,
    pub v: DVector<f64>,
}

impl ResidualTriple {
    pub fn new(rho_y: DVector<f64>, rho_d: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        if rho_y.len() != rho_d.len() || rho_y.len() != v.len() {
            return Err(Error::Input(format!(
                "residual lengths differ: {} / {} / {}",
                rho_y.len(),
                rho_d.len(),
                v.len()
            )));
        }
        if rho_y.is_empty() {
            return Err(Error::Input("residual triple is empty".into()));
        }
        Ok(Self { rho_y, rho_d, v })
    }

    pub fn len(&self) -> usize {
        self.rho_y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_y.is_empty()
    }
}

/// Per-observation moment contributions `psi_i = (rho_y_i - rho_d_i * alpha) * v_i`.
pub fn moment_psi(alpha: f64, residuals: &ResidualTriple) -> DVector<f64> {
    DVector::from_fn(residuals.len(), |i, _| {
        (residuals.rho_y[i] - residuals.rho_d[i] * alpha) * residuals.v[i]
    })
}

/// Residual triple at explicit nuisance values (zero intercepts), as used by
/// the infeasible oracle and orthogonality checks.
pub fn residuals_at(data: &IVDataset, eta: &NuisanceParameters) -> Result<ResidualTriple> {
    if eta.theta.len() != data.p_x()
        || eta.vartheta.len() != data.p_x()
        || eta.gamma.len() != data.p_x()
        || eta.delta.len() != data.p_z()
    {
        return Err(Error::Input("nuisance dimensions do not match the dataset".into()));
    }
    let x_theta = &data.x * &eta.theta;
    let x_vartheta = &data.x * &eta.vartheta;
    let x_gamma = &data.x * &eta.gamma;
    let first_stage = if data.p_z() > 0 {
        &x_gamma + &data.z * &eta.delta
    } else {
        x_gamma
    };
    ResidualTriple::new(&data.y - x_theta, &data.d - &x_vartheta, first_stage - x_vartheta)
}

/// Empirical orthogonal moment `n^-1 sum_i psi_i(alpha, eta)`.
pub fn empirical_moment(data: &IVDataset, alpha: f64, eta: &NuisanceParameters) -> Result<f64> {
    let residuals = residuals_at(data, eta)?;
    Ok(moment_psi(alpha, &residuals).mean())
}

/// Empirical non-orthogonal moment used by the second naive baseline:
/// `n^-1 sum_i (rho_y_i - rho_d_i * alpha) * (x_i'gamma + z_i'delta)`.
pub fn naive_moment(data: &IVDataset, alpha: f64, eta: &NuisanceParameters) -> Result<f64> {
    let residuals = residuals_at(data, eta)?;
    // x'gamma + z'delta = v + x'vartheta.
    let w = &residuals.v + &data.x * &eta.vartheta;
    let n = data.n() as f64;
    let mut acc = 0.0;
    for i in 0..data.n() {
        acc += (residuals.rho_y[i] - residuals.rho_d[i] * alpha) * w[i];
    }
    Ok(acc / n)
}

/// Diagnostics attached to an [`AlphaEstimate`].
#[derive(Debug, Clone, Default)]
pub struct EstimateDiagnostics {
    pub selection: Option<SelectionCounts>,
    /// First-stage strength summary `n^-1 sum_i v_i rho_d_i`.
    pub first_stage_strength: f64,
    /// Set when the moment contributions are identically zero (exact fit);
    /// the standard error degenerates to zero.
    pub degenerate_moment: bool,
    /// False when any Lasso step hit its iteration cap.
    pub selector_converged: bool,
    /// Columns dropped as collinear by the 2SLS variant.
    pub dropped_collinear: Vec<usize>,
}

/// Point estimate, robust standard error, and confidence interval for the
/// endogenous coefficient, with a score-statistic evaluator over the stored
/// residual triple.
#[derive(Debug, Clone)]
pub struct AlphaEstimate {
    pub alpha_hat: f64,
    pub std_error: f64,
    /// Plug-in asymptotic variance `V`; `std_error = sqrt(V / n)`.
    pub variance_v: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub confidence_level: f64,
    pub n: usize,
    pub diagnostics: EstimateDiagnostics,
    residuals: Option<ResidualTriple>,
}

impl AlphaEstimate {
    /// Score statistic `C(alpha0)` evaluated on the stored residuals.
    pub fn score_at(&self, alpha0: f64) -> Result<f64> {
        let residuals = self.residuals.as_ref().ok_or_else(|| {
            Error::Degenerate("estimate does not carry a residual triple".into())
        })?;
        score_statistic(alpha0, residuals)
    }

    /// Score-inverted confidence set `{alpha : C(alpha) <= quantile}`.
    pub fn score_confidence_set(&self, level: f64) -> Result<ScoreConfidenceSet> {
        let residuals = self.residuals.as_ref().ok_or_else(|| {
            Error::Degenerate("estimate does not carry a residual triple".into())
        })?;
        score_confidence_set(residuals, level)
    }

    pub fn wald_statistic(&self, alpha0: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.alpha_hat == alpha0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.alpha_hat - alpha0) / self.std_error
        }
    }

    pub fn residuals(&self) -> Option<&ResidualTriple> {
        self.residuals.as_ref()
    }
}

/// Options for [`solve_alpha`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub confidence_level: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { confidence_level: 0.95 }
    }
}

fn root_mean_square(v: &DVector<f64>) -> f64 {
    (v.norm_squared() / v.len() as f64).sqrt()
}

/// IV regression of `rho_y` on `rho_d` with `v` as the instrument: the exact
/// root of the empirical moment, with the sandwich variance plug-in
/// `V = (n^-1 sum v rho_d)^-2 * n^-1 sum psi^2`.
pub fn solve_alpha(residuals: ResidualTriple, options: &SolveOptions) -> Result<AlphaEstimate> {
    if !(options.confidence_level > 0.0 && options.confidence_level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level must lie in (0,1), got {}",
            options.confidence_level
        )));
    }
    let n = residuals.len();
    let nf = n as f64;
    let numerator = residuals.v.dot(&residuals.rho_y) / nf;
    let denominator = residuals.v.dot(&residuals.rho_d) / nf;

    let tolerance = 1e-8 * root_mean_square(&residuals.rho_d) * root_mean_square(&residuals.v);
    if denominator.abs() <= tolerance {
        return Err(Error::WeakIdentification(format!(
            "|n^-1 sum v rho_d| = {:.3e} is below tolerance {:.3e}",
            denominator.abs(),
            tolerance
        )));
    }

    let alpha_hat = numerator / denominator;
    let psi = moment_psi(alpha_hat, &residuals);
    let second_moment = psi.norm_squared() / nf;
    let degenerate = second_moment
        <= 1e-24 * root_mean_square(&residuals.rho_y).powi(2) * root_mean_square(&residuals.v).powi(2);
    // An exact fit leaves only rounding noise in psi; report the edge as a
    // zero standard error with the degenerate flag set.
    let variance_v = if degenerate { 0.0 } else { second_moment / (denominator * denominator) };
    let std_error = (variance_v / nf).sqrt();

    let z = normal_quantile(0.5 + options.confidence_level / 2.0);
    Ok(AlphaEstimate {
        alpha_hat,
        std_error,
        variance_v,
        ci_lower: alpha_hat - z * std_error,
        ci_upper: alpha_hat + z * std_error,
        confidence_level: options.confidence_level,
        n,
        diagnostics: EstimateDiagnostics {
            selection: None,
            first_stage_strength: denominator,
            degenerate_moment: degenerate,
            selector_converged: true,
            dropped_collinear: Vec::new(),
        },
        residuals: Some(residuals),
    })
}

/// Score statistic `C(alpha0) = n M^2 / (n^-1 sum psi_i^2)`, asymptotically
/// chi-squared with one degree of freedom under the null.
pub fn score_statistic(alpha0: f64, residuals: &ResidualTriple) -> Result<f64> {
    let n = residuals.len() as f64;
    let psi = moment_psi(alpha0, residuals);
    let second_moment = psi.norm_squared() / n;
    if second_moment <= 0.0 {
        return Err(Error::Degenerate(
            "all moment contributions are zero; the score statistic is undefined".into(),
        ));
    }
    let mean = psi.mean();
    Ok(n * mean * mean / second_moment)
}

/// Confidence set obtained by inverting the score statistic. `C(alpha) <= q`
/// is a quadratic inequality in `alpha`, so the set is an interval, the
/// complement of an interval, a half line, the whole line, or empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ScoreConfidenceSet {
    Interval { lower: f64, upper: f64 },
    /// `alpha <= lower` or `alpha >= upper`.
    Outside { lower: f64, upper: f64 },
    HalfLineBelow { upper: f64 },
    HalfLineAbove { lower: f64 },
    WholeLine,
    Empty,
}

impl ScoreConfidenceSet {
    pub fn contains(&self, alpha: f64) -> bool {
        match *self {
            Self::Interval { lower, upper } => alpha >= lower && alpha <= upper,
            Self::Outside { lower, upper } => alpha <= lower || alpha >= upper,
            Self::HalfLineBelow { upper } => alpha <= upper,
            Self::HalfLineAbove { lower } => alpha >= lower,
            Self::WholeLine => true,
            Self::Empty => false,
        }
    }
}

/// Inverts `C(alpha) <= chi2_1(level)` analytically.
pub fn score_confidence_set(residuals: &ResidualTriple, level: f64) -> Result<ScoreConfidenceSet> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0,1), got {level}")));
    }
    let n = residuals.len() as f64;
    let q = chi_squared_1_quantile(level);

    let mut c0 = 0.0;
    let mut c1 = 0.0;
    let mut c2 = 0.0;
    let mut m_y = 0.0;
    let mut m_d = 0.0;
    for i in 0..residuals.len() {
        let py = residuals.rho_y[i] * residuals.v[i];
        let pd = residuals.rho_d[i] * residuals.v[i];
        c0 += py * py;
        c1 += py * pd;
        c2 += pd * pd;
        m_y += py;
        m_d += pd;
    }
    c0 /= n;
    c1 /= n;
    c2 /= n;
    m_y /= n;
    m_d /= n;
    if c0 == 0.0 && c2 == 0.0 {
        return Err(Error::Degenerate("score inversion undefined: psi is identically zero".into()));
    }

    // n (m_y - m_d a)^2 <= q (c0 - 2 c1 a + c2 a^2)
    let a = n * m_d * m_d - q * c2;
    let b = n * m_y * m_d - q * c1;
    let c = n * m_y * m_y - q * c0;

    if a == 0.0 {
        return Ok(if b > 0.0 {
            ScoreConfidenceSet::HalfLineAbove { lower: c / (2.0 * b) }
        } else if b < 0.0 {
            ScoreConfidenceSet::HalfLineBelow { upper: c / (2.0 * b) }
        } else if c <= 0.0 {
            ScoreConfidenceSet::WholeLine
        } else {
            ScoreConfidenceSet::Empty
        });
    }

    let disc = b * b - a * c;
    if a > 0.0 {
        if disc < 0.0 {
            return Ok(ScoreConfidenceSet::Empty);
        }
        let root = disc.sqrt();
        Ok(ScoreConfidenceSet::Interval { lower: (b - root) / a, upper: (b + root) / a })
    } else if disc < 0.0 {
        Ok(ScoreConfidenceSet::WholeLine)
    } else {
        let root = disc.sqrt();
        // For a < 0 the parabola opens downward; the inequality holds outside
        // the root interval.
        let r1 = (b + root) / a;
        let r2 = (b - root) / a;
        Ok(ScoreConfidenceSet::Outside { lower: r1.min(r2), upper: r1.max(r2) })
    }
}

/// Options shared by the selection-based estimators.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Penalty slack constant.
    pub penalty_c: f64,
    /// Penalty confidence tuning; `None` uses `0.1 / ln(max(n, p))` per
    /// regression.
    pub penalty_gamma: Option<f64>,
    pub max_loading_iterations: usize,
    pub loading_tolerance: f64,
    pub confidence_level: f64,
    /// Refit OLS on the selected support (default) instead of using the
    /// shrunk Lasso coefficients.
    pub use_post_lasso: bool,
    /// Prepend an unpenalized constant column unless the dataset already
    /// declares one.
    pub add_intercept: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            penalty_c: 1.1,
            penalty_gamma: None,
            max_loading_iterations: 5,
            loading_tolerance: 1e-4,
            confidence_level: 0.95,
            use_post_lasso: true,
            add_intercept: true,
        }
    }
}

impl PipelineConfig {
    fn penalty_rule(&self, n: usize, p: usize) -> PenaltyRule {
        let gamma = self
            .penalty_gamma
            .unwrap_or_else(|| 0.1 / (n.max(p).max(2) as f64).ln());
        PenaltyRule {
            c: self.penalty_c,
            gamma,
            max_loading_iterations: self.max_loading_iterations,
            loading_tolerance: self.loading_tolerance,
        }
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions { confidence_level: self.confidence_level }
    }
}

/// Column layout of an assembled design matrix.
struct Assembled {
    matrix: DMatrix<f64>,
    penalize: Vec<bool>,
    intercept: Option<usize>,
    x_start: usize,
    z_start: usize,
}

impl Assembled {
    fn is_x_column(&self, j: usize) -> bool {
        j >= self.x_start && j < self.z_start && Some(j) != self.intercept
    }

    fn is_z_column(&self, j: usize) -> bool {
        j >= self.z_start
    }
}

fn assemble(data: &IVDataset, include_z: bool, config: &PipelineConfig) -> Assembled {
    let n = data.n();
    let p_x = data.p_x();
    let p_z = if include_z { data.p_z() } else { 0 };
    let synthesize = config.add_intercept && data.intercept_index.is_none();
    let offset = usize::from(synthesize);
    let total = offset + p_x + p_z;

    let mut matrix = DMatrix::<f64>::zeros(n, total);
    if synthesize {
        matrix.column_mut(0).fill(1.0);
    }
    matrix.view_mut((0, offset), (n, p_x)).copy_from(&data.x);
    if p_z > 0 {
        matrix.view_mut((0, offset + p_x), (n, p_z)).copy_from(&data.z);
    }

    let mut penalize = vec![true; total];
    let intercept = if synthesize {
        penalize[0] = false;
        Some(0)
    } else {
        data.intercept_index.map(|k| {
            penalize[offset + k] = false;
            offset + k
        })
    };

    Assembled { matrix, penalize, intercept, x_start: offset, z_start: offset + p_x }
}

/// One selection-plus-refit regression step.
struct StepFit {
    coefficients: DVector<f64>,
    fitted: DVector<f64>,
    selected_x: usize,
    selected_z: usize,
    converged: bool,
}

fn lasso_step(design: &Assembled, response: &DVector<f64>, config: &PipelineConfig) -> Result<StepFit> {
    let problem = RegressionProblem::with_penalize_flags(
        design.matrix.clone(),
        response.clone(),
        design.penalize.clone(),
    )?;
    let rule = config.penalty_rule(problem.n(), problem.p());
    let lasso = fit_lasso(&problem, &rule)?;
    let coefficients = if config.use_post_lasso {
        post_lasso_refit(&problem, &lasso).coefficients
    } else {
        lasso.coefficients.clone()
    };
    let selected_x = lasso.active_set.iter().filter(|&&j| design.is_x_column(j)).count();
    let selected_z = lasso.active_set.iter().filter(|&&j| design.is_z_column(j)).count();
    let fitted = &design.matrix * &coefficients;
    Ok(StepFit { coefficients, fitted, selected_x, selected_z, converged: lasso.converged })
}

fn stepwise_step(
    design: &Assembled,
    response: &DVector<f64>,
    rule: &StepwiseRule,
) -> Result<StepFit> {
    let problem = RegressionProblem::with_penalize_flags(
        design.matrix.clone(),
        response.clone(),
        design.penalize.clone(),
    )?;
    let selection = stepwise_select(&problem, rule)?;
    let mut coefficients = DVector::<f64>::zeros(design.matrix.ncols());
    if !selection.selected.is_empty() {
        let sub = design.matrix.select_columns(selection.selected.iter());
        let fit = least_squares(&sub, response);
        for (k, &j) in selection.selected.iter().enumerate() {
            coefficients[j] = fit.coefficients[k];
        }
    }
    let selected_x =
        selection.selected.iter().filter(|&&j| design.is_x_column(j)).count();
    let selected_z =
        selection.selected.iter().filter(|&&j| design.is_z_column(j)).count();
    let fitted = &design.matrix * &coefficients;
    Ok(StepFit { coefficients, fitted, selected_x, selected_z, converged: true })
}

fn split_first_stage(design: &Assembled, step: &StepFit, p_x: usize, p_z: usize) -> (f64, DVector<f64>, DVector<f64>) {
    let intercept = design.intercept.map_or(0.0, |k| step.coefficients[k]);
    let mut gamma = DVector::<f64>::zeros(p_x);
    for j in 0..p_x {
        let col = design.x_start + j;
        if Some(col) != design.intercept {
            gamma[j] = step.coefficients[col];
        }
    }
    let mut delta = DVector::<f64>::zeros(p_z);
    for j in 0..p_z {
        delta[j] = step.coefficients[design.z_start + j];
    }
    (intercept, gamma, delta)
}

enum Selector<'a> {
    Lasso,
    Stepwise(&'a StepwiseRule),
}

fn run_step(
    design: &Assembled,
    response: &DVector<f64>,
    config: &PipelineConfig,
    selector: &Selector<'_>,
) -> Result<StepFit> {
    match selector {
        Selector::Lasso => lasso_step(design, response, config),
        Selector::Stepwise(rule) => stepwise_step(design, response, rule),
    }
}

fn double_selection_impl(
    data: &IVDataset,
    config: &PipelineConfig,
    selector: Selector<'_>,
) -> Result<(NuisanceEstimates, ResidualTriple, bool)> {
    let first_design = assemble(data, true, config);
    let first = run_step(&first_design, &data.d, config, &selector)?;
    if data.p_z() > 0 && first.selected_z == 0 {
        return Err(Error::WeakIdentification(
            "the first-stage regression selected no instruments".into(),
        ));
    }
    let d_hat = first.fitted.clone();

    let control_design = assemble(data, false, config);
    let outcome = run_step(&control_design, &data.y, config, &selector)?;

    let projection = if data.is_exogenous() {
        None
    } else {
        Some(run_step(&control_design, &d_hat, config, &selector)?)
    };

    let (fs_intercept, gamma, delta) =
        split_first_stage(&first_design, &first, data.p_x(), data.p_z());
    let (outcome_intercept, theta, _) =
        split_first_stage(&control_design, &outcome, data.p_x(), 0);

    let rho_y = &data.y - &outcome.fitted;
    let (rho_d, v, projection_intercept, vartheta, projection_count, converged) = match &projection
    {
        Some(step) => {
            let (pi, vt, _) = split_first_stage(&control_design, step, data.p_x(), 0);
            (
                &data.d - &step.fitted,
                &d_hat - &step.fitted,
                pi,
                vt,
                step.selected_x,
                first.converged && outcome.converged && step.converged,
            )
        }
        None => {
            let rho_d = &data.d - &first.fitted;
            (
                rho_d.clone(),
                rho_d,
                fs_intercept,
                gamma.clone(),
                first.selected_x,
                first.converged && outcome.converged,
            )
        }
    };

    let selection = SelectionCounts {
        first_stage_controls: first.selected_x,
        first_stage_instruments: first.selected_z,
        outcome_controls: outcome.selected_x,
        projection_controls: projection_count,
    };
    let nuisances = NuisanceEstimates {
        params: NuisanceParameters { theta, vartheta, gamma, delta },
        first_stage_intercept: fs_intercept,
        outcome_intercept,
        projection_intercept,
        selection,
    };
    let triple = ResidualTriple::new(rho_y, rho_d, v)?;
    Ok((nuisances, triple, converged))
}

fn finish_estimate(
    nuisances: &NuisanceEstimates,
    triple: ResidualTriple,
    converged: bool,
    config: &PipelineConfig,
) -> Result<AlphaEstimate> {
    let mut estimate = solve_alpha(triple, &config.solve_options())?;
    estimate.diagnostics.selection = Some(nuisances.selection);
    estimate.diagnostics.selector_converged = converged;
    Ok(estimate)
}

/// The double-selection orthogonal-moment estimator: Post-Lasso first stage,
/// outcome, and projection regressions followed by the IV regression of the
/// outcome residual on the `d` residual with the partialled-out first stage
/// as instrument. With `p_z = 0` the instrument collapses onto the `d`
/// residual and the estimator reduces to partialling-out.
pub fn estimate_double_selection(data: &IVDataset, config: &PipelineConfig) -> Result<AlphaEstimate> {
    let (nuisances, triple, converged) = double_selection_impl(data, config, Selector::Lasso)?;
    finish_estimate(&nuisances, triple, converged, config)
}

/// Nuisance estimates from the double-selection pipeline, exposed for
/// diagnostics and reporting.
pub fn double_selection_nuisances(data: &IVDataset, config: &PipelineConfig) -> Result<NuisanceEstimates> {
    let (nuisances, _, _) = double_selection_impl(data, config, Selector::Lasso)?;
    Ok(nuisances)
}

/// First naive baseline: the same pipeline with every Lasso step replaced by
/// forward-backward stepwise selection plus an OLS refit.
pub fn estimate_naive_stepwise(
    data: &IVDataset,
    rule: &StepwiseRule,
    config: &PipelineConfig,
) -> Result<AlphaEstimate> {
    let (nuisances, triple, converged) =
        double_selection_impl(data, config, Selector::Stepwise(rule))?;
    finish_estimate(&nuisances, triple, converged, config)
}

/// Second naive baseline: nuisances estimated by Post-Lasso, but the moment
/// uses the raw fitted first stage `x'gamma + z'delta` as instrument without
/// partialling the controls out, and the `d` residual comes from the direct
/// `d` on `x` reduced form.
pub fn estimate_naive_nonorthogonal(data: &IVDataset, config: &PipelineConfig) -> Result<AlphaEstimate> {
    if data.p_z() == 0 {
        return Err(Error::Input(
            "the non-orthogonal baseline requires at least one instrument".into(),
        ));
    }
    let first_design = assemble(data, true, config);
    let first = lasso_step(&first_design, &data.d, config)?;
    if first.selected_z == 0 {
        return Err(Error::WeakIdentification(
            "the first-stage regression selected no instruments".into(),
        ));
    }

    let control_design = assemble(data, false, config);
    let outcome = lasso_step(&control_design, &data.y, config)?;
    let reduced_form = lasso_step(&control_design, &data.d, config)?;

    // Instrument without the fitted intercept: x'gamma + z'delta.
    let intercept = first_design.intercept.map_or(0.0, |k| first.coefficients[k]);
    let w = first.fitted.map(|f| f - intercept);

    let rho_y = &data.y - &outcome.fitted;
    let rho_d = &data.d - &reduced_form.fitted;

    let triple = ResidualTriple::new(rho_y, rho_d, w)?;
    let mut estimate = solve_alpha(triple, &config.solve_options())?;
    estimate.diagnostics.selection = Some(SelectionCounts {
        first_stage_controls: first.selected_x,
        first_stage_instruments: first.selected_z,
        outcome_controls: outcome.selected_x,
        projection_controls: reduced_form.selected_x,
    });
    estimate.diagnostics.selector_converged =
        first.converged && outcome.converged && reduced_form.converged;
    Ok(estimate)
}

/// Union-of-controls 2SLS: Lasso selections from `d ~ (x, z)`, `d ~ x`, and
/// `y ~ x` are pooled into one control set, and `y` is regressed on `d` and
/// the pooled controls by 2SLS with the first-stage selected instruments.
pub fn estimate_union_2sls(data: &IVDataset, config: &PipelineConfig) -> Result<AlphaEstimate> {
    if data.p_z() == 0 {
        return Err(Error::Input("union 2SLS requires at least one instrument".into()));
    }
    let first_design = assemble(data, true, config);
    let first_problem = RegressionProblem::with_penalize_flags(
        first_design.matrix.clone(),
        data.d.clone(),
        first_design.penalize.clone(),
    )?;
    let rule1 = config.penalty_rule(first_problem.n(), first_problem.p());
    let first = fit_lasso(&first_problem, &rule1)?;

    let control_design = assemble(data, false, config);
    let control_problem = |response: &DVector<f64>| {
        RegressionProblem::with_penalize_flags(
            control_design.matrix.clone(),
            response.clone(),
            control_design.penalize.clone(),
        )
    };
    let rule2 = config.penalty_rule(data.n(), control_design.matrix.ncols());
    let d_on_x = fit_lasso(&control_problem(&data.d)?, &rule2)?;
    let y_on_x = fit_lasso(&control_problem(&data.y)?, &rule2)?;

    // Union of selected controls, as indices into the dataset's X block.
    let mut union: Vec<usize> = Vec::new();
    for &j in &first.active_set {
        if first_design.is_x_column(j) {
            union.push(j - first_design.x_start);
        }
    }
    for fit in [&d_on_x, &y_on_x] {
        for &j in &fit.active_set {
            if control_design.is_x_column(j) {
                union.push(j - control_design.x_start);
            }
        }
    }
    union.sort_unstable();
    union.dedup();

    let instruments: Vec<usize> = first
        .active_set
        .iter()
        .filter(|&&j| first_design.is_z_column(j))
        .map(|&j| j - first_design.z_start)
        .collect();
    if instruments.is_empty() {
        return Err(Error::WeakIdentification(
            "the first-stage regression selected no instruments".into(),
        ));
    }

    let n = data.n();
    let k_controls = union.len();
    // Regressors [1 | X_union | d], instruments [1 | X_union | Z_selected].
    let mut regressors = DMatrix::<f64>::zeros(n, 1 + k_controls + 1);
    let mut instrument_matrix = DMatrix::<f64>::zeros(n, 1 + k_controls + instruments.len());
    regressors.column_mut(0).fill(1.0);
    instrument_matrix.column_mut(0).fill(1.0);
    for (k, &j) in union.iter().enumerate() {
        regressors.set_column(1 + k, &data.x.column(j));
        instrument_matrix.set_column(1 + k, &data.x.column(j));
    }
    regressors.set_column(1 + k_controls, &data.d);
    for (k, &j) in instruments.iter().enumerate() {
        instrument_matrix.set_column(1 + k_controls + k, &data.z.column(j));
    }

    let target = 1 + k_controls;
    let tsls = two_stage_least_squares(&data.y, &regressors, &instrument_matrix, target)?;

    let alpha_hat = tsls.coefficients[target];
    let std_error = tsls.robust_covariance[(target, target)].max(0.0).sqrt();
    let z = normal_quantile(0.5 + config.confidence_level / 2.0);
    let selection = SelectionCounts {
        first_stage_controls: first
            .active_set
            .iter()
            .filter(|&&j| first_design.is_x_column(j))
            .count(),
        first_stage_instruments: instruments.len(),
        outcome_controls: y_on_x
            .active_set
            .iter()
            .filter(|&&j| control_design.is_x_column(j))
            .count(),
        projection_controls: d_on_x
            .active_set
            .iter()
            .filter(|&&j| control_design.is_x_column(j))
            .count(),
    };
    Ok(AlphaEstimate {
        alpha_hat,
        std_error,
        variance_v: std_error * std_error * n as f64,
        ci_lower: alpha_hat - z * std_error,
        ci_upper: alpha_hat + z * std_error,
        confidence_level: config.confidence_level,
        n,
        diagnostics: EstimateDiagnostics {
            selection: Some(selection),
            first_stage_strength: f64::NAN,
            degenerate_moment: false,
            selector_converged: first.converged && d_on_x.converged && y_on_x.converged,
            dropped_collinear: tsls.dropped_columns,
        },
        residuals: None,
    })
}

/// 2SLS fit with heteroscedasticity-robust covariance.
#[derive(Debug, Clone)]
pub struct TslsFit {
    pub coefficients: DVector<f64>,
    pub robust_covariance: DMatrix<f64>,
    /// Regressor columns dropped as collinear (the protected column is never
    /// dropped); indices refer to the regressor matrix as passed in.
    pub dropped_columns: Vec<usize>,
}

/// Two-stage least squares of `y` on `regressors` using `instruments`, with
/// the HC0 sandwich covariance. `protected` names a regressor column that
/// must never be dropped by the collinearity filter (the endogenous column).
pub fn two_stage_least_squares(
    y: &DVector<f64>,
    regressors: &DMatrix<f64>,
    instruments: &DMatrix<f64>,
    protected: usize,
) -> Result<TslsFit> {
    let n = y.len();
    if regressors.nrows() != n || instruments.nrows() != n {
        return Err(Error::Input("2SLS inputs have inconsistent row counts".into()));
    }
    if instruments.ncols() < regressors.ncols() {
        return Err(Error::Input(format!(
            "under-identified: {} instruments for {} regressors",
            instruments.ncols(),
            regressors.ncols()
        )));
    }

    // Drop collinear regressor columns (never the protected one), then
    // collinear instrument columns.
    let keep_regressors = independent_columns(regressors, Some(protected));
    let dropped_columns: Vec<usize> =
        (0..regressors.ncols()).filter(|j| !keep_regressors.contains(j)).collect();
    let d = regressors.select_columns(keep_regressors.iter());
    let keep_instruments = independent_columns(instruments, None);
    let w = instruments.select_columns(keep_instruments.iter());
    if w.ncols() < d.ncols() {
        return Err(Error::Input(
            "under-identified after dropping collinear columns".into(),
        ));
    }

    let wtw_inv = pseudo_inverse(&(w.transpose() * &w));
    let wtd = w.transpose() * &d;
    let projected = &w * (&wtw_inv * &wtd); // P_W D
    let cross = projected.transpose() * &d; // D' P_W D
    let cross_inv = pseudo_inverse(&cross);
    let beta_kept = &cross_inv * (projected.transpose() * y);

    let residuals = y - &d * &beta_kept;
    let k = d.ncols();
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for i in 0..n {
        let e2 = residuals[i] * residuals[i];
        let row = projected.row(i);
        for a in 0..k {
            let ra = row[a] * e2;
            for b in a..k {
                meat[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let cov_kept = &cross_inv * meat * &cross_inv;

    // Scatter back to the original regressor indexing.
    let p = regressors.ncols();
    let mut coefficients = DVector::<f64>::zeros(p);
    let mut robust_covariance = DMatrix::<f64>::zeros(p, p);
    for (a, &ja) in keep_regressors.iter().enumerate() {
        coefficients[ja] = beta_kept[a];
        for (b, &jb) in keep_regressors.iter().enumerate() {
            robust_covariance[(ja, jb)] = cov_kept[(a, b)];
        }
    }
    Ok(TslsFit { coefficients, robust_covariance, dropped_columns })
}

/// Greedy Gram-Schmidt filter returning a maximal set of numerically
/// independent columns. `protected` is processed first so it survives.
fn independent_columns(m: &DMatrix<f64>, protected: Option<usize>) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::with_capacity(m.ncols());
    if let Some(p) = protected {
        order.push(p);
    }
    for j in 0..m.ncols() {
        if Some(j) != protected {
            order.push(j);
        }
    }

    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for &j in &order {
        let mut col = DVector::from_column_slice(m.column(j).as_slice());
        let norm0 = col.norm();
        if norm0 == 0.0 {
            continue;
        }
        for q in &basis {
            let proj = q.dot(&col);
            col.axpy(-proj, q, 1.0);
        }
        if col.norm() > 1e-10 * norm0 {
            col /= col.norm();
            basis.push(col);
            kept.push(j);
        }
    }
    kept.sort_unstable();
    kept
}
