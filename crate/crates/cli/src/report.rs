//! Report structures and rendering. The machine-readable form carries full
//! precision; tables round to three decimals.

use hdiv::monte_carlo::{EstimatorId, SimulationSummary};
use hdiv::{AlphaEstimate, ScoreConfidenceSet, SelectionCounts};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

/// Published reference values for the four-estimator comparison table
/// (Bias, MAD, Size).
pub const PUBLISHED_REFERENCE: [(EstimatorId, [f64; 3]); 4] = [
    (EstimatorId::Oracle, [0.006, 0.095, 0.043]),
    (EstimatorId::NaiveStepwise, [0.160, 0.227, 0.302]),
    (EstimatorId::NaiveNonorthogonal, [0.035, 0.103, 0.095]),
    (EstimatorId::DoubleSelection, [0.021, 0.099, 0.054]),
];

#[derive(Debug, Clone, Serialize)]
pub struct MethodReport {
    pub method: String,
    pub alpha_hat: Option<f64>,
    pub std_error: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub score_set: Option<ScoreConfidenceSet>,
    pub selection: Option<SelectionCounts>,
    pub n: Option<usize>,
    /// False when a selection step hit its iteration cap.
    pub converged: bool,
    pub error: Option<String>,
}

impl MethodReport {
    pub fn from_estimate(method: &str, estimate: &AlphaEstimate, level: f64) -> Self {
        Self {
            method: method.to_string(),
            alpha_hat: Some(estimate.alpha_hat),
            std_error: Some(estimate.std_error),
            ci_lower: Some(estimate.ci_lower),
            ci_upper: Some(estimate.ci_upper),
            score_set: estimate.score_confidence_set(level).ok(),
            selection: estimate.diagnostics.selection,
            n: Some(estimate.n),
            converged: estimate.diagnostics.selector_converged,
            error: None,
        }
    }

    pub fn from_error(method: &str, error: &hdiv::Error) -> Self {
        Self {
            method: method.to_string(),
            alpha_hat: None,
            std_error: None,
            ci_lower: None,
            ci_upper: None,
            score_set: None,
            selection: None,
            n: None,
            converged: true,
            error: Some(error.to_string()),
        }
    }
}

/// Report for the `fit` command.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    pub version: String,
    pub input: String,
    pub confidence_level: f64,
    pub methods: Vec<MethodReport>,
    pub timing_seconds: f64,
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map_or("-".to_string(), |v| format!("{v:.3}"))
}

fn fmt_score_set(set: &Option<ScoreConfidenceSet>) -> String {
    match set {
        None => "-".to_string(),
        Some(ScoreConfidenceSet::Interval { lower, upper }) => {
            format!("[{lower:.3}, {upper:.3}]")
        }
        Some(ScoreConfidenceSet::Outside { lower, upper }) => {
            format!("(-inf, {lower:.3}] U [{upper:.3}, inf)")
        }
        Some(ScoreConfidenceSet::HalfLineBelow { upper }) => format!("(-inf, {upper:.3}]"),
        Some(ScoreConfidenceSet::HalfLineAbove { lower }) => format!("[{lower:.3}, inf)"),
        Some(ScoreConfidenceSet::WholeLine) => "(-inf, inf)".to_string(),
        Some(ScoreConfidenceSet::Empty) => "empty".to_string(),
    }
}

impl RunReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>10} {:>10} {:>22} {:>28}\n",
            "method", "estimate", "std.err", "wald ci", "score ci"
        ));
        for m in &self.methods {
            if let Some(err) = &m.error {
                out.push_str(&format!("{:<22} failed: {err}\n", m.method));
                continue;
            }
            let ci = match (m.ci_lower, m.ci_upper) {
                (Some(l), Some(u)) => format!("[{l:.3}, {u:.3}]"),
                _ => "-".to_string(),
            };
            out.push_str(&format!(
                "{:<22} {:>10} {:>10} {:>22} {:>28}\n",
                m.method,
                fmt_opt(m.alpha_hat),
                fmt_opt(m.std_error),
                ci,
                fmt_score_set(&m.score_set)
            ));
        }
        for m in &self.methods {
            if let Some(sel) = &m.selection {
                out.push_str(&format!(
                    "{:<22} selected: {} first-stage controls, {} instruments, {} outcome controls, {} projection controls\n",
                    m.method,
                    sel.first_stage_controls,
                    sel.first_stage_instruments,
                    sel.outcome_controls,
                    sel.projection_controls
                ));
            }
        }
        out
    }

    /// CSV rendering of the per-method estimates.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("method,alpha_hat,std_error,ci_lower,ci_upper,error\n");
        for m in &self.methods {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.method,
                m.alpha_hat.map_or(String::new(), |v| v.to_string()),
                m.std_error.map_or(String::new(), |v| v.to_string()),
                m.ci_lower.map_or(String::new(), |v| v.to_string()),
                m.ci_upper.map_or(String::new(), |v| v.to_string()),
                m.error.clone().unwrap_or_default()
            ));
        }
        out
    }
}

/// Renders the simulation summary in the four-column comparison style.
pub fn render_simulation_table(summary: &SimulationSummary, published: bool) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<18} {:>8} {:>8} {:>8} {:>12} {:>9}\n",
        "estimator", "Bias", "MAD", "Size", "Score-Size", "failures"
    ));
    for e in &summary.estimators {
        out.push_str(&format!(
            "{:<18} {:>8.3} {:>8.3} {:>8.3} {:>12} {:>9}\n",
            e.estimator.label(),
            e.bias,
            e.mad,
            e.size,
            e.score_size.map_or("-".to_string(), |s| format!("{s:.3}")),
            e.failures
        ));
        if !e.valid {
            out.push_str(&format!(
                "{:<18} WARNING: more than 20% of replications failed; summary invalid\n",
                ""
            ));
        }
        if published {
            if let Some((_, reference)) =
                PUBLISHED_REFERENCE.iter().find(|(id, _)| *id == e.estimator)
            {
                out.push_str(&format!(
                    "{:<18} {:>8.3} {:>8.3} {:>8.3}   (published)\n",
                    "", reference[0], reference[1], reference[2]
                ));
            }
        }
    }
    out.push_str(&format!(
        "replications: {}, seed: {}, n: {}, p_x: {}, p_z: {}, elapsed: {:.1}s\n",
        summary.config.replications,
        summary.config.seed,
        summary.config.n,
        summary.config.p_x,
        summary.config.p_z,
        summary.elapsed_seconds
    ));
    out
}

/// CSV rendering of the simulation summary.
pub fn render_simulation_csv(summary: &SimulationSummary) -> String {
    let mut out = String::from("estimator,bias,mad,size,score_size,successes,failures\n");
    for e in &summary.estimators {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.estimator.id(),
            e.bias,
            e.mad,
            e.size,
            e.score_size.map_or(String::new(), |s| s.to_string()),
            e.successes,
            e.failures
        ));
    }
    out
}
