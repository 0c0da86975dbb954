//! Forward-backward stepwise regression with p-value entry and removal
//! thresholds, implemented on the sweep operator so candidate scans cost
//! O(p) per step.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::problem::RegressionProblem;

/// Entry/removal rule for stepwise selection. Entry must be stricter than
/// removal. `max_steps = None` defaults to `2 * p` at run time.
#[derive(Debug, Clone)]
pub struct StepwiseRule {
    pub p_enter: f64,
    pub p_remove: f64,
    pub max_steps: Option<usize>,
}

impl StepwiseRule {
    pub fn new(p_enter: f64, p_remove: f64) -> Result<Self> {
        if !(p_enter > 0.0 && p_enter < 1.0) && p_enter != 0.0 {
            return Err(Error::Config(format!("p_enter must lie in [0, 1), got {p_enter}")));
        }
        if !(p_remove > 0.0 && p_remove < 1.0) {
            return Err(Error::Config(format!("p_remove must lie in (0, 1), got {p_remove}")));
        }
        if p_enter >= p_remove {
            return Err(Error::Config(format!(
                "entry threshold ({p_enter}) must be stricter than removal ({p_remove})"
            )));
        }
        Ok(Self { p_enter, p_remove, max_steps: None })
    }

    fn effective_max_steps(&self, p: usize) -> usize {
        self.max_steps.unwrap_or(2 * p)
    }
}

impl Default for StepwiseRule {
    /// Entry at .05, removal at .10.
    fn default() -> Self {
        Self { p_enter: 0.05, p_remove: 0.10, max_steps: None }
    }
}

/// One add or remove action taken by the stepwise loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepAction {
    Add(usize),
    Remove(usize),
}

/// Outcome of a stepwise run. `selected` includes the always-included
/// unpenalized columns.
#[derive(Debug, Clone)]
pub struct StepwiseSelection {
    pub selected: Vec<usize>,
    pub skipped_collinear: Vec<usize>,
    pub steps_taken: usize,
    pub history: Vec<StepAction>,
}

pub fn stepwise_select(problem: &RegressionProblem, rule: &StepwiseRule) -> Result<StepwiseSelection> {
    let x = problem.design();
    let y = problem.response();
    let p = problem.p();
    let dim = p + 1;

    // Augmented Gram [X y]' [X y], row-major.
    let mut gram = vec![0.0f64; dim * dim];
    let xtx = x.transpose() * x;
    for a in 0..p {
        for b in 0..p {
            gram[a * dim + b] = xtx[(a, b)];
        }
    }
    let xty = x.transpose() * y;
    for a in 0..p {
        gram[a * dim + p] = xty[a];
        gram[p * dim + a] = xty[a];
    }
    gram[p * dim + p] = y.norm_squared();

    stepwise_on_gram(gram, dim, problem.n(), problem.penalize_flags(), rule)
}

/// Core engine over a prebuilt augmented Gram matrix (response in the last
/// row/column). Used directly by pipeline code that shares Gram blocks
/// across regressions.
pub(crate) fn stepwise_on_gram(
    mut gram: Vec<f64>,
    dim: usize,
    n: usize,
    penalize: &[bool],
    rule: &StepwiseRule,
) -> Result<StepwiseSelection> {
    let p = dim - 1;
    assert_eq!(penalize.len(), p);
    let y_idx = p;
    let orig_diag: Vec<f64> = (0..dim).map(|k| gram[k * dim + k]).collect();
    let rss_floor = 1e-12 * orig_diag[y_idx].max(f64::MIN_POSITIVE);

    let mut swept = vec![false; p];
    let mut skipped: Vec<usize> = Vec::new();
    let mut history: Vec<StepAction> = Vec::new();
    let mut steps = 0usize;
    let max_steps = rule.effective_max_steps(p);

    // Unpenalized columns are always included and never removable.
    for j in 0..p {
        if !penalize[j] {
            if !sweep_in(&mut gram, dim, j, &orig_diag) {
                skipped.push(j);
            } else {
                swept[j] = true;
            }
        }
    }

    loop {
        let mut changed = false;
        let k_in = swept.iter().filter(|&&s| s).count();
        let rss = gram[y_idx * dim + y_idx];

        // Forward: candidate with the smallest entry p-value.
        if steps < max_steps && rss > rss_floor && n > k_in + 1 {
            let df_new = (n - k_in - 1) as f64;
            let mut best: Option<(f64, usize)> = None;
            for j in 0..p {
                if swept[j] || !penalize[j] {
                    continue;
                }
                let diag = gram[j * dim + j];
                if !(diag > collinear_floor(&orig_diag, j)) {
                    if !skipped.contains(&j) {
                        skipped.push(j);
                    }
                    continue;
                }
                let cross = gram[j * dim + y_idx];
                let gain = cross * cross / diag;
                if !(gain > 0.0) {
                    continue;
                }
                let rss_new = rss - gain;
                let pv = if rss_new <= rss_floor {
                    0.0
                } else {
                    let t = (gain / (rss_new / df_new)).sqrt();
                    two_sided_p(t, df_new)
                };
                let better = match best {
                    None => true,
                    Some((bp, bj)) => pv < bp || (pv == bp && j < bj),
                };
                if better {
                    best = Some((pv, j));
                }
            }
            if let Some((pv, j)) = best {
                if pv < rule.p_enter && sweep_in(&mut gram, dim, j, &orig_diag) {
                    swept[j] = true;
                    history.push(StepAction::Add(j));
                    steps += 1;
                    changed = true;
                }
            }
        }

        // Backward: repeatedly remove the worst violator above p_remove.
        loop {
            if steps >= max_steps {
                break;
            }
            let k_in = swept.iter().filter(|&&s| s).count();
            if n <= k_in {
                break;
            }
            let df = (n - k_in) as f64;
            let rss = gram[y_idx * dim + y_idx];
            if rss <= rss_floor {
                break;
            }
            let sigma2 = rss / df;
            let mut worst: Option<(f64, usize)> = None;
            for j in 0..p {
                if !swept[j] || !penalize[j] {
                    continue;
                }
                let var = -gram[j * dim + j];
                if var <= 0.0 {
                    continue;
                }
                let b = gram[j * dim + y_idx];
                let t = b.abs() / (sigma2 * var).sqrt();
                let pv = two_sided_p(t, df);
                let worse = match worst {
                    None => pv > rule.p_remove,
                    Some((wp, wj)) => pv > wp || (pv == wp && j < wj),
                };
                if worse && pv > rule.p_remove {
                    worst = Some((pv, j));
                }
            }
            match worst {
                Some((_, j)) => {
                    sweep_out(&mut gram, dim, j);
                    swept[j] = false;
                    history.push(StepAction::Remove(j));
                    steps += 1;
                    changed = true;
                }
                None => break,
            }
        }

        if !changed || steps >= max_steps {
            break;
        }
    }

    skipped.sort_unstable();
    skipped.dedup();
    let selected: Vec<usize> = (0..p).filter(|&j| swept[j]).collect();
    Ok(StepwiseSelection { selected, skipped_collinear: skipped, steps_taken: steps, history })
}

fn collinear_floor(orig_diag: &[f64], j: usize) -> f64 {
    1e-10 * orig_diag[j].max(f64::MIN_POSITIVE)
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    2.0 * (1.0 - dist.cdf(t.abs()))
}

/// Sweeps pivot `k` into the model. Returns false (and leaves the matrix
/// untouched) when the pivot is numerically collinear with the swept set.
fn sweep_in(gram: &mut [f64], dim: usize, k: usize, orig_diag: &[f64]) -> bool {
    let d = gram[k * dim + k];
    if !(d > collinear_floor(orig_diag, k)) {
        return false;
    }
    sweep(gram, dim, k, d, false);
    true
}

fn sweep_out(gram: &mut [f64], dim: usize, k: usize) {
    let d = gram[k * dim + k];
    sweep(gram, dim, k, d, true);
}

fn sweep(gram: &mut [f64], dim: usize, k: usize, d: f64, reverse: bool) {
    let row_k: Vec<f64> = (0..dim).map(|c| gram[k * dim + c]).collect();
    for i in 0..dim {
        if i == k {
            continue;
        }
        let factor = gram[i * dim + k] / d;
        if factor == 0.0 {
            continue;
        }
        let row_i = &mut gram[i * dim..(i + 1) * dim];
        for c in 0..dim {
            if c != k {
                row_i[c] -= factor * row_k[c];
            }
        }
    }
    let scale = if reverse { -1.0 / d } else { 1.0 / d };
    for c in 0..dim {
        if c != k {
            gram[k * dim + c] = row_k[c] * scale;
        }
    }
    for i in 0..dim {
        if i != k {
            gram[i * dim + k] = gram[k * dim + i];
        }
    }
    gram[k * dim + k] = -1.0 / d;
}
