//! Shared test oracles, independent of the library's solution paths.

use nalgebra::{DMatrix, DVector};

/// Exact Lasso minimizer by sign-pattern enumeration. For each sign pattern
/// over the penalized coordinates, the stationarity system
/// `X_A' X_A b = X_A' y - (lambda/2) (loading . sign)_A` is solved and the
/// objective `(1/n)||y - X b||^2 + (lambda/n) sum loading_j |b_j|` evaluated;
/// the best candidate is the global minimizer of the convex objective.
/// Unpenalized coordinates are always active with no penalty term.
pub fn lasso_enumeration_oracle(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    loadings: &[f64],
    penalize: &[bool],
) -> Vec<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let penalized: Vec<usize> = (0..p).filter(|&j| penalize[j]).collect();
    let unpenalized: Vec<usize> = (0..p).filter(|&j| !penalize[j]).collect();
    assert!(penalized.len() <= 6, "enumeration oracle limited to small problems");

    let mut best_objective = f64::INFINITY;
    let mut best = vec![0.0; p];
    let patterns = 3usize.pow(penalized.len() as u32);
    for code in 0..patterns {
        let mut signs = vec![0i32; penalized.len()];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i32 - 1;
            c /= 3;
        }

        let mut active: Vec<usize> = unpenalized.clone();
        let mut active_signs: Vec<f64> = vec![0.0; unpenalized.len()];
        for (k, &j) in penalized.iter().enumerate() {
            if signs[k] != 0 {
                active.push(j);
                active_signs.push(signs[k] as f64);
            }
        }

        let mut candidate = vec![0.0; p];
        if !active.is_empty() {
            let xa = x.select_columns(active.iter());
            let gram = xa.transpose() * &xa;
            let mut rhs = xa.transpose() * y;
            for (k, &j) in active.iter().enumerate() {
                rhs[k] -= 0.5 * lambda * loadings[j] * active_signs[k];
            }
            let Some(solution) = gram.lu().solve(&rhs) else {
                continue;
            };
            for (k, &j) in active.iter().enumerate() {
                candidate[j] = solution[k];
            }
        }

        let residual = y - x * DVector::from_column_slice(&candidate);
        let mut objective = residual.norm_squared() / n;
        for j in 0..p {
            if penalize[j] {
                objective += lambda / n * loadings[j] * candidate[j].abs();
            }
        }
        if objective < best_objective {
            best_objective = objective;
            best = candidate;
        }
    }
    best
}

/// Collects pass/fail checks for one acceptance criterion and prints one
/// line per check.
pub struct Gate {
    criterion: &'static str,
    failures: Vec<String>,
}

impl Gate {
    pub fn new(criterion: &'static str) -> Self {
        Self { criterion, failures: Vec::new() }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: String) {
        let status = if passed { "PASS" } else { "FAIL" };
        println!("ACCEPTANCE {} | {name}: {status} ({detail})", self.criterion);
        if !passed {
            self.failures.push(format!("{name}: {detail}"));
        }
    }

    pub fn finish(self) {
        assert!(
            self.failures.is_empty(),
            "acceptance criterion {} failed: {:?}",
            self.criterion,
            self.failures
        );
    }
}
