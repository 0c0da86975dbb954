//! Ordinary least squares with heteroscedasticity-robust covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::RegressionProblem;

/// Relative singular-value cutoff for rank decisions.
const RANK_TOLERANCE: f64 = 1e-10;

/// Minimum-norm least-squares solution via SVD.
pub(crate) struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub full_rank: bool,
}

pub(crate) fn least_squares(design: &DMatrix<f64>, response: &DVector<f64>) -> LeastSquares {
    let p = design.ncols();
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let cutoff = RANK_TOLERANCE * max_sv.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let coefficients = svd
        .solve(response, cutoff)
        .unwrap_or_else(|_| DVector::zeros(p));
    LeastSquares { coefficients, full_rank: rank == p.min(design.nrows()) && p <= design.nrows() }
}

/// Moore-Penrose pseudo-inverse with the crate's rank tolerance.
pub(crate) fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    svd.pseudo_inverse(RANK_TOLERANCE * max_sv.max(f64::MIN_POSITIVE))
        .expect("svd computed with u and v_t")
}

/// OLS fit with residuals and the heteroscedasticity-consistent sandwich
/// covariance `(X'X)^-1 (sum_i x_i x_i' e_i^2) (X'X)^-1`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    pub robust_covariance: DMatrix<f64>,
    /// False when the design was column-rank deficient and the minimum-norm
    /// solution was used.
    pub rank_flag: bool,
}

impl OlsFit {
    pub fn robust_se(&self, j: usize) -> f64 {
        self.robust_covariance[(j, j)].max(0.0).sqrt()
    }
}

pub fn fit_ols(problem: &RegressionProblem) -> Result<OlsFit> {
    let x = problem.design();
    let y = problem.response();
    if x.nrows() == 0 {
        return Err(Error::Input("cannot fit OLS on zero rows".into()));
    }

    let solution = least_squares(x, y);
    let residuals = y - x * &solution.coefficients;

    let gram_inv = pseudo_inverse(&(x.transpose() * x));
    let p = x.ncols();
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for i in 0..x.nrows() {
        let e2 = residuals[i] * residuals[i];
        let row = x.row(i);
        // meat += e_i^2 * x_i x_i'
        for a in 0..p {
            let ra = row[a] * e2;
            for b in a..p {
                meat[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let robust_covariance = &gram_inv * meat * &gram_inv;

    Ok(OlsFit {
        coefficients: solution.coefficients,
        residuals,
        robust_covariance,
        rank_flag: solution.full_rank,
    })
}
