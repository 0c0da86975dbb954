//! Generic regression problem container used by the Lasso solver and the
//! classical baselines.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A least-squares problem with per-column penalization flags.
///
/// Columns flagged `false` in `penalize` (typically the intercept) are fit
/// without shrinkage by every selector that consumes the problem.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    response: DVector<f64>,
    design: DMatrix<f64>,
    penalize: Vec<bool>,
}

impl RegressionProblem {
    /// Builds a problem in which every column is penalized.
    pub fn new(design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        let p = design.ncols();
        Self::with_penalize_flags(design, response, vec![true; p])
    }

    /// Builds a problem with explicit penalization flags (`false` = never
    /// shrunk, e.g. an intercept column).
    pub fn with_penalize_flags(
        design: DMatrix<f64>,
        response: DVector<f64>,
        penalize: Vec<bool>,
    ) -> Result<Self> {
        if design.ncols() == 0 {
            return Err(Error::Input("design must have at least one column".into()));
        }
        if design.nrows() == 0 {
            return Err(Error::Input("design must have at least one row".into()));
        }
        if response.len() != design.nrows() {
            return Err(Error::Input(format!(
                "response length ({}) does not match design row count ({})",
                response.len(),
                design.nrows()
            )));
        }
        if penalize.len() != design.ncols() {
            return Err(Error::Input(format!(
                "penalize flag count ({}) does not match design column count ({})",
                penalize.len(),
                design.ncols()
            )));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("design contains non-finite entries".into()));
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("response contains non-finite entries".into()));
        }
        Ok(Self { response, design, penalize })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn penalize_flags(&self) -> &[bool] {
        &self.penalize
    }

    /// Indices of columns that are never penalized.
    pub fn unpenalized_columns(&self) -> Vec<usize> {
        self.penalize
            .iter()
            .enumerate()
            .filter_map(|(j, &flag)| (!flag).then_some(j))
            .collect()
    }
}
