//! Thin wrappers around the reference distributions used for critical values.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Chi-squared quantile with one degree of freedom.
pub fn chi_squared_1_quantile(p: f64) -> f64 {
    ChiSquared::new(1.0).expect("chi squared 1 df").inverse_cdf(p)
}
