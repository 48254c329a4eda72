//! Distribution of the maximum of `j` i.i.d. noise draws.

use super::SolverError;
use crate::mechanisms::NoiseSpec;

/// `P(max of j fresh draws >= t) = 1 - P(X < t)^j`.
///
/// For continuous specs `P(X < t) = F(t)`; for discrete ones the atom at `t`
/// counts as an exceedance.
pub fn max_exceed_prob(spec: &NoiseSpec, j: usize, t: f64) -> Result<f64, SolverError> {
    if j == 0 {
        return Err(SolverError::InvalidArgument("j must be positive".into()));
    }
    let tail = spec.sf_inclusive(t);
    if tail >= 1.0 {
        return Ok(1.0);
    }
    Ok(-(j as f64 * (-tail).ln_1p()).exp_m1())
}

/// Quantile `F^{-1}(p^{1/j})` of the maximum of `j` draws.
pub fn max_order_quantile(spec: &NoiseSpec, j: usize, p: f64) -> Result<f64, SolverError> {
    if j == 0 {
        return Err(SolverError::InvalidArgument("j must be positive".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(SolverError::InvalidArgument(format!("p must lie in (0,1), got {p}")));
    }
    let log_u = p.ln() / j as f64;
    Ok(spec.quantile(log_u.exp(), -log_u.exp_m1()))
}
