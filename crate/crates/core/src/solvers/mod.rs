//! Least-squares kernels shared by every fitter.
//!
//! All problems are posed over a nonnegative cell vector `x` with a
//! weighted sum-of-squares objective `sum_k w_k (a_k - q_k.x)^2`, where each
//! `q_k` is a 0/1 indicator stored by its support. Constraints are two-sided
//! ranges on further indicator queries.

mod admm;
mod minmax;
mod nnls;
mod order_stats;
mod waterfill;
mod wls;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::CountingQuery;

pub use minmax::{solve_minmax, MinMaxSolution};
pub use nnls::{kkt_violation, solve_nnls};
pub use order_stats::{max_exceed_prob, max_order_quantile};
pub use waterfill::{simplex_water_fill, water_level};
pub use wls::solve_wls;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("problem has no terms")]
    NoTerms,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("least-squares system is rank deficient with inconsistent targets (residual {0:e})")]
    RankDeficient(f64),
    #[error("constraint set is infeasible")]
    Infeasible,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Solver tolerances and slacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub eq_slack: f64,
    pub linf_slack: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-7,
            rel_tol: 1e-7,
            max_iters: 20_000,
            eq_slack: 1e-3,
            linf_slack: 1e-2,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.abs_tol) || !ok(self.rel_tol) {
            return Err(SolverError::InvalidArgument("tolerances must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.eq_slack >= 0.0 && self.linf_slack >= 0.0) {
            return Err(SolverError::InvalidArgument("slacks must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A weighted squared-residual term.
#[derive(Debug, Clone, PartialEq)]
pub struct FitTerm {
    pub support: Vec<usize>,
    pub target: f64,
    pub weight: f64,
}

impl FitTerm {
    pub fn new(query: &CountingQuery, target: f64, weight: f64) -> Self {
        Self {
            support: query.support().collect(),
            target,
            weight,
        }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.support.iter().map(|&i| x[i]).sum()
    }
}

/// `q.x = rhs`, honored to within `slack` on either side.
#[derive(Debug, Clone, PartialEq)]
pub struct Equality {
    pub support: Vec<usize>,
    pub rhs: f64,
    pub slack: f64,
}

/// `|center - q.x| <= cap * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinfCap {
    pub support: Vec<usize>,
    pub center: f64,
    pub cap: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFitProblem {
    pub cells: usize,
    pub terms: Vec<FitTerm>,
    pub nonneg: bool,
    pub equalities: Vec<Equality>,
    pub linf_caps: Vec<LinfCap>,
}

impl QuadraticFitProblem {
    pub fn new(cells: usize) -> Self {
        Self {
            cells,
            terms: Vec::new(),
            nonneg: true,
            equalities: Vec::new(),
            linf_caps: Vec::new(),
        }
    }

    pub fn unconstrained(mut self) -> Self {
        self.nonneg = false;
        self
    }

    pub fn term(mut self, query: &CountingQuery, target: f64, weight: f64) -> Self {
        self.terms.push(FitTerm::new(query, target, weight));
        self
    }

    pub fn push_term(&mut self, term: FitTerm) {
        self.terms.push(term);
    }

    pub fn equality(mut self, query: &CountingQuery, rhs: f64, slack: f64) -> Self {
        self.equalities.push(Equality {
            support: query.support().collect(),
            rhs,
            slack,
        });
        self
    }

    pub fn cap(mut self, query: &CountingQuery, center: f64, cap: f64, scale: f64) -> Self {
        self.linf_caps.push(LinfCap {
            support: query.support().collect(),
            center,
            cap,
            scale,
        });
        self
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidProblem(m));
        if self.cells == 0 {
            return bad("zero cells".into());
        }
        let in_range = |s: &[usize]| s.iter().all(|&i| i < self.cells);
        for (k, t) in self.terms.iter().enumerate() {
            if !(t.weight.is_finite() && t.weight > 0.0) {
                return bad(format!("term {k} has weight {}", t.weight));
            }
            if !t.target.is_finite() || !in_range(&t.support) {
                return bad(format!("term {k} is malformed"));
            }
        }
        for (k, e) in self.equalities.iter().enumerate() {
            if e.slack.is_nan() || e.slack < 0.0 || !e.rhs.is_finite() || !in_range(&e.support) {
                return bad(format!("equality {k} is malformed"));
            }
        }
        for (k, c) in self.linf_caps.iter().enumerate() {
            if !(c.cap >= 0.0 && c.scale > 0.0) || !c.center.is_finite() || !in_range(&c.support) {
                return bad(format!("cap {k} is malformed"));
            }
        }
        Ok(())
    }

    /// `sum_k w_k (a_k - q_k.x)^2`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.weight * (t.target - t.dot(x)).powi(2))
            .sum()
    }

    /// Gradient of `objective`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.cells];
        for t in &self.terms {
            let r = 2.0 * t.weight * (t.dot(x) - t.target);
            for &i in &t.support {
                g[i] += r;
            }
        }
        g
    }

    /// Gram matrix `H = sum w q q^T` and `b = sum w a q`, so the objective is
    /// `x^T H x - 2 b^T x + const`.
    pub(crate) fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.cells;
        let mut h = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for t in &self.terms {
            for &i in &t.support {
                b[i] += t.weight * t.target;
                for &j in &t.support {
                    h[(i, j)] += t.weight;
                }
            }
        }
        (h, b)
    }

    /// Largest violation of the equality and cap constraints at `x`.
    pub fn constraint_violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|e| {
            let v = (e.support.iter().map(|&i| x[i]).sum::<f64>() - e.rhs).abs();
            (v - e.slack).max(0.0)
        });
        let caps = self.linf_caps.iter().map(|c| {
            let v = (c.support.iter().map(|&i| x[i]).sum::<f64>() - c.center).abs();
            (v - c.cap * c.scale).max(0.0)
        });
        let neg = x.iter().map(|&v| if self.nonneg { (-v).max(0.0) } else { 0.0 });
        eq.chain(caps).chain(neg).fold(0.0, f64::max)
    }
}

/// Solver output; `converged` is false when the iteration limit was hit
/// before the tolerances were met (the best iterate is still returned).
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Diagonal damping used to regularize singular normal equations.
pub(crate) const DAMPING: f64 = 1e-10;

pub(crate) fn damping_for(h: &DMatrix<f64>) -> f64 {
    let scale = (0..h.nrows()).map(|i| h[(i, i)]).fold(0.0, f64::max);
    DAMPING * scale.max(1.0)
}
