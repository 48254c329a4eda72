use nalgebra::DMatrix;

use super::{damping_for, QuadraticFitProblem, SolverError};

/// Unconstrained weighted least squares.
///
/// Solves the damped normal equations `(H + lambda I) x = b` with a few
/// steps of iterative refinement, so full-rank systems get the exact
/// minimizer and rank-deficient ones one close to the minimum-norm choice.
/// Nonnegativity and constraints on `p` are ignored.
pub fn solve_wls(p: &QuadraticFitProblem) -> Result<Vec<f64>, SolverError> {
    p.validate()?;
    if p.terms.is_empty() {
        return Err(SolverError::NoTerms);
    }
    let (h, b) = p.normal_equations();
    let lambda = damping_for(&h);
    let damped = &h + DMatrix::identity(p.cells, p.cells) * lambda;
    let chol = damped.cholesky().ok_or(SolverError::RankDeficient(f64::NAN))?;
    let mut x = chol.solve(&b);
    // refinement removes the damping bias on the range of H
    for _ in 0..3 {
        x += chol.solve(&(&b - &h * &x));
    }
    let resid = (&h * &x - &b).amax();
    let scale = b.amax() + h.amax() * x.amax();
    if !resid.is_finite() || resid > 1e-6 * scale.max(1.0) {
        return Err(SolverError::RankDeficient(resid));
    }
    Ok(x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{identity_group, sum_group, CountingQuery};

    fn one_dim(targets_sum: f64, ids: &[f64], w: f64) -> QuadraticFitProblem {
        let n = ids.len();
        let mut p = QuadraticFitProblem::new(n)
            .unconstrained()
            .term(&sum_group(n).queries()[0], targets_sum, w);
        for (q, &a) in identity_group(n).queries().iter().zip(ids) {
            p = p.term(q, a, w);
        }
        p
    }

    #[test]
    fn single_identity_term() {
        let q = CountingQuery::from_cells("q", 1, [0]);
        let x = solve_wls(&QuadraticFitProblem::new(1).term(&q, 5.0, 1.0)).unwrap();
        assert!((x[0] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn residual_split_evenly() {
        // brute-force grid oracle around the minimizer
        let p = one_dim(10.0, &[3.0, 5.0], 1.0);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=400 {
            for j in 0..=400 {
                let x = [3.0 + i as f64 * 0.005, 5.0 + j as f64 * 0.005];
                let f = p.objective(&x);
                if f < best.0 {
                    best = (f, x[0], x[1]);
                }
            }
        }
        let x = solve_wls(&p).unwrap();
        assert!((x[0] - 11.0 / 3.0).abs() < 1e-8);
        assert!((x[1] - 17.0 / 3.0).abs() < 1e-8);
        assert!((x[0] - best.1).abs() <= 0.005 && (x[1] - best.2).abs() <= 0.005);
    }

    #[test]
    fn weight_scaling_invariant() {
        let a = solve_wls(&one_dim(10.0, &[3.0, 5.0, -1.0], 1.0)).unwrap();
        let b = solve_wls(&one_dim(10.0, &[3.0, 5.0, -1.0], 37.5)).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_gives_min_norm() {
        // only the sum is observed: min-norm solution spreads it evenly
        let p = QuadraticFitProblem::new(4)
            .unconstrained()
            .term(&sum_group(4).queries()[0], 8.0, 1.0);
        let x = solve_wls(&p).unwrap();
        for v in x {
            assert!((v - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_problem_rejected() {
        assert_eq!(solve_wls(&QuadraticFitProblem::new(3)), Err(SolverError::NoTerms));
    }
}
