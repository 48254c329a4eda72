use nalgebra::{DMatrix, DVector};

use super::{admm, damping_for, wls, QuadraticFitProblem, Solution, SolverError, SolverSettings};

/// Weighted least squares under nonnegativity, optional slack equalities
/// and optional L-infinity caps.
///
/// Pure nonnegativity problems go through a Lawson–Hanson active-set
/// iteration on the normal equations, which terminates at an exact KKT
/// point. Problems with equality or cap constraints are handed to the
/// ADMM solver in [`admm`], which finishes with an active-set polish.
pub fn solve_nnls(p: &QuadraticFitProblem, s: &SolverSettings) -> Result<Solution, SolverError> {
    p.validate()?;
    s.validate()?;
    if p.terms.is_empty() {
        return Err(SolverError::NoTerms);
    }
    let constrained = !p.equalities.is_empty() || !p.linf_caps.is_empty();
    if !constrained {
        if !p.nonneg {
            let x = wls::solve_wls(p)?;
            return Ok(Solution {
                objective: p.objective(&x),
                x,
                converged: true,
                iterations: 1,
            });
        }
        let (h, b) = p.normal_equations();
        let (x, converged, iterations) = lawson_hanson(&h, &b, 0.5 * s.abs_tol, s.max_iters);
        let x: Vec<f64> = x.iter().copied().collect();
        return Ok(Solution {
            objective: p.objective(&x),
            x,
            converged,
            iterations,
        });
    }
    admm::solve(p, s)
}

/// Largest violation of the NNLS optimality conditions at `x`: a negative
/// gradient entry at a zero coordinate, or any gradient at a positive one.
pub fn kkt_violation(p: &QuadraticFitProblem, x: &[f64]) -> f64 {
    p.gradient(x)
        .iter()
        .zip(x)
        .map(|(&g, &v)| if v > 0.0 { g.abs() } else { (-g).max(0.0) })
        .fold(0.0, f64::max)
}

/// Solve the passive block `H_PP z = b_P`; other coordinates are zero.
fn solve_passive(h: &DMatrix<f64>, b: &DVector<f64>, passive: &[usize], lambda: f64) -> Option<DVector<f64>> {
    let k = passive.len();
    let mut sub = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for (r, &i) in passive.iter().enumerate() {
        rhs[r] = b[i];
        for (c, &j) in passive.iter().enumerate() {
            sub[(r, c)] = h[(i, j)];
        }
        sub[(r, r)] += lambda;
    }
    let zs = sub.cholesky()?.solve(&rhs);
    let mut z = DVector::zeros(h.nrows());
    for (r, &i) in passive.iter().enumerate() {
        z[i] = zs[r];
    }
    Some(z)
}

/// Lawson–Hanson NNLS on `min x^T H x - 2 b^T x, x >= 0`.
/// Returns `(x, converged, iterations)`; `tol` bounds `b - Hx` on the zero set.
pub(crate) fn lawson_hanson(
    h: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> (DVector<f64>, bool, usize) {
    let n = h.nrows();
    let lambda = damping_for(h);
    let floor = 1e-13 * b.amax().max(1.0);
    let tol = tol.max(floor);
    let mut x = DVector::zeros(n);
    let mut is_passive = vec![false; n];
    let mut blocked = vec![false; n];
    let mut iters = 0;

    loop {
        let w = b - h * &x;
        let candidate = (0..n)
            .filter(|&i| !is_passive[i] && !blocked[i])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let t = match candidate {
            Some(t) if w[t] > tol => t,
            _ => return (x, true, iters),
        };
        is_passive[t] = true;
        let mut first = true;

        loop {
            iters += 1;
            if iters > max_iters {
                return (x, false, iters);
            }
            let passive: Vec<usize> = (0..n).filter(|&i| is_passive[i]).collect();
            let Some(z) = solve_passive(h, b, &passive, lambda) else {
                return (x, false, iters);
            };
            if first && z[t] <= 0.0 {
                // rounding noise made t look profitable; skip it this round
                is_passive[t] = false;
                blocked[t] = true;
                break;
            }
            first = false;
            if passive.iter().all(|&i| z[i] > 0.0) {
                x = z;
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }
            let mut alpha = f64::INFINITY;
            let mut leaving = passive[0];
            for &i in &passive {
                if z[i] <= 0.0 {
                    let denom = x[i] - z[i];
                    let a = if denom > 0.0 { x[i] / denom } else { 0.0 };
                    if a < alpha {
                        alpha = a;
                        leaving = i;
                    }
                }
            }
            x = &x + (&z - &x) * alpha;
            let eps = 1e-14 * (1.0 + x.amax());
            for &i in &passive {
                if i == leaving || x[i] <= eps {
                    x[i] = 0.0;
                    is_passive[i] = false;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{identity_group, sum_group, CountingQuery};
    use crate::solvers::simplex_water_fill;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn negative_targets_clamp_to_zero() {
        let ids = identity_group(2);
        let p = QuadraticFitProblem::new(2)
            .term(&ids.queries()[0], -1.0, 1.0)
            .term(&ids.queries()[1], -2.0, 1.0);
        let sol = solve_nnls(&p, &SolverSettings::default()).unwrap();
        assert_eq!(sol.x, vec![0.0, 0.0]);
        assert!(sol.converged);
    }

    /// Exhaustive active-set oracle: for each of the 2^n zero patterns solve
    /// the free block by Gaussian elimination, keep feasible candidates and
    /// return the smallest objective.
    fn enumerate_nnls(p: &QuadraticFitProblem) -> f64 {
        let (h, b) = p.normal_equations();
        let n = p.cells;
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let mut x = vec![0.0; n];
            if !free.is_empty() {
                let k = free.len();
                let sub = DMatrix::from_fn(k, k, |r, c| h[(free[r], free[c])]);
                let rhs = DVector::from_fn(k, |r, _| b[free[r]]);
                let Some(sol) = sub.lu().solve(&rhs) else { continue };
                if sol.iter().any(|&v| v < 0.0) {
                    continue;
                }
                for (r, &i) in free.iter().enumerate() {
                    x[i] = sol[r];
                }
            }
            best = best.min(p.objective(&x));
        }
        best
    }

    fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> QuadraticFitProblem {
        let mut p = QuadraticFitProblem::new(n);
        // identity rows keep every free block nonsingular
        for q in identity_group(n).queries() {
            p = p.term(q, rng.random_range(-5.0..5.0), rng.random_range(0.1..2.0));
        }
        for k in 0..3 {
            let cells: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.5)).collect();
            let q = CountingQuery::from_cells(format!("r{k}"), n, cells);
            p = p.term(&q, rng.random_range(-5.0..10.0), rng.random_range(0.1..2.0));
        }
        p
    }

    #[test]
    fn matches_enumeration_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let p = random_problem(&mut rng, 5);
            let sol = solve_nnls(&p, &SolverSettings::default()).unwrap();
            let oracle = enumerate_nnls(&p);
            assert!(sol.converged);
            assert!(
                (sol.objective - oracle).abs() <= 1e-6,
                "{} vs {}",
                sol.objective,
                oracle
            );
            assert!(kkt_violation(&p, &sol.x) <= 1e-7);
        }
    }

    #[test]
    fn sum_then_water_fill_equivalence_on_simple_instance() {
        // heavy sum weight drives the solution to the water-filling projection
        let a = [3.0, -1.0, 2.0];
        let n = a.len();
        let mut p = QuadraticFitProblem::new(n).equality(&sum_group(n).queries()[0], 4.0, 0.0);
        for (q, &v) in identity_group(n).queries().iter().zip(&a) {
            p = p.term(q, v, 1.0);
        }
        let sol = solve_nnls(&p, &SolverSettings::default()).unwrap();
        let wf = simplex_water_fill(&a, 4.0).unwrap();
        for (u, v) in sol.x.iter().zip(&wf) {
            assert!((u - v).abs() < 1e-6, "{:?} vs {:?}", sol.x, wf);
        }
    }
}
