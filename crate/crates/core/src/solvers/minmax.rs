use super::nnls::lawson_hanson;
use super::{FitTerm, QuadraticFitProblem, SolverError, SolverSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxSolution {
    /// `min_{x>=0} max_k |a_k - q_k.x| / std_k`.
    pub dist: f64,
    /// A nonnegative point attaining `dist` (up to the bisection tolerance).
    pub x: Vec<f64>,
    pub converged: bool,
}

const NEWTON_STEPS: usize = 60;

/// Smallest normalized L-infinity misfit over `x >= 0`.
///
/// Each term's scale is `1/sqrt(weight)`, i.e. the noise standard deviation
/// when weights are inverse variances. The distance is found by bisection;
/// feasibility of a level `t` is decided by minimizing the squared distance
/// of every `q.x` to its band `[a - t std, a + t std]`, which is an NNLS
/// over the currently violated band edges iterated to a fixed point.
pub fn solve_minmax(p: &QuadraticFitProblem, s: &SolverSettings) -> Result<MinMaxSolution, SolverError> {
    p.validate()?;
    s.validate()?;
    if p.terms.is_empty() {
        return Err(SolverError::NoTerms);
    }
    let stds: Vec<f64> = p.terms.iter().map(|t| 1.0 / t.weight.sqrt()).collect();
    let misfit = |x: &[f64]| -> f64 {
        p.terms
            .iter()
            .zip(&stds)
            .map(|(t, sd)| (t.target - t.dot(x)).abs() / sd)
            .fold(0.0, f64::max)
    };

    // upper bracket from the plain NNLS fit
    let (h, b) = p.normal_equations();
    let (x0, ok0, _) = lawson_hanson(&h, &b, 0.5 * s.abs_tol, s.max_iters);
    let mut best_x: Vec<f64> = x0.iter().copied().collect();
    let mut hi = misfit(&best_x);
    let mut lo = 0.0;
    let mut converged = ok0;

    let mut probe = best_x.clone();
    let mut rounds = 0;
    while hi - lo > s.rel_tol * hi.max(s.abs_tol) {
        rounds += 1;
        if rounds > s.max_iters {
            converged = false;
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (feasible, x, ok) = band_feasible(p, &stds, mid, &probe, s);
        converged &= ok;
        if feasible {
            hi = mid;
            best_x = x.clone();
        } else {
            lo = mid;
        }
        probe = x;
    }
    // report the witness's own misfit so dist and x agree exactly
    let dist = misfit(&best_x).min(hi);
    Ok(MinMaxSolution {
        dist,
        x: best_x,
        converged,
    })
}

fn band_violation(p: &QuadraticFitProblem, stds: &[f64], t: f64, x: &[f64]) -> (f64, f64) {
    let mut phi = 0.0;
    let mut worst: f64 = 0.0;
    for (term, sd) in p.terms.iter().zip(stds) {
        let r = term.dot(x);
        let v = ((term.target - t * sd) - r).max(r - (term.target + t * sd)).max(0.0);
        phi += term.weight * v * v;
        worst = worst.max(v / sd);
    }
    (phi, worst)
}

/// Is there `x >= 0` with every `q.x` inside its band at level `t`?
/// Returns the final iterate either way.
fn band_feasible(
    p: &QuadraticFitProblem,
    stds: &[f64],
    t: f64,
    start: &[f64],
    s: &SolverSettings,
) -> (bool, Vec<f64>, bool) {
    let tol = 1e-9 * t.max(1.0);
    let mut x = start.to_vec();
    let (mut phi, mut worst) = band_violation(p, stds, t, &x);
    for _ in 0..NEWTON_STEPS {
        if worst <= tol {
            return (true, x, true);
        }
        // least squares toward the violated edge of each band
        let mut sub = QuadraticFitProblem::new(p.cells);
        for (term, sd) in p.terms.iter().zip(stds) {
            let r = term.dot(&x);
            let (lo, hi) = (term.target - t * sd, term.target + t * sd);
            let edge = if r < lo {
                lo
            } else if r > hi {
                hi
            } else {
                continue;
            };
            sub.push_term(FitTerm {
                support: term.support.clone(),
                target: edge,
                weight: term.weight,
            });
        }
        let (h, b) = sub.normal_equations();
        let (cand, ok, _) = lawson_hanson(&h, &b, 0.5 * s.abs_tol, s.max_iters);
        if !ok {
            return (false, x, false);
        }
        let dir: Vec<f64> = cand.iter().zip(&x).map(|(c, v)| c - v).collect();
        let step = line_search(|a| band_violation(p, stds, t, &axpy(&x, a, &dir)).0);
        let next = axpy(&x, step, &dir);
        let (phi_next, worst_next) = band_violation(p, stds, t, &next);
        if phi_next >= phi * (1.0 - 1e-12) {
            // stalled at the band-distance minimizer
            return (
                worst_next.min(worst) <= tol,
                if phi_next < phi { next } else { x },
                true,
            );
        }
        x = next;
        phi = phi_next;
        worst = worst_next;
    }
    (worst <= tol, x, true)
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(u, v)| (u + a * v).max(0.0)).collect()
}

/// Golden-section search on `[0, 1]` for a convex function.
fn line_search(f: impl Fn(f64) -> f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // the full Newton step is frequently exact; prefer it when no worse
    if f(1.0) <= f(mid) {
        1.0
    } else {
        mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{identity_group, CountingQuery};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nonnegativity_forces_zero() {
        let q = CountingQuery::from_cells("q", 1, [0]);
        let sol = solve_minmax(
            &QuadraticFitProblem::new(1).term(&q, -3.0, 1.0),
            &SolverSettings::default(),
        )
        .unwrap();
        assert!((sol.dist - 3.0).abs() < 1e-6);
        assert_eq!(sol.x, vec![0.0]);
    }

    #[test]
    fn duplicate_measurements_meet_in_the_middle() {
        let q = CountingQuery::from_cells("q", 1, [0]);
        let p = QuadraticFitProblem::new(1).term(&q, 4.0, 1.0).term(&q, 6.0, 1.0);
        let sol = solve_minmax(&p, &SolverSettings::default()).unwrap();
        assert!((sol.dist - 1.0).abs() < 1e-6);
        assert!((sol.x[0] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn consistent_targets_have_zero_distance() {
        let ids = identity_group(3);
        let sum = CountingQuery::from_cells("sum", 3, 0..3);
        let p = QuadraticFitProblem::new(3)
            .term(&ids.queries()[0], 1.0, 1.0)
            .term(&ids.queries()[1], 2.0, 1.0)
            .term(&ids.queries()[2], 0.0, 1.0)
            .term(&sum, 3.0, 1.0);
        let sol = solve_minmax(&p, &SolverSettings::default()).unwrap();
        assert!(sol.dist < 1e-7);
    }

    #[test]
    fn random_probes_never_beat_dist() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = SolverSettings::default();
        for _ in 0..5 {
            let n = 4;
            let mut p = QuadraticFitProblem::new(n);
            for q in identity_group(n).queries() {
                p = p.term(q, rng.random_range(-3.0..6.0), 1.0);
            }
            let sum = CountingQuery::from_cells("sum", n, 0..n);
            p = p.term(&sum, rng.random_range(-2.0..10.0), 0.25);
            let sol = solve_minmax(&p, &s).unwrap();
            let misfit = |x: &[f64]| {
                p.terms
                    .iter()
                    .map(|t| (t.target - t.dot(x)).abs() * t.weight.sqrt())
                    .fold(0.0, f64::max)
            };
            assert!((misfit(&sol.x) - sol.dist).abs() < 1e-6);
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..8.0)).collect();
                assert!(misfit(&x) >= sol.dist - 1e-6);
            }
        }
    }
}
