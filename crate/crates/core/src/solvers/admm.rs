//! Operator-splitting QP solver for the constrained fits.
//!
//! Solves `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u` with the OSQP iteration
//! (relaxed ADMM on the split `z = Ax`), adaptive step size, a primal
//! infeasibility certificate, and an active-set polish that re-solves the
//! KKT system on the constraints the duals mark active.

use nalgebra::{DMatrix, DVector};

use super::{QuadraticFitProblem, Solution, SolverError, SolverSettings};

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const EQ_RHO_FACTOR: f64 = 1e3;
const CHECK_EVERY: usize = 25;
const POLISH_DELTA: f64 = 1e-6;
const POLISH_REFINE: usize = 4;
const INFEAS_TOL: f64 = 1e-6;

struct Row {
    support: Vec<usize>,
    lo: f64,
    hi: f64,
}

impl Row {
    fn is_equality(&self) -> bool {
        self.hi - self.lo <= 1e-12 * (1.0 + self.lo.abs())
    }
}

struct Qp {
    n: usize,
    p: DMatrix<f64>,
    q: DVector<f64>,
    rows: Vec<Row>,
}

impl Qp {
    fn a_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|r| r.support.iter().map(|&i| x[i]).sum()),
        )
    }

    fn at_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for (r, &v) in self.rows.iter().zip(y.iter()) {
            if v != 0.0 {
                for &i in &r.support {
                    out[i] += v;
                }
            }
        }
        out
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().zip(v.iter()).map(|(r, &x)| x.clamp(r.lo, r.hi)),
        )
    }

    fn factor(&self, rho: &DVector<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let mut k = self.p.clone();
        for i in 0..self.n {
            k[(i, i)] += SIGMA;
        }
        for (r, &rh) in self.rows.iter().zip(rho.iter()) {
            for &i in &r.support {
                for &j in &r.support {
                    k[(i, j)] += rh;
                }
            }
        }
        k.cholesky()
    }

    fn rho_vec(&self, rho: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.rows.len(),
            self.rows
                .iter()
                .map(|r| if r.is_equality() { rho * EQ_RHO_FACTOR } else { rho }),
        )
    }
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
    prim_scale: f64,
    dual_scale: f64,
}

impl Residuals {
    fn met(&self) -> bool {
        self.prim <= self.eps_prim && self.dual <= self.eps_dual
    }
}

fn residuals(qp: &Qp, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>, s: &SolverSettings) -> Residuals {
    let ax = qp.a_mul(x);
    let px = &qp.p * x;
    let aty = qp.at_mul(y);
    let prim = if qp.rows.is_empty() { 0.0 } else { (&ax - z).amax() };
    let dual = (&px + &qp.q + &aty).amax();
    let prim_scale = if qp.rows.is_empty() {
        0.0
    } else {
        ax.amax().max(z.amax())
    };
    let dual_scale = px.amax().max(aty.amax()).max(qp.q.amax());
    Residuals {
        prim,
        dual,
        eps_prim: s.abs_tol + s.rel_tol * prim_scale,
        eps_dual: s.abs_tol + s.rel_tol * dual_scale,
        prim_scale,
        dual_scale,
    }
}

fn build(p: &QuadraticFitProblem) -> (Qp, f64) {
    let (h, b) = p.normal_equations();
    let mut rows = Vec::new();
    if p.nonneg {
        rows.extend((0..p.cells).map(|i| Row {
            support: vec![i],
            lo: 0.0,
            hi: f64::INFINITY,
        }));
    }
    rows.extend(p.equalities.iter().map(|e| Row {
        support: e.support.clone(),
        lo: e.rhs - e.slack,
        hi: e.rhs + e.slack,
    }));
    rows.extend(p.linf_caps.iter().map(|c| Row {
        support: c.support.clone(),
        lo: c.center - c.cap * c.scale,
        hi: c.center + c.cap * c.scale,
    }));
    // cost scaling keeps the step size in a sensible range
    let pmax = (0..p.cells).map(|i| 2.0 * h[(i, i)]).fold(0.0, f64::max);
    let cost = 1.0 / pmax.max(1e-12);
    let qp = Qp {
        n: p.cells,
        p: h * (2.0 * cost),
        q: b * (-2.0 * cost),
        rows,
    };
    (qp, cost)
}

/// Re-solve the equality-constrained QP on the active set implied by `(z, y)`.
/// Returns a polished `(x, y)` when it passes the optimality checks.
fn polish(qp: &Qp, z: &DVector<f64>, y: &DVector<f64>, s: &SolverSettings) -> Option<(DVector<f64>, DVector<f64>)> {
    let mut active = Vec::new();
    let mut bound = Vec::new();
    for (k, r) in qp.rows.iter().enumerate() {
        if z[k] - r.lo < -y[k] {
            active.push(k);
            bound.push(r.lo);
        } else if r.hi - z[k] < y[k] {
            active.push(k);
            bound.push(r.hi);
        }
    }
    let n = qp.n;
    let m = active.len();
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    for (c, &k) in active.iter().enumerate() {
        for &i in &qp.rows[k].support {
            kkt[(i, n + c)] = 1.0;
            kkt[(n + c, i)] = 1.0;
        }
    }
    let exact = kkt.clone();
    for i in 0..n {
        kkt[(i, i)] += POLISH_DELTA;
    }
    for c in 0..m {
        kkt[(n + c, n + c)] -= POLISH_DELTA;
    }
    let lu = kkt.lu();
    let mut rhs = DVector::zeros(n + m);
    for i in 0..n {
        rhs[i] = -qp.q[i];
    }
    for (c, &b) in bound.iter().enumerate() {
        rhs[n + c] = b;
    }
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..POLISH_REFINE {
        let r = &rhs - &exact * &sol;
        sol += lu.solve(&r)?;
    }
    let x = sol.rows(0, n).into_owned();
    let mut yp = DVector::zeros(qp.rows.len());
    for (c, &k) in active.iter().enumerate() {
        yp[k] = sol[n + c];
    }
    // dual signs must match the side each constraint is active on
    for (c, &k) in active.iter().enumerate() {
        let r = &qp.rows[k];
        let at_lo = bound[c] == r.lo && !r.is_equality();
        let at_hi = bound[c] == r.hi && !r.is_equality();
        if (at_lo && yp[k] > s.abs_tol) || (at_hi && yp[k] < -s.abs_tol) {
            return None;
        }
    }
    let zp = qp.project(&qp.a_mul(&x));
    if residuals(qp, &x, &zp, &yp, s).met() {
        Some((x, yp))
    } else {
        None
    }
}

pub(super) fn solve(p: &QuadraticFitProblem, s: &SolverSettings) -> Result<Solution, SolverError> {
    let (qp, _cost) = build(p);
    let m = qp.rows.len();
    let mut rho = RHO_INIT;
    let mut rho_v = qp.rho_vec(rho);
    let mut chol = qp
        .factor(&rho_v)
        .ok_or_else(|| SolverError::InvalidProblem("KKT factorization failed".into()))?;

    let mut x = DVector::zeros(qp.n);
    let mut z = qp.project(&DVector::zeros(m));
    let mut y = DVector::zeros(m);
    let mut y_prev = y.clone();

    let finish = |x: DVector<f64>, converged: bool, iterations: usize| {
        let mut x: Vec<f64> = x.iter().copied().collect();
        if p.nonneg {
            x.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok(Solution {
            objective: p.objective(&x),
            x,
            converged,
            iterations,
        })
    };

    for iter in 1..=s.max_iters {
        let rhs = &x * SIGMA - &qp.q + qp.at_mul(&(rho_v.component_mul(&z) - &y));
        let xt = chol.solve(&rhs);
        let zt = qp.a_mul(&xt);
        x = &xt * ALPHA + &x * (1.0 - ALPHA);
        let zr = &zt * ALPHA + &z * (1.0 - ALPHA);
        let z_new = qp.project(&(&zr + y.component_div(&rho_v)));
        y += rho_v.component_mul(&(&zr - &z_new));
        z = z_new;

        if iter % CHECK_EVERY != 0 && iter != s.max_iters {
            continue;
        }
        let res = residuals(&qp, &x, &z, &y, s);
        if let Some((xp, _)) = polish(&qp, &z, &y, s) {
            return finish(xp, true, iter);
        }
        if res.met() {
            return finish(x, true, iter);
        }

        // infeasibility certificate from the dual increment
        let dy = &y - &y_prev;
        let dy_norm = dy.amax();
        if dy_norm > 1e-12 {
            let aty = qp.at_mul(&dy).amax();
            let support: f64 = qp
                .rows
                .iter()
                .zip(dy.iter())
                .map(|(r, &d)| {
                    if d > 0.0 {
                        r.hi * d
                    } else if d < 0.0 {
                        r.lo * d
                    } else {
                        0.0
                    }
                })
                .sum();
            if aty <= INFEAS_TOL * dy_norm && support < -INFEAS_TOL * dy_norm {
                return Err(SolverError::Infeasible);
            }
        }
        y_prev = y.clone();

        let ratio = ((res.prim / res.prim_scale.max(1e-30)) / (res.dual / res.dual_scale.max(1e-30)).max(1e-30)).sqrt();
        let new_rho = (rho * ratio).clamp(RHO_MIN, RHO_MAX);
        if new_rho.is_finite() && (new_rho > 5.0 * rho || new_rho < rho / 5.0) {
            rho = new_rho;
            rho_v = qp.rho_vec(rho);
            chol = qp
                .factor(&rho_v)
                .ok_or_else(|| SolverError::InvalidProblem("KKT factorization failed".into()))?;
        }
    }
    finish(x, false, s.max_iters)
}
