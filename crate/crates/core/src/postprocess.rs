//! Fitters turning noisy measurements into nonnegative weighted histograms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanisms::{Measurement, MeasurementSet, NoiseSpec};
use crate::model::{IDENTITY_GROUP, SUM_GROUP};
use crate::solvers::{
    max_exceed_prob, max_order_quantile, simplex_water_fill, solve_minmax, solve_nnls, solve_wls, Equality, FitTerm,
    LinfCap, QuadraticFitProblem, SolverError, SolverSettings,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocessError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("measurement set has no group named {0:?}")]
    MissingGroup(String),
    #[error("priority must list every workload group exactly once: {0}")]
    BadPriority(String),
    #[error("confidence must lie in (0, 1), got {0}")]
    BadConfidence(f64),
    #[error("{0}")]
    Unsupported(String),
}

/// Output of a fitter. `weights` is one entry per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub weights: Vec<f64>,
    pub converged: bool,
    /// Objective value reached by each optimization stage, in order.
    pub stage_objectives: Vec<f64>,
    /// False only for OLS, whose output may contain negative cells.
    pub microdata: bool,
}

fn term(m: &Measurement<'_>, weight: f64) -> FitTerm {
    FitTerm::new(m.query, m.answer, weight)
}

fn inverse_variance_problem<'a>(cells: usize, entries: impl Iterator<Item = Measurement<'a>>) -> QuadraticFitProblem {
    let mut p = QuadraticFitProblem::new(cells);
    for e in entries {
        p.push_term(term(&e, 1.0 / e.noise.fit_variance()));
    }
    p
}

fn nonneg(mut x: Vec<f64>) -> Vec<f64> {
    // solvers may leave tiny negative residue inside their tolerance
    x.iter_mut().for_each(|v| *v = v.max(0.0));
    x
}

/// Generalized least squares over every measurement, without nonnegativity.
pub fn fit_ols(m: &MeasurementSet) -> Result<FitResult, PostprocessError> {
    let p = inverse_variance_problem(m.cells(), m.entries()).unconstrained();
    let x = solve_wls(&p)?;
    Ok(FitResult {
        stage_objectives: vec![p.objective(&x)],
        weights: x,
        converged: true,
        microdata: false,
    })
}

/// Weighted least squares over every measurement with `x >= 0`.
pub fn fit_nnls(m: &MeasurementSet, s: &SolverSettings) -> Result<FitResult, PostprocessError> {
    let p = inverse_variance_problem(m.cells(), m.entries());
    let sol = solve_nnls(&p, s)?;
    Ok(FitResult {
        weights: nonneg(sol.x),
        converged: sol.converged,
        stage_objectives: vec![sol.objective],
        microdata: true,
    })
}

/// Minimize the largest standardized misfit, then refit by least squares
/// with every misfit capped at that level plus `linf_slack`.
pub fn fit_max(m: &MeasurementSet, s: &SolverSettings) -> Result<FitResult, PostprocessError> {
    let mut p = inverse_variance_problem(m.cells(), m.entries());
    let mm = solve_minmax(&p, s)?;
    let cap = mm.dist + s.linf_slack;
    p.linf_caps = p
        .terms
        .iter()
        .map(|t| LinfCap {
            support: t.support.clone(),
            center: t.target,
            cap,
            scale: 1.0 / t.weight.sqrt(),
        })
        .collect();
    let sol = solve_nnls(&p, s)?;
    Ok(FitResult {
        weights: nonneg(sol.x),
        converged: mm.converged && sol.converged,
        stage_objectives: vec![mm.dist, sol.objective],
        microdata: true,
    })
}

/// Fit groups one at a time in `priority` order, holding every previously
/// fitted query at its fitted value (within `eq_slack`).
pub fn fit_sequential(
    m: &MeasurementSet,
    priority: &[&str],
    s: &SolverSettings,
) -> Result<FitResult, PostprocessError> {
    let w = m.workload();
    let mut seen: Vec<&str> = Vec::with_capacity(priority.len());
    for &name in priority {
        if w.group(name).is_none() {
            return Err(PostprocessError::MissingGroup(name.to_string()));
        }
        if seen.contains(&name) {
            return Err(PostprocessError::BadPriority(format!("{name:?} listed twice")));
        }
        seen.push(name);
    }
    if seen.len() != w.groups().len() {
        return Err(PostprocessError::BadPriority(format!(
            "{} of {} groups listed",
            seen.len(),
            w.groups().len()
        )));
    }

    let cells = m.cells();
    let mut x: Vec<f64> = Vec::new();
    let mut pinned = vec![false; cells];
    let mut fixed: Vec<Vec<usize>> = Vec::new();
    let mut objectives = Vec::new();
    let mut converged = true;
    for (stage, &name) in priority.iter().enumerate() {
        if stage > 0 && pinned.iter().all(|&b| b) {
            // earlier equalities already determine every cell
            continue;
        }
        let mut p = inverse_variance_problem(cells, m.group_entries(name));
        p.equalities = fixed
            .iter()
            .map(|support| Equality {
                rhs: support.iter().map(|&i| x[i]).sum(),
                support: support.clone(),
                slack: s.eq_slack,
            })
            .collect();
        let sol = solve_nnls(&p, s)?;
        converged &= sol.converged;
        objectives.push(sol.objective);
        x = nonneg(sol.x);
        for q in w.group(name).expect("checked above").queries() {
            let support: Vec<usize> = q.support().collect();
            if let [only] = support[..] {
                pinned[only] = true;
            }
            fixed.push(support);
        }
    }
    Ok(FitResult {
        weights: x,
        converged,
        stage_objectives: objectives,
        microdata: true,
    })
}

/// Classification of one group's queries for reweighted fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPlan {
    pub group: String,
    pub noise: NoiseSpec,
    /// Answers strictly below this are low. Infinite when no answer stands
    /// out from the noise envelope.
    pub cutoff: f64,
    pub j_low: usize,
    pub downweight: f64,
    /// Positions within the group, in ascending answer order.
    pub low: Vec<usize>,
    pub high: Vec<usize>,
    /// Cells covered by the low queries together.
    pub aggregate_support: Vec<usize>,
    pub aggregate_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweightPlan {
    pub groups: Vec<GroupPlan>,
}

/// Split each group into queries whose answers clear the max-of-noise
/// envelope at confidence `gamma` (high) and the rest (low).
pub fn plan_reweight(m: &MeasurementSet, gamma: f64) -> Result<ReweightPlan, PostprocessError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(PostprocessError::BadConfidence(gamma));
    }
    let mut groups = Vec::new();
    for g in m.workload().groups() {
        let entries: Vec<Measurement<'_>> = m.group_entries(g.name()).collect();
        let spec = *entries
            .first()
            .map(|e| e.noise)
            .ok_or_else(|| PostprocessError::MissingGroup(g.name().to_string()))?;
        let mut order: Vec<usize> = (0..entries.len()).collect();
        order.sort_by(|&a, &b| {
            entries[a]
                .answer
                .total_cmp(&entries[b].answer)
                .then_with(|| entries[a].query.id().cmp(entries[b].query.id()))
        });

        let mut cutoff = f64::INFINITY;
        for (k, &i) in order.iter().enumerate() {
            let a = entries[i].answer;
            if max_exceed_prob(&spec, k + 1, a)? <= 1.0 - gamma {
                cutoff = a;
                break;
            }
        }
        let (low, high): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| entries[i].answer < cutoff);
        let j_low = low.len();
        let floor = spec.std_dev().max(std::f64::consts::FRAC_1_SQRT_2);
        let downweight = max_order_quantile(&spec, j_low.max(1), 0.5)?.max(floor);
        let mut aggregate_support: Vec<usize> = low.iter().flat_map(|&i| entries[i].query.support()).collect();
        aggregate_support.sort_unstable();
        let aggregate_target = low.iter().map(|&i| entries[i].answer).sum();
        groups.push(GroupPlan {
            group: g.name().to_string(),
            noise: spec,
            cutoff,
            j_low,
            downweight,
            low,
            high,
            aggregate_support,
            aggregate_target,
        });
    }
    Ok(ReweightPlan { groups })
}

/// The weighted term set built from a plan: high queries at full weight,
/// low queries deflated by the downweight, plus one aggregate per group
/// with low queries. Both low-side terms are halved so the low set is not
/// counted twice.
pub fn reweight_problem(m: &MeasurementSet, plan: &ReweightPlan) -> QuadraticFitProblem {
    let mut p = QuadraticFitProblem::new(m.cells());
    for gp in &plan.groups {
        let entries: Vec<Measurement<'_>> = m.group_entries(&gp.group).collect();
        let var = gp.noise.fit_variance();
        for &i in &gp.high {
            p.push_term(term(&entries[i], 1.0 / var));
        }
        for &i in &gp.low {
            p.push_term(term(&entries[i], 1.0 / (2.0 * var * gp.downweight * gp.downweight)));
        }
        if gp.j_low > 0 {
            p.push_term(FitTerm {
                support: gp.aggregate_support.clone(),
                target: gp.aggregate_target,
                weight: 1.0 / (2.0 * gp.j_low as f64 * var),
            });
        }
    }
    p
}

/// NNLS over the reweighted term set from [`plan_reweight`].
pub fn fit_reweighted(m: &MeasurementSet, gamma: f64, s: &SolverSettings) -> Result<FitResult, PostprocessError> {
    let plan = plan_reweight(m, gamma)?;
    let sol = solve_nnls(&reweight_problem(m, &plan), s)?;
    Ok(FitResult {
        weights: nonneg(sol.x),
        converged: sol.converged,
        stage_objectives: vec![sol.objective],
        microdata: true,
    })
}

/// Project the identity answers onto `{x >= 0, sum x = max(0, a_sum)}`.
pub fn fit_simplex(m: &MeasurementSet) -> Result<FitResult, PostprocessError> {
    let mut sums = m.group_entries(SUM_GROUP);
    let total = match (sums.next(), sums.next()) {
        (Some(e), None) => e.answer.max(0.0),
        _ => return Err(PostprocessError::MissingGroup(SUM_GROUP.to_string())),
    };
    let mut point = vec![None; m.cells()];
    for e in m.group_entries(IDENTITY_GROUP) {
        let mut support = e.query.support();
        match (support.next(), support.next()) {
            (Some(i), None) => point[i] = Some(e.answer),
            _ => {
                return Err(PostprocessError::Unsupported(
                    "identity queries must cover one cell each".into(),
                ))
            }
        }
    }
    let point: Vec<f64> = point
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| PostprocessError::MissingGroup(IDENTITY_GROUP.to_string()))?;
    let x = simplex_water_fill(&point, total)?;
    Ok(FitResult {
        weights: x,
        converged: true,
        stage_objectives: vec![],
        microdata: true,
    })
}

/// Registered algorithm names, as used in configs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ols,
    Nnls,
    Max,
    Seq,
    Weight,
    Simplex,
    /// Noisy point counts clamped at zero; bypasses the shared measurements.
    Clamp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::Ols,
        Algorithm::Nnls,
        Algorithm::Max,
        Algorithm::Seq,
        Algorithm::Weight,
        Algorithm::Simplex,
        Algorithm::Clamp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ols => "ols",
            Algorithm::Nnls => "nnls",
            Algorithm::Max => "max",
            Algorithm::Seq => "seq",
            Algorithm::Weight => "weight",
            Algorithm::Simplex => "simplex",
            Algorithm::Clamp => "clamp",
        }
    }

    /// Column label in the style of the published tables, e.g. `nnlsalg`.
    pub fn label(self) -> String {
        format!("{}alg", self.name())
    }

    /// Run a measurement-based fitter. Sequential fitting uses workload
    /// group order as its priority. `Clamp` is not one of these.
    pub fn fit(self, m: &MeasurementSet, gamma: f64, s: &SolverSettings) -> Result<FitResult, PostprocessError> {
        match self {
            Algorithm::Ols => fit_ols(m),
            Algorithm::Nnls => fit_nnls(m, s),
            Algorithm::Max => fit_max(m, s),
            Algorithm::Seq => {
                let names: Vec<&str> = m.workload().groups().iter().map(|g| g.name()).collect();
                fit_sequential(m, &names, s)
            }
            Algorithm::Weight => fit_reweighted(m, gamma, s),
            Algorithm::Simplex => fit_simplex(m),
            Algorithm::Clamp => Err(PostprocessError::Unsupported(
                "clamp draws its own noise and does not fit measurements".into(),
            )),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        let key = key.strip_suffix("alg").unwrap_or(&key);
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == key)
            .ok_or_else(|| format!("unknown algorithm {s:?}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{calibrated, measure, PrivacyBudget};
    use crate::model::{identity_group, sum_group, CountingQuery, Histogram, QueryGroup, Workload};
    use crate::rng::{stream, Lane};
    use crate::solvers::kkt_violation;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn exact(h: &Histogram, w: Workload) -> MeasurementSet {
        let w = Arc::new(w.with_noise(&vec![NoiseSpec::zero(); w.groups().len()]));
        let answers = w.queries().map(|q| q.evaluate(h).unwrap()).collect();
        MeasurementSet::new(w, answers).unwrap()
    }

    fn noisy(h: &Histogram, w: Workload, budget: PrivacyBudget, seed: u64) -> MeasurementSet {
        let w = Arc::new(calibrated(&budget, &w).unwrap());
        measure(h, &w, &mut stream(seed, 0, Lane::Measure)).unwrap()
    }

    fn with_answers(w: Workload, specs: &[NoiseSpec], answers: Vec<f64>) -> MeasurementSet {
        MeasurementSet::new(Arc::new(w.with_noise(specs)), answers).unwrap()
    }

    fn lap1() -> PrivacyBudget {
        PrivacyBudget::PureDp { epsilon: 1.0 }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(u, v)| (u - v).abs() <= tol)
    }

    #[test]
    fn noiseless_input_is_recovered_by_every_fitter() {
        let s = SolverSettings::default();
        let h1 = Histogram::one_dim(vec![10.0, 0.0, 3.0, 7.0, 0.0, 1.0]).unwrap();
        let h2 = Histogram::new((0..12).map(|i| (i % 5) as f64).collect(), vec![3, 4]).unwrap();
        for (h, w) in [(&h1, Workload::one_dim(6)), (&h2, Workload::two_dim(3, 4))] {
            let m = exact(h, w);
            for alg in Algorithm::ALL.into_iter().filter(|&a| a != Algorithm::Clamp) {
                if alg == Algorithm::Simplex && h.shape().len() == 2 {
                    continue;
                }
                let r = alg.fit(&m, 0.99, &s).unwrap();
                assert!(r.converged, "{alg}");
                assert!(close(&r.weights, h.cells(), 1e-3), "{alg}: {:?}", r.weights);
            }
            // simplex ignores the marginals but still needs sum + identity
            let r = fit_simplex(&m).unwrap();
            assert!(close(&r.weights, h.cells(), 1e-9));
        }
    }

    #[test]
    fn ols_reproduces_a_single_query() {
        let w = Workload::new(vec![identity_group(1)]).unwrap();
        let m = with_answers(w, &[NoiseSpec::laplace(2.0).unwrap()], vec![-3.5]);
        assert_eq!(fit_ols(&m).unwrap().weights, vec![-3.5]);
    }

    #[test]
    fn ols_combines_sum_and_points() {
        // sum var 8, point var 8: fitted total = (d a_sum + sum a_i) / (d + 1)
        let d = 4;
        let spec = NoiseSpec::laplace(2.0).unwrap();
        let m = with_answers(Workload::one_dim(d), &[spec, spec], vec![10.0, 1.0, 2.0, 3.0, -1.0]);
        let r = fit_ols(&m).unwrap();
        let total: f64 = r.weights.iter().sum();
        assert!((total - (4.0 * 10.0 + 5.0) / 5.0).abs() < 1e-9);
        assert!(!r.microdata);
    }

    #[test]
    fn nnls_clamps_negative_points_without_sum() {
        let w = Workload::new(vec![identity_group(3)]).unwrap();
        let m = with_answers(w, &[NoiseSpec::laplace(1.0).unwrap()], vec![-1.0, -2.0, -0.5]);
        assert_eq!(fit_nnls(&m, &SolverSettings::default()).unwrap().weights, vec![0.0; 3]);
    }

    #[test]
    fn max_fit_single_negative_answer() {
        let w = Workload::new(vec![identity_group(1)]).unwrap();
        let m = with_answers(w, &[NoiseSpec::gaussian(1.0).unwrap()], vec![-4.0]);
        let r = fit_max(&m, &SolverSettings::default()).unwrap();
        assert!((r.stage_objectives[0] - 4.0).abs() < 1e-6);
        assert_eq!(r.weights, vec![0.0]);
    }

    #[test]
    fn max_fit_objective_at_least_nnls() {
        let s = SolverSettings::default();
        for seed in 0..20 {
            let h = Histogram::one_dim(vec![5.0, 0.0, 2.0, 0.0, 1.0, 0.0]).unwrap();
            let m = noisy(&h, Workload::one_dim(6), lap1(), seed);
            let plain = fit_nnls(&m, &s).unwrap();
            let capped = fit_max(&m, &s).unwrap();
            assert!(capped.converged);
            assert!(capped.stage_objectives[1] >= plain.stage_objectives[0] - 1e-6);
            // every standardized misfit sits under the cap
            let cap = capped.stage_objectives[0] + s.linf_slack;
            for e in m.entries() {
                let r = (e.answer - e.query.dot(&capped.weights)).abs() / e.noise.std_dev();
                assert!(r <= cap + 1e-4, "seed {seed}: {r} > {cap}");
            }
        }
    }

    #[test]
    fn sequential_sum_first_is_water_filling() {
        let s = SolverSettings::default();
        for seed in 0..20 {
            let h = Histogram::one_dim(vec![50.0, 0.0, 3.0, 0.0, 1.0, 0.0, 0.0, 9.0]).unwrap();
            let m = noisy(&h, Workload::one_dim(8), lap1(), seed);
            let r = fit_sequential(&m, &[SUM_GROUP, IDENTITY_GROUP], &s).unwrap();
            assert!(r.converged);
            let a_sum = m.answers()[0].max(0.0);
            let points = &m.answers()[1..];
            let wf = simplex_water_fill(points, a_sum).unwrap();
            assert!(close(&r.weights, &wf, 5e-3), "{:?} vs {wf:?}", r.weights);
            let total: f64 = r.weights.iter().sum();
            assert!((total - a_sum).abs() <= s.eq_slack + 1e-6);
        }
    }

    #[test]
    fn sequential_skips_stages_once_cells_are_pinned() {
        let h = Histogram::new((0..9).map(|i| i as f64).collect(), vec![3, 3]).unwrap();
        let m = noisy(&h, Workload::two_dim(3, 3), lap1(), 5);
        let r = fit_sequential(&m, &["sum", "id", "marg1", "marg2"], &SolverSettings::default()).unwrap();
        assert_eq!(r.stage_objectives.len(), 2);
        assert!(r.weights.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn sequential_rejects_bad_priority() {
        let m = exact(&Histogram::one_dim(vec![1.0, 2.0]).unwrap(), Workload::one_dim(2));
        let s = SolverSettings::default();
        assert!(matches!(
            fit_sequential(&m, &["id"], &s),
            Err(PostprocessError::BadPriority(_))
        ));
        assert!(matches!(
            fit_sequential(&m, &["id", "id"], &s),
            Err(PostprocessError::BadPriority(_))
        ));
        assert!(matches!(
            fit_sequential(&m, &["id", "x"], &s),
            Err(PostprocessError::MissingGroup(_))
        ));
    }

    #[test]
    fn plan_with_huge_answers_has_no_low_set() {
        let spec = NoiseSpec::laplace(2.0).unwrap();
        let m = with_answers(Workload::one_dim(3), &[spec, spec], vec![3000.0, 1000.0, 1100.0, 900.0]);
        let plan = plan_reweight(&m, 0.99).unwrap();
        for gp in &plan.groups {
            assert_eq!(gp.j_low, 0);
            assert!(gp.low.is_empty());
        }
        let s = SolverSettings::default();
        let a = fit_reweighted(&m, 0.99, &s).unwrap();
        let b = fit_nnls(&m, &s).unwrap();
        assert!(close(&a.weights, &b.weights, 1e-6));
    }

    #[test]
    fn plan_classifies_every_query_once() {
        let h = Histogram::one_dim({
            let mut v = vec![0.0; 100];
            v[0] = 10_000.0;
            v
        })
        .unwrap();
        for seed in 0..50 {
            let m = noisy(&h, Workload::one_dim(100), lap1(), seed);
            let plan = plan_reweight(&m, 0.99).unwrap();
            let id = plan.groups.iter().find(|g| g.group == IDENTITY_GROUP).unwrap();
            assert_eq!(id.low.len() + id.high.len(), 100);
            assert_eq!(id.j_low, id.low.len());
            let mut all: Vec<usize> = id.low.iter().chain(&id.high).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..100).collect::<Vec<_>>());
            // the big cell always stands out
            assert!(id.high.contains(&0));
            assert!(id.downweight >= id.noise.std_dev());
        }
    }

    #[test]
    fn pure_noise_is_almost_all_low() {
        let h = Histogram::one_dim(vec![0.0; 100]).unwrap();
        let trials = 300;
        let mut low = 0;
        for seed in 0..trials {
            let m = noisy(&h, Workload::new(vec![identity_group(100)]).unwrap(), lap1(), seed);
            low += plan_reweight(&m, 0.99).unwrap().groups[0].j_low;
        }
        let mean = low as f64 / trials as f64;
        assert!(mean > 97.0, "{mean}");
    }

    #[test]
    fn plan_without_standout_answers_marks_all_low() {
        let spec = NoiseSpec::laplace(2.0).unwrap();
        let w = Workload::new(vec![identity_group(4)]).unwrap();
        let m = with_answers(w, &[spec], vec![0.5, -1.0, 2.0, 0.0]);
        let gp = &plan_reweight(&m, 0.99).unwrap().groups[0];
        assert_eq!(gp.cutoff, f64::INFINITY);
        assert_eq!(gp.low, vec![1, 3, 0, 2]);
        assert_eq!(gp.aggregate_support, vec![0, 1, 2, 3]);
        assert!((gp.aggregate_target - 1.5).abs() < 1e-12);
    }

    #[test]
    fn plan_ties_break_on_query_id() {
        let spec = NoiseSpec::laplace(1.0).unwrap();
        let w = Workload::new(vec![identity_group(3)]).unwrap();
        let m = with_answers(w, &[spec], vec![1.0, 1.0, 1.0]);
        assert_eq!(plan_reweight(&m, 0.99).unwrap().groups[0].low, vec![0, 1, 2]);
    }

    #[test]
    fn plan_rejects_bad_confidence() {
        let m = exact(&Histogram::one_dim(vec![1.0]).unwrap(), Workload::one_dim(1));
        assert!(plan_reweight(&m, 1.0).is_err());
        assert!(plan_reweight(&m, 0.0).is_err());
    }

    #[test]
    fn reweighted_weights_never_exceed_inverse_variance() {
        let budgets = [
            lap1(),
            PrivacyBudget::PureDp { epsilon: 5.0 },
            PrivacyBudget::Zcdp { rho: 0.5 },
            PrivacyBudget::Zcdp { rho: 10.0 },
            PrivacyBudget::ApproxDp {
                epsilon: 1.0,
                delta: 1e-6,
            },
        ];
        let h = Histogram::one_dim(vec![100.0, 0.0, 0.0, 2.0, 0.0, 30.0, 0.0, 0.0]).unwrap();
        for (k, budget) in budgets.into_iter().enumerate() {
            for seed in 0..10 {
                let m = noisy(&h, Workload::one_dim(8), budget, seed * 10 + k as u64);
                let plan = plan_reweight(&m, 0.99).unwrap();
                let max_w = plan
                    .groups
                    .iter()
                    .map(|g| 1.0 / g.noise.fit_variance())
                    .fold(0.0, f64::max);
                for t in reweight_problem(&m, &plan).terms {
                    assert!(t.weight <= max_w * (1.0 + 1e-12), "{budget:?}: {}", t.weight);
                }
                for g in &plan.groups {
                    let full = 1.0 / g.noise.fit_variance();
                    assert!(1.0 / (2.0 * g.noise.fit_variance() * g.downweight * g.downweight) <= full);
                }
            }
        }
    }

    #[test]
    fn reweighted_is_kkt_optimal_for_its_terms() {
        let h = Histogram::one_dim(vec![40.0, 0.0, 0.0, 5.0, 0.0, 0.0]).unwrap();
        let s = SolverSettings::default();
        for seed in 0..10 {
            let m = noisy(&h, Workload::one_dim(6), lap1(), seed);
            let r = fit_reweighted(&m, 0.99, &s).unwrap();
            let p = reweight_problem(&m, &plan_reweight(&m, 0.99).unwrap());
            assert!(kkt_violation(&p, &r.weights) < 1e-5);
        }
    }

    #[test]
    fn simplex_matches_clamped_sum() {
        let spec = NoiseSpec::laplace(2.0).unwrap();
        let m = with_answers(Workload::one_dim(3), &[spec, spec], vec![4.0, 3.0, -1.0, 2.0]);
        assert_eq!(fit_simplex(&m).unwrap().weights, vec![2.5, 0.0, 1.5]);
        let neg = with_answers(Workload::one_dim(3), &[spec, spec], vec![-4.0, 3.0, -1.0, 2.0]);
        assert_eq!(fit_simplex(&neg).unwrap().weights, vec![0.0; 3]);
    }

    #[test]
    fn simplex_needs_sum() {
        let w = Workload::new(vec![identity_group(2)]).unwrap();
        let m = with_answers(w, &[NoiseSpec::laplace(1.0).unwrap()], vec![1.0, 2.0]);
        assert!(matches!(fit_simplex(&m), Err(PostprocessError::MissingGroup(_))));
    }

    #[test]
    fn registry_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(a.label().parse::<Algorithm>().unwrap(), a);
        }
        assert!("lasso".parse::<Algorithm>().is_err());
        assert!(Algorithm::Clamp
            .fit(
                &exact(&Histogram::one_dim(vec![1.0]).unwrap(), Workload::one_dim(1)),
                0.99,
                &SolverSettings::default()
            )
            .is_err());
    }

    /// Workload over permuted cells: identity query `k` indicates cell `perm[k]`.
    fn permuted_workload(perm: &[usize]) -> Workload {
        let d = perm.len();
        let ids = perm
            .iter()
            .enumerate()
            .map(|(k, &c)| CountingQuery::from_cells(format!("id[{k}]"), d, [c]))
            .collect();
        Workload::new(vec![sum_group(d), QueryGroup::new(IDENTITY_GROUP, ids).unwrap()]).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn fitters_are_permutation_equivariant(
            answers in prop::collection::vec(-5.0f64..30.0, 7),
            perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
        ) {
            let s = SolverSettings::default();
            let spec = NoiseSpec::laplace(2.0).unwrap();
            let base = with_answers(Workload::one_dim(6), &[spec, spec], answers.clone());
            let moved = with_answers(permuted_workload(&perm), &[spec, spec], answers);
            for alg in [Algorithm::Ols, Algorithm::Nnls, Algorithm::Max, Algorithm::Seq, Algorithm::Weight, Algorithm::Simplex] {
                let x = alg.fit(&base, 0.99, &s).unwrap().weights;
                let y = alg.fit(&moved, 0.99, &s).unwrap().weights;
                for (i, &c) in perm.iter().enumerate() {
                    prop_assert!((x[i] - y[c]).abs() < 1e-4, "{}: {:?} vs {:?}", alg, x, y);
                }
            }
        }

        #[test]
        fn non_ols_fitters_are_nonnegative(answers in prop::collection::vec(-20.0f64..20.0, 6)) {
            let s = SolverSettings::default();
            let spec = NoiseSpec::laplace(2.0).unwrap();
            let m = with_answers(Workload::one_dim(5), &[spec, spec], answers.clone());
            for alg in [Algorithm::Nnls, Algorithm::Max, Algorithm::Seq, Algorithm::Weight, Algorithm::Simplex] {
                let r = alg.fit(&m, 0.99, &s).unwrap();
                prop_assert!(r.microdata);
                prop_assert!(r.weights.iter().all(|&v| v >= 0.0));
            }
            let total: f64 = fit_simplex(&m).unwrap().weights.iter().sum();
            prop_assert!((total - answers[0].max(0.0)).abs() <= 1e-10 * answers[0].abs().max(1.0));
        }
    }
}
