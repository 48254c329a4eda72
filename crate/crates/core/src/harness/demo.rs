use std::sync::Arc;

use rayon::prelude::*;

use super::{summarize_stderr, HarnessError};
use crate::benchdata::generate_difficult;
use crate::mechanisms::{calibrated, clamp_mechanism, measure, MeasurementSet, PrivacyBudget};
use crate::model::{identity_group, Workload, IDENTITY_GROUP};
use crate::postprocess::{fit_nnls, fit_simplex};
use crate::rng::{stream, Lane};
use crate::solvers::SolverSettings;

/// Errors of one method on the difficult dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoRow {
    pub method: &'static str,
    /// Largest per-cell mean squared error.
    pub c2: f64,
    pub c2_stderr: f64,
    /// Mean squared error of the total.
    pub d2: f64,
    pub d2_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintySummary {
    pub d: usize,
    pub epsilon: f64,
    pub trials: usize,
    /// Variance of the Laplace noise on every measured query, `8 / eps^2`.
    pub baseline: f64,
    pub rows: Vec<DemoRow>,
}

impl UncertaintySummary {
    pub fn row(&self, method: &str) -> Option<&DemoRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "difficult dataset d={} eps={} trials={} baseline 8/eps^2={}\n",
            self.d, self.epsilon, self.trials, self.baseline
        );
        s.push_str("method,C2,C2_stderr,D2,D2_stderr\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.method, r.c2, r.c2_stderr, r.d2, r.d2_stderr
            ));
        }
        s
    }
}

pub const DEMO_METHODS: [&str; 3] = ["simplex", "nnls-nosum", "clamp"];

/// Trade-off between per-cell error (C²) and total error (D²) on a
/// dataset with a single small nonzero cell: the simplex projection keeps
/// the total accurate and pays on the cells, clamped point counts do the
/// opposite.
pub fn uncertainty_demo(d: usize, epsilon: f64, trials: usize, seed: u64) -> Result<UncertaintySummary, HarnessError> {
    if trials < 2 {
        return Err(HarnessError::Config("the demo needs at least 2 trials".into()));
    }
    let h = generate_difficult(d, epsilon)?;
    let budget = PrivacyBudget::PureDp { epsilon };
    let w = Arc::new(calibrated(&budget, &Workload::one_dim(d))?);
    let points_only = Arc::new(
        Workload::new(vec![identity_group(d)])?
            .with_noise(&[*w.group(IDENTITY_GROUP).and_then(|g| g.noise()).expect("calibrated")]),
    );
    let settings = SolverSettings::default();
    let truth = h.cells().to_vec();
    let total = h.total();

    // per trial and method: squared error of each cell, then of the total
    let per_trial: Vec<[Vec<f64>; 3]> = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<[Vec<f64>; 3], HarnessError> {
            let m = measure(&h, &w, &mut stream(seed, t, Lane::Measure))?;
            let simplex = fit_simplex(&m)
                .map_err(|e| HarnessError::Config(e.to_string()))?
                .weights;
            let ids: Vec<f64> = m.group_entries(IDENTITY_GROUP).map(|e| e.answer).collect();
            let ms = MeasurementSet::new(Arc::clone(&points_only), ids)?;
            let nosum = fit_nnls(&ms, &settings)
                .map_err(|e| HarnessError::Config(e.to_string()))?
                .weights;
            let clamp = clamp_mechanism(&h, &budget, &mut stream(seed, t, Lane::Mechanism))?.into_cells();
            let errs = |x: Vec<f64>| -> Vec<f64> {
                let mut e: Vec<f64> = x.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).collect();
                let s: f64 = x.iter().sum();
                e.push((s - total) * (s - total));
                e
            };
            Ok([errs(simplex), errs(nosum), errs(clamp)])
        })
        .collect::<Result<_, _>>()?;

    let n = trials as f64;
    let mut rows = Vec::new();
    for (k, method) in DEMO_METHODS.into_iter().enumerate() {
        let mean = |i: usize| per_trial.iter().map(|r| r[k][i]).sum::<f64>() / n;
        let column = |i: usize| per_trial.iter().map(|r| r[k][i]).collect::<Vec<f64>>();
        let (argmax, c2) = (0..d)
            .map(|i| (i, mean(i)))
            .fold((0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b });
        rows.push(DemoRow {
            method,
            c2,
            c2_stderr: summarize_stderr(&column(argmax))?,
            d2: mean(d),
            d2_stderr: summarize_stderr(&column(d))?,
        });
    }
    Ok(UncertaintySummary {
        d,
        epsilon,
        trials,
        baseline: 8.0 / (epsilon * epsilon),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_noise_gives_tiny_errors() {
        let s = uncertainty_demo(20, 1e6, 10, 1).unwrap();
        for r in &s.rows {
            assert!(r.c2 < 1e-6 && r.d2 < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn two_cells_keep_both_penalties_small() {
        let s = uncertainty_demo(2, 1.0, 400, 3).unwrap();
        let r = s.row("simplex").unwrap();
        assert!(r.c2 < 2.0 * s.baseline && r.d2 < 2.0 * s.baseline, "{r:?}");
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(
            uncertainty_demo(10, 1.0, 50, 4).unwrap(),
            uncertainty_demo(10, 1.0, 50, 4).unwrap()
        );
    }
}
