//! Monte-Carlo experiment runner: measure once per trial, fit with every
//! requested algorithm, and aggregate per-query squared errors.

mod demo;
mod table;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchdata::{self, DataError, DatasetSpec};
use crate::mechanisms::{calibrated, clamp_mechanism, measure, MeasurementSet, MechanismError, PrivacyBudget};
use crate::model::{Histogram, ModelError, Workload};
use crate::postprocess::Algorithm;
use crate::rng::{stream, Lane};
use crate::solvers::SolverSettings;

pub use demo::{uncertainty_demo, DemoRow, UncertaintySummary};
pub use table::{emit_table, parse_csv, render_markdown, Metric, TableFormat, TableRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed results table: {0}")]
    Table(String),
}

impl HarnessError {
    /// True for failures reading or writing files, as opposed to bad input.
    pub fn is_io(&self) -> bool {
        matches!(self, HarnessError::Io { .. } | HarnessError::Data(DataError::Io { .. }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadKind {
    #[serde(rename = "1d")]
    OneDim,
    #[serde(rename = "2d")]
    TwoDim,
}

fn default_trials() -> usize {
    1000
}

fn default_gamma() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Defaults to the dataset's dimensionality.
    #[serde(default)]
    pub workload: Option<WorkloadKind>,
    pub budget: PrivacyBudget,
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms listed".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0,1), got {}", self.gamma));
        }
        self.solver
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.budget.validate()?;
        if self.algorithms.contains(&Algorithm::Clamp) && matches!(self.budget, PrivacyBudget::ApproxDp { .. }) {
            return bad("clamp has no approximate-DP variant".into());
        }
        if self.algorithms.contains(&Algorithm::Simplex) && self.workload_kind() == WorkloadKind::TwoDim {
            return bad("simplex fits the 1d workload only".into());
        }
        Ok(())
    }

    pub fn workload_kind(&self) -> WorkloadKind {
        self.workload.unwrap_or(if self.dataset.dims == 2 {
            WorkloadKind::TwoDim
        } else {
            WorkloadKind::OneDim
        })
    }
}

/// Everything a trial needs, built once per run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub histogram: Histogram,
    pub workload: Arc<Workload>,
    /// True answer of every workload query, in workload order.
    pub truth: Vec<f64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let histogram = benchdata::generate(&config.dataset)?;
        let plain = match config.workload_kind() {
            WorkloadKind::OneDim => Workload::one_dim(histogram.len()),
            WorkloadKind::TwoDim => match histogram.shape() {
                &[r, c] => Workload::two_dim(r, c),
                other => {
                    return Err(HarnessError::Config(format!(
                        "2d workload needs a 2-D dataset, got shape {other:?}"
                    )))
                }
            },
        };
        let workload = calibrated(&config.budget, &plain)?;
        Self::with_workload(config, histogram, workload)
    }

    /// Use an explicit, already calibrated workload (e.g. zero noise).
    pub fn with_workload(
        config: ExperimentConfig,
        histogram: Histogram,
        workload: Workload,
    ) -> Result<Self, HarnessError> {
        config.validate()?;
        if workload.cells() != histogram.len() {
            return Err(HarnessError::Config("workload and dataset differ in cell count".into()));
        }
        let truth = workload.queries().map(|q| q.dot(histogram.cells())).collect();
        Ok(Self {
            config,
            histogram,
            workload: Arc::new(workload),
            truth,
        })
    }

    /// One trial: a single measurement shared by every algorithm.
    pub fn trial(&self, t: u64) -> Result<TrialRecord, HarnessError> {
        let cfg = &self.config;
        let m = measure(&self.histogram, &self.workload, &mut stream(cfg.seed, t, Lane::Measure))?;
        let mut outcomes = Vec::with_capacity(cfg.algorithms.len());
        for &alg in &cfg.algorithms {
            let weights = match alg {
                Algorithm::Clamp => {
                    let mut rng = stream(cfg.seed, t, Lane::Mechanism);
                    Some(clamp_mechanism(&self.histogram, &cfg.budget, &mut rng)?.into_cells())
                }
                _ => match alg.fit(&m, cfg.gamma, &cfg.solver) {
                    Ok(r) if r.converged => Some(r.weights),
                    _ => None,
                },
            };
            outcomes.push(AlgorithmOutcome {
                algorithm: alg,
                measurement_hash: measurement_hash(&m),
                sq_errors: weights.map(|x| self.squared_errors(&x)),
            });
        }
        Ok(TrialRecord {
            trial: t,
            measurement_hash: measurement_hash(&m),
            outcomes,
        })
    }

    fn squared_errors(&self, x: &[f64]) -> Vec<f64> {
        self.workload
            .queries()
            .zip(&self.truth)
            .map(|(q, &t)| {
                let e = t - q.dot(x);
                e * e
            })
            .collect()
    }
}

/// Hash of the bit patterns of a measurement set's answers.
pub fn measurement_hash(m: &MeasurementSet) -> u64 {
    let mut h = DefaultHasher::new();
    for a in m.answers() {
        a.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Clone)]
pub struct AlgorithmOutcome {
    pub algorithm: Algorithm,
    /// Hash of the measurements this algorithm was handed.
    pub measurement_hash: u64,
    /// Squared error per workload query; `None` if the fit failed or did
    /// not converge.
    pub sq_errors: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: u64,
    pub measurement_hash: u64,
    pub outcomes: Vec<AlgorithmOutcome>,
}

/// Error summary for one algorithm on one query group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub algorithm: Algorithm,
    pub group: String,
    /// Mean squared error of each query in the group.
    pub per_query: Vec<f64>,
    pub total: f64,
    pub max: f64,
    pub argmax: usize,
    pub stderr_total: f64,
    pub stderr_max: f64,
    pub trials_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub dataset: String,
    pub mechanism: String,
    pub budget: String,
    pub trials: usize,
    pub groups: Vec<GroupError>,
}

impl ErrorReport {
    pub fn get(&self, algorithm: Algorithm, group: &str) -> Option<&GroupError> {
        self.groups
            .iter()
            .find(|g| g.algorithm == algorithm && g.group == group)
    }

    /// Algorithms for which no trial produced a usable fit.
    pub fn failed_algorithms(&self) -> Vec<Algorithm> {
        let mut out: Vec<Algorithm> = self
            .groups
            .iter()
            .filter(|g| g.trials_used == 0)
            .map(|g| g.algorithm)
            .collect();
        out.dedup();
        out
    }

    pub fn rows(&self) -> Vec<TableRow> {
        let mut rows = Vec::with_capacity(2 * self.groups.len());
        for g in &self.groups {
            for (metric, value, stderr) in [
                (Metric::Total, g.total, g.stderr_total),
                (Metric::Max, g.max, g.stderr_max),
            ] {
                rows.push(TableRow {
                    dataset: self.dataset.clone(),
                    mechanism: self.mechanism.clone(),
                    budget: self.budget.clone(),
                    algorithm: g.algorithm.label(),
                    query_group: g.group.clone(),
                    metric,
                    value,
                    stderr,
                    trials_used: g.trials_used,
                });
            }
        }
        rows
    }
}

/// Standard error of the mean of `samples`: sample standard deviation over
/// `sqrt(n)`. Needs at least two samples.
pub fn summarize_stderr(samples: &[f64]) -> Result<f64, HarnessError> {
    let n = samples.len();
    if n < 2 {
        return Err(HarnessError::Config(format!(
            "standard error needs at least 2 trials, got {n}"
        )));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let ss: f64 = samples.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

/// Run every trial of `config`, on `threads` workers if given.
pub fn run(config: &ExperimentConfig, threads: Option<usize>) -> Result<ErrorReport, HarnessError> {
    run_experiment(&Experiment::new(config.clone())?, threads)
}

pub fn run_experiment(exp: &Experiment, threads: Option<usize>) -> Result<ErrorReport, HarnessError> {
    let records = run_trials(exp, threads)?;
    Ok(aggregate(exp, &records))
}

/// Per-trial records in trial order.
pub fn run_trials(exp: &Experiment, threads: Option<usize>) -> Result<Vec<TrialRecord>, HarnessError> {
    let trials = exp.config.trials as u64;
    let work = || {
        (0..trials)
            .into_par_iter()
            .map(|t| exp.trial(t))
            .collect::<Result<Vec<_>, _>>()
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Fold trial records into per-group statistics. Sums run in trial order,
/// so the result does not depend on how trials were scheduled.
pub fn aggregate(exp: &Experiment, records: &[TrialRecord]) -> ErrorReport {
    let cfg = &exp.config;
    let mut ranges = Vec::new();
    let mut start = 0;
    for g in exp.workload.groups() {
        ranges.push((g.name().to_string(), start..start + g.queries().len()));
        start += g.queries().len();
    }

    let mut groups = Vec::new();
    for (k, &alg) in cfg.algorithms.iter().enumerate() {
        let used: Vec<&Vec<f64>> = records
            .iter()
            .filter_map(|r| r.outcomes[k].sq_errors.as_ref())
            .collect();
        let n = used.len();
        for (name, range) in &ranges {
            let per_query: Vec<f64> = range
                .clone()
                .map(|i| {
                    if n == 0 {
                        f64::NAN
                    } else {
                        used.iter().map(|e| e[i]).sum::<f64>() / n as f64
                    }
                })
                .collect();
            let total = per_query.iter().sum();
            let (argmax, max) = per_query
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, v)| if v > best.1 { (i, v) } else { best },
                );
            let max = if n == 0 { f64::NAN } else { max };
            let totals: Vec<f64> = used.iter().map(|e| e[range.clone()].iter().sum()).collect();
            let at_max: Vec<f64> = used.iter().map(|e| e[range.start + argmax]).collect();
            groups.push(GroupError {
                algorithm: alg,
                group: name.clone(),
                per_query,
                total,
                max,
                argmax,
                stderr_total: summarize_stderr(&totals).unwrap_or(f64::NAN),
                stderr_max: summarize_stderr(&at_max).unwrap_or(f64::NAN),
                trials_used: n,
            });
        }
    }
    ErrorReport {
        dataset: cfg.dataset.label(),
        mechanism: cfg.budget.mechanism_name().to_string(),
        budget: cfg.budget.label(),
        trials: cfg.trials,
        groups,
    }
}
