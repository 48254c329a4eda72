//! Differentially private measurement of counting-query workloads over
//! histograms, and postprocessing of the noisy answers into nonnegative
//! weighted histograms.

pub mod benchdata;
pub mod harness;
pub mod mechanisms;
pub mod model;
pub mod postprocess;
pub mod rng;
pub mod solvers;

pub use mechanisms::{MeasurementSet, NoiseSpec, PrivacyBudget};
pub use model::{CountingQuery, Histogram, QueryGroup, Workload};
pub use solvers::SolverSettings;
