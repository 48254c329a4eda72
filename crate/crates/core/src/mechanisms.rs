//! Noise distributions, budget calibration and the measurement step.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::model::{self, Histogram, ModelError, Workload};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechanismError {
    #[error("invalid noise parameter: {0}")]
    InvalidNoise(String),
    #[error("invalid privacy budget: {0}")]
    InvalidBudget(String),
    #[error("group `{0}` has no calibrated noise")]
    Uncalibrated(String),
    #[error("{0} is not supported by the clamp mechanism")]
    UnsupportedBudget(&'static str),
    #[error("expected {expected} answers, got {actual}")]
    AnswerCount { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Shape of a noise distribution together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Laplace {
        scale: f64,
    },
    Gaussian {
        variance: f64,
    },
    /// Two-sided geometric with pmf proportional to `exp(-rate*|k|)`.
    DGeo {
        rate: f64,
    },
    /// Two-sided geometric whose tails beyond `±bound` are folded onto `±bound`.
    TDGeo {
        rate: f64,
        bound: u64,
    },
    /// Discrete Gaussian on the integers with parameter `variance`.
    DGauss {
        variance: f64,
    },
    /// Point mass at zero; never produced by calibration.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    kind: NoiseKind,
    variance: f64,
}

fn positive(name: &str, v: f64) -> Result<f64, MechanismError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(MechanismError::InvalidNoise(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl NoiseSpec {
    pub fn laplace(scale: f64) -> Result<Self, MechanismError> {
        let b = positive("laplace scale", scale)?;
        Ok(Self {
            kind: NoiseKind::Laplace { scale: b },
            variance: 2.0 * b * b,
        })
    }

    pub fn gaussian(variance: f64) -> Result<Self, MechanismError> {
        let v = positive("gaussian variance", variance)?;
        Ok(Self {
            kind: NoiseKind::Gaussian { variance: v },
            variance: v,
        })
    }

    pub fn dgeo(rate: f64) -> Result<Self, MechanismError> {
        let e = positive("geometric rate", rate)?;
        let r = (-e).exp();
        Ok(Self {
            kind: NoiseKind::DGeo { rate: e },
            variance: 2.0 * r / ((1.0 - r) * (1.0 - r)),
        })
    }

    pub fn tdgeo(rate: f64, bound: u64) -> Result<Self, MechanismError> {
        let e = positive("geometric rate", rate)?;
        if bound == 0 {
            return Err(MechanismError::InvalidNoise(
                "truncation bound must be at least 1".into(),
            ));
        }
        let mut spec = Self {
            kind: NoiseKind::TDGeo { rate: e, bound },
            variance: 0.0,
        };
        // symmetric, so the variance is twice the positive half of sum k^2 p(k)
        spec.variance = 2.0 * (1..=bound as i64).map(|k| (k * k) as f64 * spec.pmf(k)).sum::<f64>();
        Ok(spec)
    }

    pub fn dgauss(variance: f64) -> Result<Self, MechanismError> {
        let s2 = positive("discrete gaussian variance", variance)?;
        let kmax = dgauss_support_radius(s2);
        let (mut z, mut m2) = (1.0, 0.0);
        for k in 1..=kmax {
            let w = (-((k * k) as f64) / (2.0 * s2)).exp();
            z += 2.0 * w;
            m2 += 2.0 * (k * k) as f64 * w;
        }
        Ok(Self {
            kind: NoiseKind::DGauss { variance: s2 },
            variance: m2 / z,
        })
    }

    /// Noiseless spec for deterministic tests and debugging.
    pub fn zero() -> Self {
        Self {
            kind: NoiseKind::Zero,
            variance: 0.0,
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Variance used to weight least-squares terms. The zero spec falls
    /// back to unit weight since any positive weight is exact without noise.
    pub fn fit_variance(&self) -> f64 {
        if self.variance > 0.0 {
            self.variance
        } else {
            1.0
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self.kind,
            NoiseKind::DGeo { .. } | NoiseKind::TDGeo { .. } | NoiseKind::DGauss { .. } | NoiseKind::Zero
        )
    }

    /// Probability mass at integer `k` (discrete kinds only; 0 otherwise).
    pub fn pmf(&self, k: i64) -> f64 {
        match self.kind {
            NoiseKind::DGeo { rate } => {
                let r = (-rate).exp();
                (1.0 - r) / (1.0 + r) * (-rate * k.unsigned_abs() as f64).exp()
            }
            NoiseKind::TDGeo { rate, bound } => {
                let a = k.unsigned_abs();
                let r = (-rate).exp();
                if a > bound {
                    0.0
                } else if a == bound {
                    (-rate * bound as f64).exp() / (1.0 + r)
                } else {
                    (1.0 - r) / (1.0 + r) * (-rate * a as f64).exp()
                }
            }
            NoiseKind::DGauss { variance } => {
                let kmax = dgauss_support_radius(variance);
                let z: f64 = 1.0
                    + 2.0
                        * (1..=kmax)
                            .map(|j| (-((j * j) as f64) / (2.0 * variance)).exp())
                            .sum::<f64>();
                (-((k * k) as f64) / (2.0 * variance)).exp() / z
            }
            NoiseKind::Zero if k == 0 => 1.0,
            _ => 0.0,
        }
    }

    /// P(X <= t).
    pub fn cdf(&self, t: f64) -> f64 {
        1.0 - self.sf(t)
    }

    /// P(X > t), computed without cancellation in the upper tail.
    pub fn sf(&self, t: f64) -> f64 {
        if t.is_nan() {
            return f64::NAN;
        }
        match self.kind {
            NoiseKind::Laplace { scale } => {
                if t >= 0.0 {
                    0.5 * (-t / scale).exp()
                } else {
                    1.0 - 0.5 * (t / scale).exp()
                }
            }
            NoiseKind::Gaussian { variance } => {
                let n = Normal::new(0.0, variance.sqrt()).expect("valid normal");
                n.sf(t)
            }
            _ => {
                if t == f64::INFINITY {
                    return 0.0;
                }
                if t == f64::NEG_INFINITY {
                    return 1.0;
                }
                self.discrete_sf_int(t.floor() as i64)
            }
        }
    }

    /// P(X >= t): the strict-below complement used for exceedance.
    pub fn sf_inclusive(&self, t: f64) -> f64 {
        if self.is_discrete() && t.is_finite() {
            self.discrete_sf_int(t.ceil() as i64 - 1)
        } else {
            self.sf(t)
        }
    }

    /// P(X > k) for integer k.
    fn discrete_sf_int(&self, k: i64) -> f64 {
        match self.kind {
            NoiseKind::DGeo { rate } => dgeo_sf(rate, k),
            NoiseKind::TDGeo { rate, bound } => {
                let b = bound as i64;
                if k >= b {
                    0.0
                } else if k < -b {
                    1.0
                } else {
                    dgeo_sf(rate, k)
                }
            }
            NoiseKind::DGauss { variance } => {
                let kmax = dgauss_support_radius(variance) as i64;
                if k >= kmax {
                    return 0.0;
                }
                if k < -kmax {
                    return 1.0;
                }
                if k >= 0 {
                    ((k + 1)..=kmax).map(|j| self.pmf(j)).sum()
                } else {
                    1.0 - ((-kmax)..=k).map(|j| self.pmf(j)).sum::<f64>()
                }
            }
            NoiseKind::Zero => {
                if k >= 0 {
                    0.0
                } else {
                    1.0
                }
            }
            _ => unreachable!("continuous kinds handled by sf"),
        }
    }

    /// Smallest `t` with `P(X <= t) >= u`; `upper` is `1-u`, passed separately
    /// so tail quantiles keep full precision.
    pub fn quantile(&self, u: f64, upper: f64) -> f64 {
        match self.kind {
            NoiseKind::Laplace { scale } => {
                if u > 0.5 {
                    -scale * (2.0 * upper).ln()
                } else {
                    scale * (2.0 * u).ln()
                }
            }
            NoiseKind::Gaussian { variance } => {
                let n = Normal::new(0.0, variance.sqrt()).expect("valid normal");
                if u > 0.5 {
                    -n.inverse_cdf(upper)
                } else {
                    n.inverse_cdf(u)
                }
            }
            _ => {
                // sf is nonincreasing; find the smallest integer k with sf(k) <= upper
                let (mut lo, mut hi) = (-1i64, 1i64);
                while self.discrete_sf_int(lo) <= upper {
                    lo *= 2;
                }
                while self.discrete_sf_int(hi) > upper {
                    hi *= 2;
                }
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if self.discrete_sf_int(mid) <= upper {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                hi as f64
            }
        }
    }

    /// One draw. Discrete kinds return integral values.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Laplace { scale } => sample_laplace(scale, rng),
            NoiseKind::Gaussian { variance } => {
                let z: f64 = StandardNormal.sample(rng);
                z * variance.sqrt()
            }
            NoiseKind::DGeo { rate } => sample_dgeo(rate, rng) as f64,
            NoiseKind::TDGeo { rate, bound } => {
                let b = bound as i64;
                sample_dgeo(rate, rng).clamp(-b, b) as f64
            }
            NoiseKind::DGauss { variance } => sample_dgauss(variance, rng) as f64,
            NoiseKind::Zero => 0.0,
        }
    }
}

/// Draw from `spec`.
pub fn sample<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> f64 {
    spec.sample(rng)
}

fn dgeo_sf(rate: f64, k: i64) -> f64 {
    let r = (-rate).exp();
    if k >= 0 {
        (-rate * (k + 1) as f64).exp() / (1.0 + r)
    } else {
        1.0 - (-rate * (-k) as f64).exp() / (1.0 + r)
    }
}

fn dgauss_support_radius(variance: f64) -> u64 {
    (14.0 * variance.sqrt()).ceil().max(12.0) as u64
}

fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u == 0.0 {
            continue;
        }
        return if u < 0.5 {
            scale * (2.0 * u).ln()
        } else {
            -scale * (2.0 * (1.0 - u)).ln()
        };
    }
}

fn sample_dgeo<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> i64 {
    let g = Geometric::new(-(-rate).exp_m1()).expect("success probability in (0,1)");
    g.sample(rng) as i64 - g.sample(rng) as i64
}

// Rejection sampler of Canonne, Kamath and Steinke: discrete Laplace proposal
// with scale t = floor(sigma)+1, accepted with prob exp(-(|y| - s2/t)^2 / (2 s2)).
fn sample_dgauss<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> i64 {
    let t = variance.sqrt().floor() + 1.0;
    loop {
        let y = sample_dgeo(1.0 / t, rng);
        let d = y.unsigned_abs() as f64 - variance / t;
        let accept = (-(d * d) / (2.0 * variance)).exp();
        if rng.random::<f64>() < accept {
            return y;
        }
    }
}

/// Privacy definition and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrivacyBudget {
    PureDp { epsilon: f64 },
    Zcdp { rho: f64 },
    ApproxDp { epsilon: f64, delta: f64 },
}

impl PrivacyBudget {
    pub fn validate(&self) -> Result<(), MechanismError> {
        let bad = |m: String| Err(MechanismError::InvalidBudget(m));
        match *self {
            PrivacyBudget::PureDp { epsilon } if !(epsilon.is_finite() && epsilon > 0.0) => {
                bad(format!("epsilon must be positive, got {epsilon}"))
            }
            PrivacyBudget::Zcdp { rho } if !(rho.is_finite() && rho > 0.0) => {
                bad(format!("rho must be positive, got {rho}"))
            }
            PrivacyBudget::ApproxDp { epsilon, delta } => {
                if !(epsilon.is_finite() && epsilon > 0.0) {
                    bad(format!("epsilon must be positive, got {epsilon}"))
                } else if !(delta > 0.0 && delta < 1.0) {
                    bad(format!("delta must lie in (0,1), got {delta}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Short label used in report rows, e.g. `eps=1` or `rho=0.5`.
    pub fn label(&self) -> String {
        match *self {
            PrivacyBudget::PureDp { epsilon } => format!("eps={epsilon}"),
            PrivacyBudget::Zcdp { rho } => format!("rho={rho}"),
            PrivacyBudget::ApproxDp { epsilon, delta } => format!("eps={epsilon},delta={delta}"),
        }
    }

    pub fn mechanism_name(&self) -> &'static str {
        match self {
            PrivacyBudget::PureDp { .. } => "laplace",
            PrivacyBudget::Zcdp { .. } => "gaussian",
            PrivacyBudget::ApproxDp { .. } => "tdgeo",
        }
    }
}

/// Truncation bound for the approximate-DP calibration at rate `epsilon/2`.
pub fn tdgeo_bound(epsilon: f64, delta: f64) -> u64 {
    ((2.0 / epsilon) * (4.0 / delta).ln() + 1.0).ceil() as u64
}

/// Noise spec for every group of `w` under `budget`, parallel to `w.groups()`.
pub fn calibrate(budget: &PrivacyBudget, w: &Workload) -> Result<Vec<NoiseSpec>, MechanismError> {
    budget.validate()?;
    let spec = match *budget {
        PrivacyBudget::PureDp { epsilon } => NoiseSpec::laplace(model::l1_sensitivity(w)? / epsilon)?,
        PrivacyBudget::Zcdp { rho } => {
            let d2 = model::l2_sensitivity(w)?;
            NoiseSpec::gaussian(d2 * d2 / (2.0 * rho))?
        }
        PrivacyBudget::ApproxDp { epsilon, delta } => {
            model::l1_sensitivity(w)?;
            NoiseSpec::tdgeo(epsilon / 2.0, tdgeo_bound(epsilon, delta))?
        }
    };
    Ok(vec![spec; w.groups().len()])
}

/// `w` with every group's noise set by `calibrate`.
pub fn calibrated(budget: &PrivacyBudget, w: &Workload) -> Result<Workload, MechanismError> {
    Ok(w.with_noise(&calibrate(budget, w)?))
}

/// One noisy answer of the workload.
#[derive(Debug, Clone, Copy)]
pub struct Measurement<'a> {
    pub group: &'a model::QueryGroup,
    pub query: &'a model::CountingQuery,
    pub answer: f64,
    pub noise: &'a NoiseSpec,
}

/// Noisy answers for every query of a calibrated workload, in workload order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    workload: Arc<Workload>,
    answers: Vec<f64>,
}

impl MeasurementSet {
    pub fn new(workload: Arc<Workload>, answers: Vec<f64>) -> Result<Self, MechanismError> {
        for g in workload.groups() {
            if g.noise().is_none() {
                return Err(MechanismError::Uncalibrated(g.name().to_string()));
            }
        }
        if answers.len() != workload.num_queries() {
            return Err(MechanismError::AnswerCount {
                expected: workload.num_queries(),
                actual: answers.len(),
            });
        }
        Ok(Self { workload, answers })
    }

    pub fn workload(&self) -> &Workload {
        &self.workload
    }

    pub fn workload_arc(&self) -> &Arc<Workload> {
        &self.workload
    }

    pub fn answers(&self) -> &[f64] {
        &self.answers
    }

    pub fn cells(&self) -> usize {
        self.workload.cells()
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = Measurement<'_>> {
        self.workload
            .groups()
            .iter()
            .flat_map(|g| g.queries().iter().map(move |q| (g, q)))
            .zip(&self.answers)
            .map(|((group, query), &answer)| Measurement {
                group,
                query,
                answer,
                noise: group.noise().expect("checked at construction"),
            })
    }

    /// Entries belonging to the named group.
    pub fn group_entries<'a>(&'a self, name: &'a str) -> impl Iterator<Item = Measurement<'a>> + 'a {
        self.entries().filter(move |m| m.group.name() == name)
    }
}

/// True answers plus one independent draw per query from its group's spec.
pub fn measure<R: Rng + ?Sized>(
    h: &Histogram,
    w: &Arc<Workload>,
    rng: &mut R,
) -> Result<MeasurementSet, MechanismError> {
    let mut answers = Vec::with_capacity(w.num_queries());
    for g in w.groups() {
        let spec = g
            .noise()
            .ok_or_else(|| MechanismError::Uncalibrated(g.name().to_string()))?;
        for q in g.queries() {
            answers.push(q.evaluate(h)? + spec.sample(rng));
        }
    }
    MeasurementSet::new(Arc::clone(w), answers)
}

/// Noise the point counts directly and clamp at zero, without a sum query.
pub fn clamp_mechanism<R: Rng + ?Sized>(
    h: &Histogram,
    budget: &PrivacyBudget,
    rng: &mut R,
) -> Result<Histogram, MechanismError> {
    budget.validate()?;
    let spec = match *budget {
        PrivacyBudget::PureDp { epsilon } => NoiseSpec::dgeo(epsilon)?,
        PrivacyBudget::Zcdp { rho } => NoiseSpec::dgauss(1.0 / (2.0 * rho))?,
        PrivacyBudget::ApproxDp { .. } => return Err(MechanismError::UnsupportedBudget("approximate DP")),
    };
    let cells = h.cells().iter().map(|&c| (c + spec.sample(rng)).max(0.0)).collect();
    Ok(Histogram::new(cells, h.shape().to_vec())?)
}
