//! Anytime algorithms, problem instances, and recorded best-so-far
//! trajectories.
//!
//! A trajectory keeps only the improvement points of a run: sample times are
//! strictly increasing and values strictly decreasing, so evaluating it at
//! any budget is a step-function lookup. A run that crashed (or never
//! produced a value) is stored with an empty sample list — it participates
//! in rankings as "no value yet", which sorts below every algorithm that
//! has one.

use crate::error::{Error, Result};
use crate::float::Float;

/// Value of a trajectory at a queried budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueAt<F> {
    /// Best objective value found by the queried time.
    Value(F),
    /// The run was alive but had not produced any value yet.
    NoneYet,
}

/// One run of one algorithm on one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    pub algorithm_id: String,
    pub instance_id: String,
    pub seed: u64,
    /// (time, best-so-far value), times strictly increasing, values strictly
    /// decreasing. Empty for failed runs.
    pub samples: Vec<(F, F)>,
    /// Budget the run actually executed to; at least the last sample time.
    pub horizon: F,
}

impl<F: Float> Trajectory<F> {
    pub fn new(
        algorithm_id: impl Into<String>,
        instance_id: impl Into<String>,
        seed: u64,
        samples: Vec<(F, F)>,
        horizon: F,
    ) -> Result<Self> {
        let algorithm_id = algorithm_id.into();
        let instance_id = instance_id.into();
        let fail = |reason: &str| Error::Trajectory {
            algorithm: algorithm_id.clone(),
            instance: instance_id.clone(),
            reason: reason.to_string(),
        };
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(fail("sample times must be strictly increasing"));
            }
            if !(w[1].1 <= w[0].1) {
                return Err(fail("best-so-far values must be non-increasing"));
            }
        }
        if let Some(last) = samples.last() {
            if horizon < last.0 {
                return Err(fail("horizon precedes last sample time"));
            }
        }
        Ok(Self {
            algorithm_id,
            instance_id,
            seed,
            samples,
            horizon,
        })
    }

    /// A run that produced no values (crashed or was interrupted before the
    /// first evaluation completed). Ranks worst at every timepoint it covers.
    pub fn failed(
        algorithm_id: impl Into<String>,
        instance_id: impl Into<String>,
        seed: u64,
        horizon: F,
    ) -> Self {
        Self {
            algorithm_id: algorithm_id.into(),
            instance_id: instance_id.into(),
            seed,
            samples: Vec::new(),
            horizon,
        }
    }

    /// Step-function lookup of the best-so-far value at budget `t`.
    ///
    /// Returns `NoneYet` when `t` precedes the first recorded sample, and an
    /// error when `t` lies beyond the executed horizon (the run simply was
    /// not observed there).
    pub fn evaluate_at(&self, t: F) -> Result<ValueAt<F>> {
        if t > self.horizon {
            return Err(Error::BudgetExceeded {
                requested: t.to64(),
                horizon: self.horizon.to64(),
            });
        }
        let mut best = None;
        for &(st, sv) in &self.samples {
            if st <= t {
                best = Some(sv);
            } else {
                break;
            }
        }
        Ok(match best {
            Some(v) => ValueAt::Value(v),
            None => ValueAt::NoneYet,
        })
    }
}

/// A minimization problem an anytime algorithm can be run on.
pub trait Instance: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Box bounds, identical in every coordinate.
    fn domain(&self) -> (f64, f64);
    fn eval(&self, x: &[f64]) -> f64;
}

/// Named instance generator: the same (index, seed) always yields the same
/// instance.
pub trait InstanceProvider: Send + Sync {
    fn name(&self) -> &str;
    fn instance(&self, index: u64, seed: u64) -> Box<dyn Instance>;
}

/// A stochastic optimizer that can be interrupted at any budget.
///
/// Implementations call `report(evals_used, value)` after each objective
/// evaluation (or at least whenever the incumbent improves); the harness
/// tracks best-so-far externally and stops charging once `budget`
/// evaluations are spent.
pub trait AnytimeAlgorithm: Send + Sync {
    fn id(&self) -> &str;
    fn run(
        &self,
        instance: &dyn Instance,
        budget: u64,
        seed: u64,
        report: &mut dyn FnMut(u64, f64),
    );
}

/// Execute one seeded run and record its best-so-far trajectory.
///
/// A panicking algorithm is recorded as a failed run rather than dropped,
/// so crash-prone algorithms stay in the comparison (ranked worst).
pub fn run_anytime<F: Float>(
    algorithm: &dyn AnytimeAlgorithm,
    instance: &dyn Instance,
    horizon: F,
    seed: u64,
) -> Result<Trajectory<F>> {
    if !(horizon > F::zero()) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let budget = horizon.to64().floor() as u64;
    let mut samples: Vec<(F, F)> = Vec::new();
    let mut best = f64::INFINITY;
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        let mut record = |evals: u64, value: f64| {
            if evals == 0 || evals > budget {
                return;
            }
            if value < best && value.is_finite() {
                best = value;
                let t = F::cast(evals as f64);
                // Same evaluation index twice: keep the better value.
                if let Some(last) = samples.last_mut() {
                    if last.0 == t {
                        last.1 = F::cast(value);
                        return;
                    }
                }
                samples.push((t, F::cast(value)));
            }
        };
        algorithm.run(instance, budget, seed, &mut record);
    }));
    match outcome {
        Ok(()) => Trajectory::new(algorithm.id(), instance.id(), seed, samples, horizon),
        Err(_) => Ok(Trajectory::failed(
            algorithm.id(),
            instance.id(),
            seed,
            horizon,
        )),
    }
}
