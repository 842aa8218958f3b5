//! Anytime Pareto sets for stochastic optimizers via Bayesian ranking races.
//!
//! The pipeline: record best-so-far trajectories of anytime algorithms on
//! sampled instances, reduce them to time-indexed rankings, infer
//! Plackett-Luce rating posteriors under a temporal prior, and race the
//! algorithms — eliminating confidently dominated ones — until every
//! pairwise relation is resolved at every timepoint. The surviving set is
//! the anytime Pareto set; the posterior supports deployment-time selection
//! under arbitrary time preferences and risk profiles.

pub mod beliefs;
pub mod error;
pub mod float;
pub mod grid;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod plmodel;
pub mod priors;
pub mod race;
pub mod ranking;
pub mod select;
pub mod stats;
pub mod synth;
pub mod trajectory;

pub use error::{Error, Result};
pub use float::Float;

/// Concrete `f64` aliases for the main types; the generic versions live in
/// their modules.
pub type TimeGrid64 = grid::TimeGrid<f64>;
pub type Trajectory64 = trajectory::Trajectory<f64>;
pub type RankingObservation64 = ranking::RankingObservation<f64>;
pub type LatentUtilities64 = plmodel::LatentUtilities<f64>;
pub type PriorModel64 = priors::PriorModel<f64>;
pub type RatingSamples64 = inference::RatingSamples<f64>;
pub type GroundTruth64 = synth::GroundTruth<f64>;
pub type RaceConfig64 = race::RaceConfig<f64>;
pub type RaceState64 = race::RaceState<f64>;
