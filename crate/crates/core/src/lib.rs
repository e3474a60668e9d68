//! Online convex optimization under time-varying constraints.
//!
//! The centerpiece is a follow-the-regularized-leader loop whose objective
//! folds the constraints in through a running-average hinge penalty, so that
//! a large enough penalty weight keeps the iterates feasible for every
//! prefix of revealed constraints while the usual √t regret guarantee
//! survives. Around it sit the pieces needed to study that claim at desk
//! scale: exact symbolic function arithmetic, a certified inner solver with
//! brute-force grid oracles, canonical primal-dual baselines, seeded
//! constraint-stream generators with growth/convergence condition checkers,
//! and regret/violation metrics against three nested benchmark sets.

pub mod algorithms;
pub mod error;
pub mod generators;
pub mod metrics;
pub mod model;
pub mod penalty;
pub mod solver;

pub use error::{Error, Result};
pub use model::{
    BoxDomain, FuncSum, LossSpec, ProblemInstance, RegularizerSpec, RunTrace, ScalarFunc,
};
pub use penalty::{GammaCertificate, PenaltyState};
