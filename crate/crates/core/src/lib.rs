//! Estimating a vector of unknown means from noisy crowd answers when the
//! means obey known linear inequalities `E·mu <= 0`, and choosing which
//! question to ask next.
//!
//! * [`model`]: losses, constraints, per-variable samples.
//! * [`estimator`]: normal MLE and the modeled error of an estimate.
//! * [`constrained`]: constrained joint fit (weighted projection + variance
//!   re-estimation).
//! * [`interpolate`]: models for unsampled variables of a chain.
//! * [`selector`]: greedy and baseline question selection, budgeted runs.
//! * [`sim`]: simulated crowds and policy benchmarks.
//!
//! Variable indices are 0-based throughout the library.

pub mod constrained;
pub mod error;
pub mod estimator;
pub mod interpolate;
pub mod model;
pub mod qp;
pub mod quadrature;
pub mod selector;
pub mod sim;

pub use constrained::{
    build_qp, complete_zero_weight, refit, reestimate_variances, solve_qp, solve_qp_with, EstimatorState, QpOptions,
    QpProblem, QpRoute,
};
pub use error::{Error, Result};
pub use estimator::{
    error_decrease, expected_error, expected_error_decrease, fit_mle, IntegrationConfig, MonteCarlo, NormalParams,
};
pub use interpolate::{beta_order_variance, fill_chain, interpolate_mean, interpolate_variance, ChainSegment};
pub use model::{check_feasible, point_loss, total_loss, ConstraintSet, LossSpec, VariableState, FEASIBILITY_TOL};
pub use selector::{
    next_question, run_budget, score_constrained, score_independent, AnswerSource, Choice, Estimation, Policy,
    SelectionConfig, TieBreak,
};
pub use sim::{
    make_ground_truth, run_experiment, worker_answer, CrowdModel, Experiment, ExperimentSummary, GroundTruth, Noise,
    PolicySummary, SimTrace, SimulatedCrowd, TapeSource, TraceRow, TruthKind,
};

/// Mixes tags into a base seed (SplitMix64 finalizer per tag) so that every
/// replicate, candidate and segment draws from its own stream.
pub(crate) fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}
