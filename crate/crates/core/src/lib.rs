//! Selective prediction with a linear expected-error constraint.
//!
//! Calibrates uncertainty thresholds so that the rate of errors among
//! accepted answers stays below a target level, for a single model or for a
//! cascade of models, plus confidence-bound baselines, a repeated-split
//! evaluation harness and synthetic data with a known ground truth.

pub mod coin;
pub mod error;
pub mod harness;
pub mod io;
pub mod routing;
pub mod seeding;
pub mod single;
pub mod special;
pub mod synthetic;
pub mod types;

pub use coin::{calibrate_coin, clopper_pearson_ucb, hoeffding_ucb, Bound, UcbQuery};
pub use error::{Error, Result};
pub use harness::{compare_methods, repeated_eval, split, EvalConfig, EvalSummary, Evaluation, Method, SplitReport};
pub use routing::{
    calibrate_multi, calibrate_routing, check_routing_constraint, MultiSearch, RoutingDecision, Strategy, TiePolicy,
};
pub use single::{calibrate_single, check_constraint, min_feasible_alpha, Correction};
pub use types::{
    Alpha, Calibrated, Delta, Gate, GateOutcome, ModelScore, MultiRecord, Record, RiskSpec, Threshold,
    ThresholdDecision,
};
