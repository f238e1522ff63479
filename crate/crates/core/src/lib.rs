//! Feasibility-aware conformal calibration for set-valued predictions over
//! pre-sampled LLM candidate pools.
//!
//! The pipeline: load [`record::CandidateRecord`]s, score every candidate
//! ([`scoring`]), derive the risk floor imposed by the finite sampling budget
//! and calibrate a reliability threshold ([`calibration`]), then measure
//! coverage and set size over repeated random splits ([`evaluation`]).
//! [`synthetic`] generates exchangeable pools with known admissibility for
//! testing the coverage guarantee.

mod cluster;

pub mod calibration;
pub mod error;
pub mod evaluation;
pub mod record;
pub mod scoring;
pub mod synthetic;

pub use calibration::{
    calibrate_threshold, compute_mrl, empirical_loss, mrl_curve, prediction_set, sampling_failure,
    set_loss, CalibrationOutcome, LambdaGrid, LossCurve, PredictionSet, RiskFloor,
};
pub use error::{Error, Result};
pub use evaluation::{
    deduplicate_set, evaluate, mlg_baseline, split_records, sweep_budget, EvalConfig,
    EvaluationReport,
};
pub use record::{
    is_admissible, load_records, truncate_budget, write_records, AdmissionRule, Candidate,
    CandidateRecord,
};
pub use scoring::{score_record, score_records, ScoredRecord, ScoringConfig};
pub use synthetic::{generate, OracleConfig, ScoreModel};
