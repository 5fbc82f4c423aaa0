//! Photon-counting models of a cavity-enhanced DLCZ spin-wave memory:
//! detection-efficiency budgets, motional decoherence, polarization
//! entanglement statistics, a seeded Monte-Carlo of the write/read cycle,
//! estimators with Poisson bootstrap errors, and a repeater rate model.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod decoherence;
pub mod entanglement;
pub mod error;
pub mod estimators;
pub mod io;
pub mod mc;
pub mod params;
pub mod repeater;

pub use decoherence::{
    fit_decay, motional_lifetime, retrieval_decay, DecayFit, DecayParams, DecaySample,
};
pub use entanglement::{
    forward_count_probs, projection_probs, AngleSettings, ForwardProbs, JointOutcomeProbs,
};
pub use error::{Error, Result};
pub use estimators::{
    bell_s, correlation_e, fidelity_from_s, intrinsic_retrieval_qubit, poisson_error,
    visibility_from_s, BellSettings, EstimateWithError,
};
pub use mc::{run_experiment, run_trial, CountsTable, ExperimentRun, TrialRecord};
pub use params::{
    cavity_escape_efficiency, coupling_angle, repetition_rate, total_detection_efficiency,
    CycleTiming, DetectionChain, EnsembleGeometry, ExperimentParams,
};
pub use repeater::{swap_chain, RateBreakdown, RepeaterParams};
