//! Explainable reactive power optimization for radial distribution feeders.
//!
//! The pipeline solves the optimization with a genetic algorithm over a
//! backward-forward sweep power flow, trains a surrogate regressor from nodal
//! loads to device setpoints, and attributes the surrogate's decisions to its
//! input features with exact and kernel-weighted Shapley values.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod explain;
pub mod network;
pub mod pipeline;
pub mod powerflow;
pub mod regressor;
pub mod rpo;
pub mod seed;
pub mod shapley;

#[cfg(any(test, feature = "oracles"))]
pub mod oracle;

pub use dataset::{
    generate_scenarios, label_scenarios, split_dataset, DatasetSplit, LabeledSample, ScenarioConfig,
};
pub use error::{Error, ErrorClass, Result};
pub use network::{load_network, NetworkModel, Violation};
pub use pipeline::{run_pipeline, Profile, RunConfig, RunReport};
pub use powerflow::{solve_power_flow, ControlVector, LoadScenario, PowerFlowResult};
pub use regressor::{train_linear, train_mlp, MlpParams, Predictor, TrainedRegressor};
pub use rpo::{solve_rpo_ga, GaParams, ObjectiveWeights, RpoSolution};
pub use shapley::{exact_shapley, kernel_shapley, Background, Method, ShapleyAttribution, Sigma};
