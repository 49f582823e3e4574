//! Identification of lumped-parameter thermal network models from sparse
//! temperature telemetry by trajectory matching, together with a finite
//! element generator for synthetic ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datagen;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod gradients;
pub mod graph;
pub mod integrate;
pub mod io;
pub mod param;
pub mod training;

pub use config::ExperimentConfig;
pub use dataset::{
    make_windows, split_dataset, split_ranges, Split, SplitRanges, TelemetryDataset, Window,
    WindowBatch,
};
pub use error::{Error, Result};
pub use eval::{
    compute_metrics, pcc, rmse, snr_study, windowed_errors, MetricSet, StabilityClass,
    StabilityReport, WindowedErrors,
};
pub use gradients::{
    finite_difference_gradient, loss_and_gradient, trajectory_loss, LossReport, Objective,
};
pub use graph::{EdgeSpec, NodeKind, NodeSpec, PhysicalParameters, ThermalGraph};
pub use integrate::{batched_rollout, rollout, step, RolloutConfig, Trajectory};
pub use param::{
    embed, embed_jacobian, init_raw, inverse_embed, InitStrategy, RawParameters, ScaleVector,
};
pub use training::{
    adam_update, evaluate_test, multi_run, train, AdamState, MultiRun, RunReport, StopReason,
    TrainConfig,
};
