//! Experiment configuration, verification studies and their outputs.

pub mod config;
pub mod output;
pub mod report;
pub mod studies;

pub use config::{ExperimentConfig, StudyKind};
pub use output::{emit_outputs, ray_csv, td_map_csv};
pub use report::{Bound, Check, Status, StudyReport};
pub use studies::{
    run_born_study, run_decay_study, run_finite_delta_study, run_oracle_suite, run_sign_study, run_study, RayProfile,
    StudyOutcome,
};
