//! Training, evaluation, checkpoints, ablations, attention inspection and
//! gradient checking.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod eval;
mod float;
pub mod gradcheck;
pub mod inspect;
pub mod metrics;
pub mod train;

pub use ablate::{ablate, ablation_specs, mean_metrics, render_table, AblationReport, AblationRow, AblationRun};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use config::RunConfig;
pub use eval::{evaluate, evaluate_full, evaluate_model, sweep_tau, Evaluation, TauPoint};
pub use gradcheck::{gradcheck, gradcheck_model, GradcheckReport, GroupReport};
pub use inspect::{inspect, inspect_model, InspectRecord, DEFAULT_TOP_K};
pub use metrics::{exact_match, f1_score, normalize_answer, score, Metrics, ScoredPrediction};
pub use train::{load_data, train, EpochRecord, PlateauSchedule};
