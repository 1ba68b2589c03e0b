//! Configuration-driven experiments: runs, artifacts and bound verification.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, LearnerKind, Mode, ResolvedConfig};
pub use run::{execute, run_experiment, write_artifacts, RoundRecord, RunSummary, SeedRun, SeedSummary, CSV_HEADER};
pub use verify::{verify_bounds, BoundCheck, CheckStatus, VerifyReport};
