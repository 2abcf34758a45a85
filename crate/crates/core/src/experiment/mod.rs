//! Config-driven reproduction of the experiment grid: translation jobs,
//! synthetic pools, segmentation and bound baselines, evaluation and the
//! report bundle.

pub mod bundle;
pub mod config;
pub mod ledger;
pub mod plan;
pub mod run;

pub use bundle::{compare_cov, emit_report_bundle, CovRow, CovTable};
pub use config::{CustomPool, DataConfig, ExperimentConfig, PoolKind};
pub use ledger::{JobRecord, JobStatus, RunLedger, LEDGER_FILE};
pub use plan::{build_plan, plan_from_config, plan_from_experiment, BoundKind, ExperimentPlan, Job, JobKind};
pub use run::{run_plan, run_plan_with};
