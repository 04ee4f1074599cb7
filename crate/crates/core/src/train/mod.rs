//! Optimization: the per-sample objective, AdamW with a poly schedule,
//! the training loop, gradient verification and collapse monitoring.

mod collapse;
mod composite;
mod gradcheck;
mod optim;
mod run;
mod schedule;

pub use collapse::{collapse_stats, CollapseStats};
pub use composite::{record_objective, Method, ObjectiveSettings, ObjectiveVars, TaskTarget, TrainItem};
pub use gradcheck::{
    analytic_gradients, check_gradients, composite_loss, gradient_check, miniature_model, relative_error, Composite,
    Fixture, GradCheckConfig, GradCheckReport, GroupReport,
};
pub use optim::{optimizer_step, AdamState, OptimizerConfig, StepOutcome};
pub use schedule::{lr_at, ScheduleConfig};
pub use run::{
    params_checksum, train_run, write_metrics, StepRecord, TrainConfig, TrainRun, FULL_CHECKPOINT, INFERENCE_CHECKPOINT,
    METRICS_FILE,
};
