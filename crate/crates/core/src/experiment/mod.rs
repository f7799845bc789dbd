//! Configuration-driven experiments shared by the command-line tool and the
//! Python bindings.

mod commands;
mod config;
mod output;
mod problem;
mod props;

pub use commands::{
    constants_hold, constrained_erm, error_exit_code, gap_within_stability, matched_bounds, risk, run, sweep,
    CommandOutput, HorizonResult, Outcome, RiskSummary, RiskTrial, RunSummary, SweepPoint, SweepSummary,
};
pub use config::{ExperimentConfig, LabSpec, LossKind, OutputSpec, ProblemSpec, RunSpec, ScheduleKind};
pub use output::{line_chart, Series};
pub use problem::Problem;
pub use props::{
    dropout_mask_z_score, erm_oracle_min_slack, growth_closed_form, growth_recursion_error, hit_time_z_score,
    run_properties, Fault, PropertyResult, PropsReport, FALSIFIER_PAIRS, PROPERTY_NAMES, RULE_TRIALS,
};
