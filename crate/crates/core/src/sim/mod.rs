//! Closed-loop simulation: scenarios, the run loop, error metrics, the
//! uncertainty study and CSV reporting.

pub mod metrics;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod uncertainty;

pub use metrics::{aggregate, rotation_error, translation_error_cm, ErrorStats, RunMetrics, StepRecord, SummaryRow};
pub use report::{write_run, write_summary, write_toy_fit, write_uncertainty, CsvMeta, RUN_COLUMNS, SUMMARY_COLUMNS, TOY_FIT_COLUMNS, UNCERTAINTY_COLUMNS};
pub use runner::{run_scenario, run_scenario_with_seed, Reference};
pub use scenario::{
    directional_scenario, directional_suite, standard_room, AblationFlags, FieldConfig, FieldSpec, LocalizeConfig, PathShape, Scenario,
    SurveyConfig, Wall, YawPolicy, CLOSED_LOOP_N_CTRL,
};
pub use uncertainty::{pearson, uncertainty_study, BinStat, UncertaintyConfig, UncertaintyCurve, UncertaintyRecord};
