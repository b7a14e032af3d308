//! Experiment driver: applies an editor to every benchmark instance, scores
//! the edited model on four axes and writes reports.

mod config;
mod distance;
mod lab;
mod report;
mod run;

pub use config::{decode_mode_name, parse_decode_mode, EditorKind, ExperimentConfig, Protocol};
pub use distance::{analyze_distances, distances_csv, ordering_accuracy, DistanceRow, KeyPipeline};
pub use lab::{build_lab, Lab, LabOptions};
pub use report::{
    load_report, make_report, parse_report, report_jsonl, rows_csv, timing_csv, timing_path, write_report,
    ReportTable, TableRow, REPORT_FORMAT, REPORT_VERSION,
};
pub use run::{
    benchmark_digest, instance_seed, run_edits, run_experiment, Aggregate, EditorSetup, EvalReport, EvalRow,
    RowScores, RunOptions, COVARIANCE_PROMPTS, COVARIANCE_RIDGE,
};
