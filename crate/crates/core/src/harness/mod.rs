//! End-to-end T vs T_DF experiment: data, split, translation, two training
//! runs on identical settings, evaluation and reporting.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ExperimentConfig, PhantomSource, SplitConfig, TranslatorStage};
pub use pipeline::{evaluate_model, run_comparison, tallies, DeepfakeStats, Elem, LOCK_FILE};
pub use report::{
    format_cell, parse_report_csv, render_csv, render_markdown, render_report, table_cells, Environment,
    ExperimentReport, HistorySummary, ReportFormat, RunBlock, CSV_COLUMNS, PUBLISHED_REFERENCE, TABLE_COLUMNS,
};
