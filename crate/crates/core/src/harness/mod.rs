//! Datasets, evaluation, statistics and figure export.

mod dataset;
mod figures;
mod metrics;
mod piano;
mod stats;

pub use dataset::{
    generate_set1, generate_set2, generate_split, ingest_external, load_dataset, sample_melody,
    save_dataset, DataItem, Dataset, DatasetHeader, GenSpec, Provenance, Split,
};
pub use figures::{emit_figures, item_panels, Panel};
pub use piano::{generate_piano, piano_melody};
pub use metrics::{
    evaluate_split, mean_variance, param_mse, ItemEval, MetricsReport, RunMetrics, SplitEval,
    REPORT_COLUMNS,
};
pub use stats::{brown_forsythe, median_spread, stat_tests, LeveneResult, ParamTest, StatTestResult, ALPHA};
