//! Figures, tables, predictions and timing reports.

pub mod benchmark;
pub mod canvas;
pub mod charts;
pub mod predictions;
pub mod table;

pub use benchmark::{benchmark, BenchmarkConfig, TimingReport};
pub use charts::{render_class_distribution, render_intensity_histograms, render_training_curves};
pub use predictions::{write_predictions, PredictionSummary};
pub use table::{comparison_rows, comparison_table, format_table, write_comparison, ComparisonInput, ComparisonRow};
