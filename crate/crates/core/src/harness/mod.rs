//! Synthetic experiments on Gaussian signatures, with named presets.

pub mod config;
pub mod data;
pub mod pipeline;
pub mod presets;

pub use config::ExperimentConfig;
pub use data::{gen_query, gen_query_set, gen_signatures, gen_signatures_with, QuerySet};
pub use pipeline::{run_experiment, write_results, ResultRow, RESULT_CSV_HEADER};
pub use presets::{preset_configs, run_preset, Preset};
