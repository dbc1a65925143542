//! Weekly behavioral vaccine hesitancy runs: ingestion through attribution,
//! cross-week aggregates, external validation, synthetic inputs and
//! rendering.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod render;
pub mod run;
pub mod series;
pub mod synth;
pub mod text_stage;
pub mod validate;

pub use config::RunConfig;
pub use error::PipelineError;
pub use run::{run_week, RunOptions, Stage, WeekOutcome};
pub use series::{run_series, SeriesOutcome};
pub use synth::{generate_synthetic, SynthOutput, SynthParams};
pub use validate::{validate_external, ValidationReport};
