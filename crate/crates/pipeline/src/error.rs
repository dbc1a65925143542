use std::path::{Path, PathBuf};

use thiserror::Error;

/// Pipeline failure tagged with the stage that raised it.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("week {week} lies outside the analysis window {lo}..{hi}")]
    WeekOutsideWindow { week: u32, lo: u32, hi: u32 },
    #[error("validation: only {0} counties overlap the external estimates; need at least 3")]
    InsufficientOverlap(usize),
    #[error("render: {0}")]
    Render(String),
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: e.to_string(),
        }
    }
}
