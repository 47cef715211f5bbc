//! Command-line pipeline around the core library: synthesize a corpus,
//! learn a tokenizer, train the frozen base model, attach and fine-tune a
//! word head, then benchmark decoding modes against each other. Each stage
//! reads and writes plain artifact files, and a manifest of content digests
//! lets repeated runs skip work that is already done.

use std::fmt::Display;

pub mod bench;
pub mod config;
pub mod pipeline;
pub mod report;
pub mod synth;

/// Process-level failures. The exit code tells scripts what went wrong:
/// 2 bad configuration, 3 a pipeline stage failed, 4 an artifact on disk
/// does not match the model it claims to belong to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("artifact: {0}")]
    Artifact(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Stage { .. } => 3,
            CliError::Artifact(_) => 4,
        }
    }

    /// Wrap a stage-internal error, routing digest mismatches to their own
    /// exit code: a stale or foreign artifact is not a stage bug.
    pub fn stage<E: Display>(stage: &'static str) -> impl Fn(E) -> CliError {
        move |e| CliError::Stage { stage, message: e.to_string() }
    }
}

impl From<mumo_core::io::IoError> for CliError {
    fn from(e: mumo_core::io::IoError) -> Self {
        match e {
            mumo_core::io::IoError::DigestMismatch { .. } => CliError::Artifact(e.to_string()),
            other => CliError::Stage { stage: "io", message: other.to_string() },
        }
    }
}
