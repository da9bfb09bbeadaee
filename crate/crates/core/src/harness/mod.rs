//! Trial construction, prompting, dispatch and persistence of agent runs.

pub mod backend;
pub mod parse;
pub mod prompt;
pub mod results;
pub mod run;
pub mod trials;

pub use backend::{AgentBackend, BackendError, ChatRequest, ChatResponse};
pub use parse::{parse_and_coerce, parse_response};
pub use prompt::{render_prompt, AgentSpec, Demographics, Variant};
pub use results::{ParseFailPolicy, ParseStatus, ParticipantRecord, ResponseRecord, RunMetadata, RunResults, TrialInfo};
pub use run::{execute_run, RunOptions};
pub use trials::{build_trials, TrialSpec};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("design underspecified: {0}")]
    DesignUnderspecified(String),
    #[error("invalid agent spec: {0}")]
    InvalidAgentSpec(String),
    #[error("invalid backend: {0}")]
    InvalidBackend(String),
    #[error("backend unavailable: all {0} trials failed permanently")]
    BackendUnavailable(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
