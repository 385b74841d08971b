//! The control agent: knowledge retrieval, prompting, LLM backends, strategy
//! verification on the twin and the monitor/plan/verify/deploy loop.

pub mod action;
pub mod backend;
pub mod episode;
pub mod kb;
pub mod prompt;
pub mod strategy;
pub mod transcript;

use thiserror::Error;

use crate::toolbox::ToolboxError;
use crate::topology::TopologyError;
use crate::twin::TwinError;

pub use action::{parse_action, Action, ParsedAction};
pub use backend::{ChatMessage, HttpBackend, LlmBackend, Role, ScriptedBackend, ScriptedPolicy};
pub use episode::{run_episode, EpisodeOptions, EpisodeOutcome, EpisodeStatus, NetworkIo, Poll, TimedEvent};
pub use kb::{retrieve_knowledge, Category, KbEntry, KnowledgeBase, Rules};
pub use prompt::{build_prompt, FewShot, PromptBundle, PromptEvent, PromptOptions};
pub use strategy::{decide_scope, verify_strategy, AmpSetting, Check, Provenance, Strategy, StrategyPayload, Verdict};
pub use transcript::{check_safety, Diagnosis, EventKind, Transcript, TranscriptEvent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("prompt needs {needed} chars for its mandatory sections, cap is {cap}")]
    PromptTooLong { needed: usize, cap: usize },
    #[error("no scripted policy matches event `{0}`")]
    NoPolicy(String),
    #[error("backend transport: {0}")]
    Transport(String),
    #[error("no parsable action in response")]
    MalformedAction { text: String },
    #[error("response holds {count} conflicting action blocks")]
    AmbiguousAction { count: usize },
    #[error("strategy not applicable: {0}")]
    NotApplicable(String),
    #[error("network i/o: {0}")]
    Io(String),
    #[error("unsafe transcript: {0}")]
    Unsafe(String),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Toolbox(#[from] ToolboxError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}
