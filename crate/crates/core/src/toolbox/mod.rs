//! Tools the agent can call, each with a label and JSON schemas.

pub mod edfa_opt;
pub mod registry;
pub mod rsa;
pub mod tfidf;

use thiserror::Error;

use crate::amplifier::AmpError;
use crate::topology::TopologyError;
use crate::twin::TwinError;

pub use edfa_opt::{apply_proposal, optimize_edfa, optimize_edfa_with, EdfaOptRequest, EdfaOptResult, OptimizerOptions, Scope};
pub use registry::{default_registry, select_tool, InvocationRecord, ToolDescriptor, ToolRegistry};
pub use rsa::{protection_switch, provision, rsa_allocate, Assignment, Demand, SwitchPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolboxError {
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("no lit channel under test on `{0}`")]
    NoCut(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("demand {0} is blocked")]
    Blocked(usize),
    #[error("predicted min GSNR {min_gsnr_db:.2} dB is below the floor")]
    BelowFloor { min_gsnr_db: f64 },
    #[error("no route avoids `{0}`")]
    NoAlternative(String),
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Amp(#[from] AmpError),
}
