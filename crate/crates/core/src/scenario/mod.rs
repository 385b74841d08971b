//! Synthetic plant, scripted scenarios and reports.

pub mod io;
pub mod plant;
pub mod report;
pub mod run;
pub mod script;

use thiserror::Error;

use crate::agent::AgentError;
use crate::topology::TopologyError;

pub use io::PlantIo;
pub use plant::{make_plant, NoiseSpec, PerturbationSpec, Plant, PlantError, PlantEvent, Probe};
pub use report::{build_report, CheckRow, GsnrRow, PhaseTable, ScenarioReport};
pub use run::{report_from_dir, run_scenario, write_outputs, RunOptions, RunRecord, ScenarioRun};
pub use script::{Expectation, ScenarioId, ScenarioScript, SpanOverride, S1_DROP, S2_MUTATION_FACTOR, S3_NODE_A};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}
