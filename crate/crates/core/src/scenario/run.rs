use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, EpisodeOptions, KnowledgeBase, LlmBackend, Transcript};
use crate::toolbox::registry::default_registry;
use crate::twin::Twin;

use super::io::PlantIo;
use super::plant::{make_plant, NoiseSpec, PerturbationSpec};
use super::report::{build_report, ScenarioReport, TRANSCRIPT_FILE};
use super::script::ScenarioScript;
use super::ScenarioError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub seed: u64,
    pub perturbation: PerturbationSpec,
    pub noise: NoiseSpec,
    pub episode: EpisodeOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            seed: 7,
            perturbation: PerturbationSpec::default(),
            noise: NoiseSpec::default(),
            episode: EpisodeOptions::default(),
        }
    }
}

/// Everything needed to rebuild a report offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub script: ScenarioScript,
    pub seed: u64,
    pub backend: String,
}

pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub transcript: Transcript,
    pub twin: Twin,
}

pub const RUN_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.json";

fn io(e: std::io::Error, what: &Path) -> ScenarioError {
    ScenarioError::Io(format!("{}: {e}", what.display()))
}

/// Runs one scripted incident against a fresh plant and an uncalibrated twin.
/// Agent escalations and failures land in the report, never in `Err`.
pub fn run_scenario(
    script: &ScenarioScript,
    backend: &mut dyn LlmBackend,
    opts: &RunOptions,
    out_dir: Option<&Path>,
) -> Result<ScenarioRun, ScenarioError> {
    script.validate()?;
    let nominal = script.state()?;
    let plant = make_plant(&nominal, &opts.perturbation, opts.noise, opts.seed)?;
    let mut net = PlantIo::new(plant);
    let kb = KnowledgeBase::shipped();
    let registry = default_registry();
    let out = run_episode(Twin::new(nominal), &script.events, &mut net, backend, &kb, &registry, &opts.episode);
    let report = build_report(script, &out.transcript, opts.seed, &backend.name(), &kb.rules);
    if let Some(dir) = out_dir {
        let record = RunRecord {
            script: script.clone(),
            seed: opts.seed,
            backend: backend.name(),
        };
        write_outputs(dir, &record, &out.transcript, &report)?;
    }
    Ok(ScenarioRun {
        report,
        transcript: out.transcript,
        twin: out.twin,
    })
}

pub fn write_outputs(dir: &Path, record: &RunRecord, transcript: &Transcript, report: &ScenarioReport) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let put = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| io(e, &p))
    };
    put(RUN_FILE, to_json(record))?;
    put(TRANSCRIPT_FILE, transcript.to_ndjson())?;
    put(REPORT_FILE, to_json(report))?;
    put("gsnr.csv", report.gsnr_csv())?;
    put("checks.csv", report.checks_csv())?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// Rebuilds the report of a run directory from its record and transcript.
pub fn report_from_dir(dir: &Path) -> Result<ScenarioReport, ScenarioError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| io(e, &p))
    };
    let record: RunRecord = serde_json::from_str(&read(RUN_FILE)?).map_err(|e| ScenarioError::Config(format!("{RUN_FILE}: {e}")))?;
    let transcript = Transcript::from_ndjson(&read(TRANSCRIPT_FILE)?)?;
    let kb = KnowledgeBase::shipped();
    Ok(build_report(&record.script, &transcript, record.seed, &record.backend, &kb.rules))
}
