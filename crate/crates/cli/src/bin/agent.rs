use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ontwin::agent::{HttpBackend, LlmBackend, ScriptedBackend, ScriptedPolicy};
use ontwin::scenario::{run_scenario, RunOptions, ScenarioScript};
use ontwin_cli::{emit_line, fail, init_logging, parse_args, read_text, report_exit, CliError};

/// Run the control agent against a scripted incident on a synthetic plant.
#[derive(Parser)]
#[command(name = "agent", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Llm {
    Scripted,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Standard,
    AlwaysMalformed,
    DeployUnverified,
    ProposeHarmful,
}

impl From<Policy> for ScriptedPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Standard => ScriptedPolicy::Standard,
            Policy::AlwaysMalformed => ScriptedPolicy::AlwaysMalformed,
            Policy::DeployUnverified => ScriptedPolicy::DeployUnverified,
            Policy::ProposeHarmful => ScriptedPolicy::ProposeHarmful,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write transcript, report and CSV tables to --out.
    Run {
        /// s1, s2, s2-mutated, s3, or a scenario JSON file.
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value = "scripted")]
        llm: Llm,
        /// Behaviour of the scripted backend.
        #[arg(long, value_enum, default_value = "standard")]
        policy: Policy,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_script(name: &str) -> Result<ScenarioScript, CliError> {
    if ScenarioScript::builtin_names().contains(&name) {
        return ScenarioScript::builtin(name).map_err(CliError::config);
    }
    let path = Path::new(name);
    if !path.exists() {
        return Err(CliError::Config(format!(
            "unknown scenario `{name}`: not one of {} and no such file",
            ScenarioScript::builtin_names().join(", ")
        )));
    }
    ScenarioScript::from_json(&read_text(path)?).map_err(CliError::config)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let Cmd::Run {
        scenario,
        llm,
        policy,
        seed,
        out,
    } = cli.cmd;
    let script = load_script(&scenario)?;
    let mut backend: Box<dyn LlmBackend> = match llm {
        Llm::Scripted => Box::new(ScriptedBackend { policy: policy.into() }),
        Llm::Http => Box::new(HttpBackend::from_env().map_err(CliError::config)?),
    };
    let opts = RunOptions { seed, ..RunOptions::default() };
    let run = run_scenario(&script, backend.as_mut(), &opts, Some(&out)).map_err(|e| match e {
        ontwin::scenario::ScenarioError::Io(m) => CliError::Config(m),
        other => CliError::config(other),
    })?;
    let r = &run.report;
    for c in &r.checks {
        emit_line(format!("{} {} (event {}) {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.event, c.detail));
    }
    emit_line(format!(
        "{}: {:?} after {} events; {}",
        r.scenario,
        r.status,
        r.events,
        if r.passed { "all checks passed" } else { "checks failed" }
    ));
    Ok(report_exit(r, script.expect))
}

fn main() -> ExitCode {
    init_logging();
    let cli = match parse_args::<Cli>() {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => fail(e),
    }
}
