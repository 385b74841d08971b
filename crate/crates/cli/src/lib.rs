//! Helpers shared by the `twin`, `agent` and `report` binaries.

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use ontwin::agent::EpisodeStatus;
use ontwin::scenario::{Expectation, ScenarioReport};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECKS_FAILED: u8 = 2;
pub const EXIT_ESCALATION: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

impl CliError {
    pub fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses `1-8`, `3`, or `0,2,5-7` into sorted, de-duplicated indices.
pub fn parse_channels(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = || CliError::Config(format!("bad channel list `{text}`"));
    let mut out = std::collections::BTreeSet::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => {
                out.insert(part.parse().map_err(|_| bad())?);
            }
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out.into_iter().collect())
}

/// Splits `A,C,E` into node ids.
pub fn parse_route(text: &str) -> Result<Vec<String>, CliError> {
    let route: Vec<String> = text.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if route.len() < 2 {
        return Err(CliError::Config(format!("route `{text}` needs at least two nodes")));
    }
    Ok(route)
}

/// 0 if every check passed, 3 for an escalation the script did not expect,
/// 2 for any other failed check.
pub fn report_exit(report: &ScenarioReport, expect: Expectation) -> u8 {
    if report.passed {
        EXIT_OK
    } else if report.status == EpisodeStatus::Escalated && expect == Expectation::Deploy {
        EXIT_ESCALATION
    } else {
        EXIT_CHECKS_FAILED
    }
}

pub fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
pub fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

pub fn emit_line(x: impl std::fmt::Display) {
    emit(&format!("{x}\n"));
}

/// Parses arguments; usage errors map to the configuration exit code.
pub fn parse_args<T: clap::Parser>() -> Result<T, ExitCode> {
    T::try_parse().map_err(|e| {
        let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        let _ = e.print();
        ExitCode::from(code)
    })
}

pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
}
