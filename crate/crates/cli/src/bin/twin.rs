use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ontwin::scenario::{make_plant, NoiseSpec, PerturbationSpec, ScenarioScript};
use ontwin::spectral::lin_to_db;
use ontwin::topology::{preset, NetworkState};
use ontwin::twin::{calibrate, predict_route, CalibrationOptions, TelemetryRecord, Twin};
use ontwin_cli::{emit_line, fail, init_logging, parse_args, parse_channels, parse_route, read_json, read_text, write_json, CliError};

/// Build, calibrate and query a digital twin.
#[derive(Parser)]
#[command(name = "twin", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Reference system without lightpaths (system1, system2, system3).
    #[arg(long)]
    preset: Option<String>,
    /// Network and lightpaths of a scripted scenario (s1, s2, s2-mutated, s3).
    #[arg(long)]
    scenario: Option<String>,
}

impl Source {
    fn state(&self) -> Result<NetworkState, CliError> {
        match (&self.preset, &self.scenario) {
            (Some(p), _) => NetworkState::new(preset(p).map_err(CliError::config)?, Vec::new()).map_err(CliError::config),
            (_, Some(s)) => ScenarioScript::builtin(s)
                .and_then(|s| s.state())
                .map_err(CliError::config),
            _ => Err(CliError::Config("give --preset or --scenario".into())),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write an uncalibrated twin at nominal parameters.
    Build {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine the twin's parameters from NDJSON telemetry.
    Calibrate {
        #[arg(long)]
        twin: PathBuf,
        #[arg(long)]
        telemetry: PathBuf,
        /// Where to write the calibrated twin; defaults to overwriting --twin.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict per-channel GSNR on a node route.
    Predict {
        #[arg(long)]
        twin: PathBuf,
        /// Comma-separated nodes, e.g. "A,C,E".
        #[arg(long)]
        lightpath: String,
        /// Channel indices, e.g. "1-8" or "0,2,4".
        #[arg(long)]
        channels: String,
    },
    /// Sample a seeded synthetic plant of a scenario into NDJSON telemetry.
    Telemetry {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        polls: u64,
        /// Amplifier totals only, no per-channel OCM profiles.
        #[arg(long)]
        totals_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Build { source, out } => {
            let twin = Twin::new(source.state()?);
            write_json(&out, &twin)?;
            emit_line(json!({"twin": out, "links": twin.state.network.links.len(), "lightpaths": twin.state.lightpaths.len()})
            );
        }
        Cmd::Calibrate { twin, telemetry, out } => {
            let mut t: Twin = read_json(&twin)?;
            let text = read_text(&telemetry)?;
            let mut records = Vec::new();
            for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let r: TelemetryRecord = serde_json::from_str(line)
                    .map_err(|e| CliError::Config(format!("{}:{}: {e}", telemetry.display(), n + 1)))?;
                records.push(r);
            }
            let report = calibrate(&t.state, &records, &CalibrationOptions::default()).map_err(CliError::config)?;
            t.state = report.apply(&t.state);
            emit_line(json!({
                    "mode": report.mode,
                    "records": records.len(),
                    "initial_mse_db2": report.initial_mse_db2,
                    "residual_mse_db2": report.residual_mse_db2,
                    "warnings": report.warnings,
                })
            );
            t.calibration = Some(report);
            write_json(out.as_ref().unwrap_or(&twin), &t)?;
        }
        Cmd::Predict { twin, lightpath, channels } => {
            let t: Twin = read_json(&twin)?;
            let route = parse_route(&lightpath)?;
            let chans = parse_channels(&channels)?;
            let q = predict_route(&t.state, &route, &chans).map_err(CliError::config)?;
            let rows: Vec<_> = q
                .channels
                .iter()
                .map(|c| {
                    json!({
                        "channel": c.channel,
                        "gsnr_db": c.gsnr_db,
                        "snr_ase_db": lin_to_db(c.signal_mw / c.ase_mw),
                        "snr_nli_db": lin_to_db(c.signal_mw / c.nli_mw),
                    })
                })
                .collect();
            emit_line(serde_json::to_string_pretty(&json!({
                    "route": route,
                    "min_gsnr_db": q.min_gsnr_db,
                    "mean_gsnr_db": q.mean_gsnr_db,
                    "channels": rows,
                }))
                .expect("plain data serializes")
            );
        }
        Cmd::Telemetry {
            scenario,
            seed,
            polls,
            totals_only,
            out,
        } => {
            let script = ScenarioScript::builtin(&scenario).map_err(CliError::config)?;
            let st = script.state().map_err(CliError::config)?;
            let plant = make_plant(&st, &PerturbationSpec::default(), NoiseSpec::default(), seed).map_err(CliError::config)?;
            let mut text = String::new();
            for t in 0..polls {
                for r in plant.snapshot(t, !totals_only).map_err(CliError::config)? {
                    text.push_str(&serde_json::to_string(&r).expect("records serialize"));
                    text.push('\n');
                }
            }
            std::fs::write(&out, text).map_err(|source| CliError::Io {
                path: out.display().to_string(),
                source,
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    init_logging();
    let cli = match parse_args::<Cli>() {
        Ok(c) => c,
        Err(code) => return code,
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
