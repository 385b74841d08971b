use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use ontwin::scenario::report_from_dir;
use ontwin_cli::{emit, emit_line, fail, init_logging, parse_args, CliError, EXIT_CHECKS_FAILED, EXIT_OK};

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Table {
    Checks,
    Gsnr,
}

/// Rebuild a run's report from its transcript and print it.
#[derive(Parser)]
#[command(name = "report", version)]
struct Cli {
    /// Output directory of `agent run`.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Which table to print in CSV format.
    #[arg(long, value_enum, default_value = "checks")]
    table: Table,
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let r = report_from_dir(&cli.dir).map_err(CliError::config)?;
    match (cli.format, cli.table) {
        (Format::Json, _) => emit_line(serde_json::to_string_pretty(&r).expect("plain data serializes")),
        (Format::Csv, Table::Checks) => emit(&r.checks_csv()),
        (Format::Csv, Table::Gsnr) => emit(&r.gsnr_csv()),
    }
    Ok(if r.passed { EXIT_OK } else { EXIT_CHECKS_FAILED })
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
