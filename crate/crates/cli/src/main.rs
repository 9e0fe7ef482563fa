use clap::{Parser, Subcommand};
use rydion_cli::config::{CliError, ConfigError, SweepSpec};
use rydion_cli::runner::{self, describe};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use toml::Value;

#[derive(Parser)]
#[command(name = "rydion", version, about = "Trapped Rydberg ion scenarios: simulate, fit and sweep")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its tables and summary.
    Run {
        scenario: PathBuf,
        /// Overrides the seed in the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate a scenario over a parameter grid.
    Sweep {
        scenario: PathBuf,
        /// Dotted key below `parameters`; replaces the file's sweep section.
        #[arg(long, requires = "values")]
        parameter: Option<String>,
        /// Comma-separated grid values, e.g. "0 us,1 us,2 us".
        #[arg(long, requires = "parameter", allow_hyphen_values = true)]
        values: Option<String>,
        /// Summary column to fit with a decaying exponential.
        #[arg(long)]
        fit: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit a data file: `series` (Rydberg series) or `line` (sideband spectrum).
    Fit {
        kind: String,
        data: PathBuf,
        /// Parameter override, e.g. --set rf="6.5 MHz".
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { scenario, seed, out } => {
            let loaded = runner::load(&scenario)?;
            let report = runner::run(&loaded, seed, &out)?;
            say(&describe(loaded.scenario.kind, &report.outcome));
            report.files.iter().for_each(|f| say(&format!("wrote {}\n", f.display())));
        }
        Command::Sweep { scenario, parameter, values, fit, seed, out } => {
            let loaded = runner::load(&scenario)?;
            let spec = match (parameter, values) {
                (Some(parameter), Some(values)) => Some(SweepSpec {
                    parameter: parameter.strip_prefix("parameters.").unwrap_or(&parameter).to_string(),
                    values: values.split(',').map(str::trim).filter(|v| !v.is_empty()).map(|v| Value::String(v.to_string())).collect(),
                    fit,
                }),
                _ => match (fit, loaded.scenario.sweep.clone()) {
                    (Some(f), Some(s)) => Some(SweepSpec { fit: Some(f), ..s }),
                    (Some(_), None) => return Err(ConfigError::new("sweep", "--fit needs a sweep section or --parameter/--values").into()),
                    (None, s) => s,
                },
            };
            let report = runner::sweep(&loaded, spec, seed, &out)?;
            for (i, e) in report.errors.iter().enumerate().filter(|(_, e)| !e.is_empty()) {
                eprintln!("point {i}: {e}");
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(f) = &report.fit {
                say(&format!("{}: exponential fit of {} gives decay constant {:.4} ± {:.4} {}\n", loaded.scenario.kind, f.column, f.decay_constant, f.decay_constant_sigma, f.unit));
            }
            say(&format!("{} points, {} failed\n", report.table.rows.len(), report.errors.iter().filter(|e| !e.is_empty()).count()));
            report.files.iter().for_each(|f| say(&format!("wrote {}\n", f.display())));
        }
        Command::Fit { kind, data, set, seed, out } => {
            let loaded = runner::fit_scenario(&kind, &data, &set)?;
            let report = runner::run(&loaded, seed, &out)?;
            say(&describe(loaded.scenario.kind, &report.outcome));
            report.files.iter().for_each(|f| say(&format!("wrote {}\n", f.display())));
        }
    }
    Ok(())
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}
