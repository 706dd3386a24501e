use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robust_lfd_cli::presets::PRESETS;
use robust_lfd_cli::{default_output_dir, load, run_preset, run_scenario, CliError, VerifyMode};

/// Least favorable densities and robust likelihood ratio tests.
#[derive(Parser)]
#[command(name = "robust-lfd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write the LFDs, the LRF and the solution summary.
    Run {
        config: PathBuf,
        /// Output directory (default: the scenario's output_dir, else its own directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in preset.
    Preset {
        name: String,
        /// Output directory (default: ./<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the preset catalogue.
    ListPresets,
    /// Solve a scenario and verify the resulting test.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<String, CliError> {
    let summary = match cli.command {
        Command::Run { config, out } => {
            let loaded = load(&config)?;
            let dir = out.unwrap_or_else(|| default_output_dir(&loaded));
            serde_json::to_value(run_scenario(&loaded, &dir, VerifyMode::IfRequested)?)
        }
        Command::Verify { config, out } => {
            let loaded = load(&config)?;
            let dir = out.unwrap_or_else(|| default_output_dir(&loaded));
            let s = run_scenario(&loaded, &dir, VerifyMode::Always)?;
            if s.verified == Some(false) {
                return Err(CliError::VerificationFailed(format!(
                    "{}, see {}",
                    s.name,
                    dir.join(robust_lfd_cli::VERIFY_FILE).display()
                )));
            }
            serde_json::to_value(s)
        }
        Command::Preset { name, out } => {
            let dir = out.unwrap_or_else(|| PathBuf::from(&name));
            serde_json::to_value(run_preset(&name, &dir)?)
        }
        Command::ListPresets => {
            let list: Vec<_> = PRESETS
                .iter()
                .map(|p| serde_json::json!({ "name": p.name, "description": p.description }))
                .collect();
            Ok(serde_json::Value::Array(list))
        }
    };
    let value = summary.map_err(|e| CliError::Io(e.to_string()))?;
    Ok(serde_json::to_string_pretty(&value).expect("json value serializes"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(out) => {
            // a closed pipe is not an error for a reporting tool
            let _ = writeln!(std::io::stdout(), "{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
