use std::path::PathBuf;
use std::process::ExitCode;

use baryprox::checks::{Scope, DEFAULT_SEED};
use baryprox_cli::config::TraceFormat;
use baryprox_cli::runner::{run_checks_command, run_config_file, RunOptions};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "baryprox",
    version,
    about = "Proximal saddle experiments over R^m x simplex"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory; defaults to `output.dir` or the config's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<TraceFormat>,
    },
    /// Run the seeded property suites.
    Checks {
        /// `all` or one module name.
        #[arg(default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Also write the report table and summary here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<TraceFormat>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            seed,
            out_dir,
            format,
        } => {
            let opts = RunOptions {
                seed,
                out_dir,
                format,
            };
            match run_config_file(&config, &opts) {
                Ok(outcome) => {
                    for line in &outcome.report_lines {
                        println!("{line}");
                    }
                    let s = &outcome.summary;
                    println!("{}: {}", s.method.name(), s.status);
                    if let Some(msg) = &s.message {
                        eprintln!("{msg}");
                    }
                    println!("trace: {}", outcome.trace_path.display());
                    println!("summary: {}", outcome.summary_path.display());
                    ExitCode::from(outcome.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Checks {
            scope,
            seed,
            out_dir,
            format,
        } => {
            let scope = match scope.parse::<Scope>() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let opts = RunOptions {
                seed: Some(seed),
                out_dir,
                format,
            };
            match run_checks_command(scope, &opts) {
                Ok((lines, code)) => {
                    for line in &lines {
                        println!("{line}");
                    }
                    let failed = lines.iter().filter(|l| l.starts_with("[FAIL]")).count();
                    println!(
                        "checks {scope}: {}/{} passed",
                        lines.len() - failed,
                        lines.len()
                    );
                    ExitCode::from(code as u8)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
