use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sakit_cli::{parse_config, presets, run_experiment, CliError, ExperimentConfig, EXIT_CHECK_FAILED};

#[derive(Parser)]
#[command(name = "sakit", version, about = "Run stochastic approximation experiments from config files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV reports.
    Run {
        /// Experiment file.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Name of a shipped preset, instead of a file.
        #[arg(long)]
        preset: Option<String>,
        /// Output directory; defaults to `output.dir` of the file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of replicates.
        #[arg(long)]
        seeds: Option<usize>,
        /// Override the master seed.
        #[arg(long = "master-seed")]
        master_seed: Option<u64>,
    },
    /// Work with the shipped presets.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
    /// Validate an experiment file without running it.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    /// List preset names with a one-line description.
    List,
    /// Print the experiment file of a preset.
    Show { name: String },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_config(&text)?)
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Run { config, preset, out, seeds, master_seed } => {
            let mut cfg = match (config, preset) {
                (Some(path), _) => load(&path)?,
                (None, Some(name)) => {
                    presets::find(&name).ok_or_else(|| CliError::Config(format!("unknown preset '{name}'")))?.config()
                }
                (None, None) => unreachable!("clap requires one of --config and --preset"),
            };
            if let Some(n) = seeds {
                if n == 0 {
                    return Err(CliError::Config("--seeds must be positive".into()));
                }
                cfg.algorithm.seeds = n;
            }
            if let Some(s) = master_seed {
                cfg.algorithm.master_seed = s;
            }
            let dir = out
                .or_else(|| cfg.output.dir.clone().map(PathBuf::from))
                .ok_or_else(|| CliError::Config("no output directory: pass --out or set output.dir".into()))?;
            let summary = run_experiment(&cfg, &dir)?;
            println!("{}", summary.line);
            Ok(if summary.passed() { 0 } else { EXIT_CHECK_FAILED })
        }
        Command::Presets { action: PresetAction::List } => {
            for p in presets::PRESETS {
                println!("{:<18} {}", p.name, p.description);
            }
            Ok(0)
        }
        Command::Presets { action: PresetAction::Show { name } } => {
            let p = presets::find(&name).ok_or_else(|| CliError::Config(format!("unknown preset '{name}'")))?;
            print!("{}", p.text);
            Ok(0)
        }
        Command::Check { config } => {
            load(&config)?;
            println!("ok");
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
