use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use xlmimo::experiments::{self, OutputFormat, ScenarioConfig};
use xlmimo::parallel::{with_threads, Parallelism};
use xlmimo::{Error, Result};

#[derive(Parser)]
#[command(name = "xlmimo", version, about = "XL-MIMO uplink simulation sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a named preset and emit its metrics table.
    Run {
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        drops: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        /// Destination file; standard output when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_parser = ["csv", "json"])]
        format: Option<String>,
        /// Worker threads; 1 runs sequentially.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print the names of the bundled presets.
    ListPresets,
    /// Parse and check a scenario file without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ListPresets => {
            for (name, _) in experiments::PRESETS {
                println!("{name}");
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ScenarioConfig::from_file(&config)?;
            println!("{}: ok ({} sweep values)", cfg.name, cfg.sweep_values.len());
            Ok(())
        }
        Command::Run { config, preset, trials, drops, seed, output, format, threads } => {
            let mut cfg = match (config, preset) {
                (Some(path), _) => ScenarioConfig::from_file(&path)?,
                (None, Some(name)) => ScenarioConfig::preset(&name)?,
                (None, None) => return Err(Error::Config("need --config or --preset".into())),
            };
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(d) = drops {
                cfg.drops = d;
            }
            if let Some(s) = seed {
                cfg.model.seed = s;
            }
            if let Some(o) = output {
                cfg.output = Some(o);
            }
            if let Some(f) = format {
                cfg.format = f.parse::<OutputFormat>()?;
            }
            cfg.validate()?;
            let par = if threads == Some(1) { Parallelism::Sequential } else { Parallelism::Parallel };
            let table = with_threads(threads, || experiments::run_scenario(&cfg, par))?;
            experiments::emit(&table, cfg.format, cfg.output.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
