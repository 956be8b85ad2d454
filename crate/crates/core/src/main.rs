use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edgepar::cli::{self, CliError, CliResult, Outcome, RunConfig};

#[derive(Parser)]
#[command(name = "edgepar", version, about = "Partitioned malware-detection inference on constrained devices")]
struct Args {
    /// Key/value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    /// Override a configuration key, e.g. `--set parent_memory=8MiB`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert binaries and HPC traces into grayscale feature images.
    Extract,
    /// Train per-class GANs on feature images and emit synthetic samples.
    Datagen,
    /// Count parameters, estimate memory and decide fit or offload.
    Estimate,
    /// Choose nodes and layer ranges.
    Plan,
    /// Run the plan on simulated nodes and compare against one node.
    Simulate,
    /// Regenerate latency and resource figure data.
    Report,
}

fn config(args: &Args) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::new(cli::EXIT_BAD_INPUT, format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim(), Path::new("."))?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    cfg.json |= args.json;
    cfg.check_paths()?;
    Ok(cfg)
}

fn run(args: &Args) -> CliResult<(Outcome, bool)> {
    let cfg = config(args)?;
    let outcome = match args.command {
        Command::Extract => cli::cmd_extract(&cfg),
        Command::Datagen => cli::cmd_datagen(&cfg),
        Command::Estimate => cli::cmd_estimate(&cfg),
        Command::Plan => cli::cmd_plan(&cfg),
        Command::Simulate => cli::cmd_simulate(&cfg),
        Command::Report => cli::cmd_report(&cfg),
    }?;
    Ok((outcome, cfg.json))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok((outcome, json)) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&outcome.json).expect("json values serialize"));
            } else {
                print!("{}", outcome.text);
            }
            ExitCode::from(cli::EXIT_OK as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
