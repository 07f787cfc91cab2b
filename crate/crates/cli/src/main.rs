mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] fcoint::Error),
    #[error("data error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(e) if e.is_data() => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "fcoint", version, about = "Functional cointegrating regression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set kappa=0`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Output directory.
    #[arg(long, short, global = true, default_value = "fcoint-out")]
    out: PathBuf,

    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Kernel density estimates and CLR transforms from a raw sample panel.
    IngestDensity,
    /// Fit the regression operator and optional inference bands.
    Estimate,
    /// Sequential variance-ratio test for the nonstationary dimension.
    VrTest,
    /// Monte Carlo tables.
    Simulate,
    /// Density responses to scaled regressor shocks from a saved fit.
    Shock,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", cli.out.display())))?;
    std::fs::write(cli.out.join("config.toml"), cfg.to_toml())
        .map_err(|e| CliError::Config(format!("cannot write to {}: {e}", cli.out.display())))?;
    match cli.command {
        Command::IngestDensity => commands::ingest_density(&cfg, &cli.out),
        Command::Estimate => commands::estimate(&cfg, &cli.out),
        Command::VrTest => commands::vr_test(&cfg, &cli.out),
        Command::Simulate => commands::simulate(&cfg, &cli.out),
        Command::Shock => commands::shock(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
