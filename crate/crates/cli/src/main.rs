//! `prefse`: scripted pipeline from synthetic data to evaluation tables.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use commands::*;

#[derive(Debug, Parser)]
#[command(name = "prefse", version, about = "Preference-learned speech enhancement pipeline")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for outputs; relative input paths resolve against it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Replay the arguments recorded in a `<command>.config.json` echo.
    #[arg(long, global = true)]
    config_file: Option<PathBuf>,
    /// Log at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "command", content = "args")]
pub enum Command {
    /// Synthesize the scene dataset (manifest and WAV stems).
    Synth(SynthArgs),
    /// Train the multi-task or a single-task model.
    Train(TrainArgs),
    /// Run a simulated elicitation session and fit preferences.
    Elicit(ElicitArgs),
    /// Enhance test mixtures under each condition.
    Enhance(EnhanceArgs),
    /// Metric, confusion and condition tables for trained weights.
    Evaluate(EvaluateArgs),
    /// Export layer embeddings and their t-SNE map.
    Embeddings(EmbeddingsArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Elicit(_) => "elicit",
            Command::Enhance(_) => "enhance",
            Command::Evaluate(_) => "evaluate",
            Command::Embeddings(_) => "embeddings",
            Command::Serve(_) => "serve",
        }
    }
}

/// Resolved run configuration, echoed to `<out_dir>/<command>.config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Output-directory context handed to every command.
pub struct Ctx {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Ctx {
    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    /// Resolves `p` and fails with a missing-prerequisite error if absent.
    pub fn require(&self, p: &Path, what: &str) -> CliResult<PathBuf> {
        let full = self.path(p);
        if full.exists() {
            Ok(full)
        } else {
            Err(CliError::Missing(format!("{what} not found at {}", full.display())))
        }
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.out_dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(anyhow::Error::from)?;
        }
        prefse_core::write_atomic(&path, bytes).map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(anyhow::Error::from)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

fn resolve(cli: Cli) -> CliResult<RunConfig> {
    let (command, seed, out_dir) = match &cli.config_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Missing(format!("config file {}: {e}", path.display())))?;
            let recorded: RunConfig =
                serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config file {}: {e}", path.display())))?;
            if recorded.command.name() != cli.command.name() {
                return Err(CliError::Usage(format!(
                    "config file records '{}' but '{}' was requested",
                    recorded.command.name(),
                    cli.command.name()
                )));
            }
            (recorded.command, cli.seed.unwrap_or(recorded.seed), cli.out_dir.unwrap_or(recorded.out_dir))
        }
        None => (cli.command, cli.seed.unwrap_or(0), cli.out_dir.unwrap_or_else(|| PathBuf::from("."))),
    };
    Ok(RunConfig { seed, out_dir, command })
}

fn run(cli: Cli) -> CliResult<()> {
    let config = resolve(cli)?;
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| anyhow::anyhow!("creating {}: {e}", config.out_dir.display()))?;
    let ctx = Ctx { seed: config.seed, out_dir: config.out_dir.clone() };
    ctx.write_json(&format!("{}.config.json", config.command.name()), &config)?;
    match config.command {
        Command::Synth(a) => synth(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Elicit(a) => elicit(&ctx, a),
        Command::Enhance(a) => enhance(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Embeddings(a) => embeddings(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ManifestArg {
    /// Dataset manifest written by `synth`.
    #[arg(long, default_value = "manifest.json")]
    pub manifest: PathBuf,
}
