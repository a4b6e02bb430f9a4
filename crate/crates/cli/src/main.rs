use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phonmt::config::{self, EnvOverrides};
use phonmt::Stage;

#[derive(Parser)]
#[command(name = "phonmt", version, about = "Graphemic vs phonemic translation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Pipeline configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration key, e.g. --set training.steps=200
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Phonemize every split through the configured backends
    Phonemize(Common),
    /// Align, filter and split both branches
    Prepare(Common),
    /// Build vocabularies
    Vocab(Common),
    /// Train both models
    Train(Common),
    /// Decode the evaluation splits
    Translate(Common),
    /// Score both models
    Score(Common),
    /// Run everything and write the comparison report
    Compare(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let (stage, common) = match cli.command {
        Command::Phonemize(c) => (Stage::Phonemize, c),
        Command::Prepare(c) => (Stage::Prepare, c),
        Command::Vocab(c) => (Stage::Vocab, c),
        Command::Train(c) => (Stage::Train, c),
        Command::Translate(c) => (Stage::Translate, c),
        Command::Score(c) => (Stage::Score, c),
        Command::Compare(c) => (Stage::Compare, c),
    };
    let mut overrides = common.set.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(workers) = common.workers {
        overrides.push(format!("workers={workers}"));
    }
    let loaded = match config::load(&common.config, &overrides, &EnvOverrides::from_env()) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    for w in &loaded.warnings {
        log::warn!("{w}");
    }
    match phonmt::run(&loaded.config, stage) {
        Ok(manifest) => {
            log::info!("{} done; manifest at {}", stage.as_str(), manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
