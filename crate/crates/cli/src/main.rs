use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedsel::commands::{self, Common, Participants};
use fedsel::presets::Repro;
use fedsel::CliError;

#[derive(Debug, Parser)]
#[command(name = "fedsel", version, about = "Similarity-based collaborator selection for federated learning")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the target and peer clients and write their datasets.
    Partition(Common),
    /// Fit the public PCA anchor and project every client.
    Extract(Common),
    /// Privatize each client's projected features.
    Noise(Common),
    /// Cluster the pooled releases and write per-client histograms.
    Cluster(Common),
    /// EMD from the target to every peer.
    Distances(Common),
    /// Choose collaborators with the configured threshold policy.
    Select(Common),
    /// Run a federation and record per-round target accuracy.
    Train {
        #[command(flatten)]
        common: Common,
        /// Who trains with the target.
        #[arg(long, value_enum, default_value = "selected")]
        participants: Participants,
    },
    /// Add peers one at a time, closest first, until accuracy drops.
    Incremental(Common),
    /// Membership-inference power across privacy budgets.
    Attack(Common),
    /// Run an experiment grid and summarize it.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Preset experiment shape; its settings sit beneath the config file.
        #[arg(long, value_enum)]
        repro: Option<Repro>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result: Result<_, CliError> = match &cli.command {
        Command::Partition(c) => commands::partition(c),
        Command::Extract(c) => commands::extract(c),
        Command::Noise(c) => commands::noise(c),
        Command::Cluster(c) => commands::cluster(c),
        Command::Distances(c) => commands::distances(c),
        Command::Select(c) => commands::select(c),
        Command::Train { common, participants } => commands::train(common, *participants),
        Command::Incremental(c) => commands::incremental(c),
        Command::Attack(c) => commands::attack(c),
        Command::Grid { common, repro } => commands::grid(common, *repro),
    };
    match result {
        Ok(manifest) => {
            log::info!("wrote {} artifacts", manifest.artifacts.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
