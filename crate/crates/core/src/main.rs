use clap::{Parser, Subcommand};
use netdyn::error::Error;
use netdyn::experiment::{self, Command, ExperimentConfig, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "netdyn", version, about = "Latent graph ODE forecasting of network dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// JSON config, merged over the profile it names (default `desk`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Repeat with seeds `seed, seed+1, ...` and report mean and std.
    #[arg(long, default_value_t = 1)]
    n_seeds: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-threaded evaluation.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Cmd {
    GenData(Common),
    Train(Common),
    Eval(Common),
    Ood(Common),
    Scalability(Common),
    Sweep(Common),
    Noise(Common),
    Transductive(Common),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::GenData(a) => (Command::GenData, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Ood(a) => (Command::Ood, a),
        Cmd::Scalability(a) => (Command::Scalability, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Noise(a) => (Command::Noise, a),
        Cmd::Transductive(a) => (Command::Transductive, a),
    };
    let result = experiment::configure_threads()
        .and_then(|()| config(&args.config))
        .and_then(|cfg| {
            let opts = RunOptions {
                seed: args.seed,
                n_seeds: args.n_seeds,
                out: args.out,
                deterministic: args.deterministic,
            };
            experiment::run(command, cfg, &opts)
        });
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("netdyn {}: {e}", command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// A missing or unreadable config file is a config error, not I/O.
fn config(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::from_file(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })
}
