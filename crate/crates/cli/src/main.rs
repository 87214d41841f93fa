//! `pfdm` command line: experiment orchestration against the service.
//!
//! Subcommands that correspond to server-side operations (accounting,
//! schedule export, the protocol's global stage, MMD) talk to a service
//! instance; without `--server` an ephemeral one is spawned in-process.
//! File-local work (dataset generation, partitioning, sampling from
//! checkpoints, classifier metrics) runs directly.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure,
//! 4 evaluation gate failure.

mod commands;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "pfdm", version, about = "personalized federated diffusion models")]
struct Cli {
    /// service base URL (e.g. http://127.0.0.1:8080); an ephemeral
    /// in-process service is used when absent
    #[arg(long, global = true)]
    server: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Print the default experiment configuration as TOML.
    PrintConfig,
    /// Privacy accounting: single queries, group privacy, budget sweeps
    /// and inverse solving.
    Account(commands::account::AccountArgs),
    /// Export a noise schedule as a plain-text table.
    Schedule(commands::schedule::ScheduleArgs),
    /// Generate a synthetic digit corpus as IDX files.
    GenData(commands::gen_data::GenDataArgs),
    /// Partition a dataset into per-client IDX files plus a manifest.
    Partition(commands::partition::PartitionArgs),
    /// Execute a full experiment (train, checkpoint, sample, evaluate).
    Run(commands::run::RunArgs),
    /// Sample from saved checkpoints (split sampling when both global and
    /// local checkpoints are given).
    Sample(commands::sample::SampleArgs),
    /// Evaluate generated samples against reference data.
    Eval(commands::eval::EvalArgs),
}

/// Error carrying the process exit code.
pub(crate) struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn stage(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn gate(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::stage(e.to_string())
    }
}

pub(crate) type CmdResult = Result<(), Failure>;

/// Resolve the service client, spawning an ephemeral instance when no
/// server was given.
pub(crate) async fn service_client(server: &Option<String>) -> Result<pfdm_client::Client, Failure> {
    let base = match server {
        Some(url) => url.clone(),
        None => {
            let addr = pfdm_service::spawn_ephemeral()
                .await
                .map_err(|e| Failure::stage(format!("cannot start embedded service: {e}")))?;
            format!("http://{addr}")
        }
    };
    let client = pfdm_client::Client::new(base);
    client
        .health()
        .await
        .map_err(|e| Failure::stage(format!("service unreachable: {e}")))?;
    Ok(client)
}

#[tokio::main]
async fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let result: CmdResult = match cli.command {
        Command::Serve { addr } => serve(addr).await,
        Command::PrintConfig => {
            print!("{}", pfdm_core::config::ExperimentConfig::default().to_toml());
            Ok(())
        }
        Command::Account(args) => commands::account::run(&cli.server, args).await,
        Command::Schedule(args) => commands::schedule::run(&cli.server, args).await,
        Command::GenData(args) => commands::gen_data::run(args),
        Command::Partition(args) => commands::partition::run(args),
        Command::Run(args) => commands::run::run(&cli.server, args).await,
        Command::Sample(args) => commands::sample::run(args),
        Command::Eval(args) => commands::eval::run(&cli.server, args).await,
    };
    match result {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            std::process::ExitCode::from(f.code)
        }
    }
}

async fn serve(addr: String) -> CmdResult {
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| Failure::config(format!("cannot bind {addr}: {e}")))?;
    println!("pfdm service listening on {}", listener.local_addr().map_err(Failure::from)?);
    pfdm_service::serve(listener).await.map_err(|e| Failure::stage(e.to_string()))
}
