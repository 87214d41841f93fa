//! `pfdm schedule`: export the (t, beta, alpha_bar, sigma) table.

use std::path::PathBuf;

use clap::Args;
use pfdm_client::types::ScheduleParams;

use crate::{service_client, CmdResult, Failure};

#[derive(Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 1000)]
    pub t_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    pub beta_end: f64,
    #[arg(long, default_value = "beta")]
    pub sigma_mode: String,
    /// output file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub async fn run(server: &Option<String>, args: ScheduleArgs) -> CmdResult {
    let client = service_client(server).await?;
    let table = client
        .schedule_table(&ScheduleParams {
            t_steps: args.t_steps,
            beta_start: args.beta_start,
            beta_end: args.beta_end,
            sigma_mode: args.sigma_mode,
        })
        .await
        .map_err(|e| Failure::config(e.to_string()))?;
    match args.out {
        Some(path) => {
            std::fs::write(&path, &table).map_err(|e| Failure::stage(e.to_string()))?;
            println!("wrote {} rows to {}", table.lines().count() - 1, path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}
