//! `pfdm account`: single-query reports, group privacy, budget sweep CSV
//! and the inverse solver.

use std::path::PathBuf;

use clap::Args;
use pfdm_client::types::{AccountRequest, SolveT0Request, SweepRequest};

use crate::{service_client, CmdResult, Failure};

#[derive(Args)]
pub struct AccountArgs {
    #[arg(long, default_value_t = 1000)]
    pub t_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    pub beta_end: f64,
    /// split step the release happens at
    #[arg(long)]
    pub t0: Option<usize>,
    /// norm bound: whole-sample C or per-coordinate c depending on --mode
    #[arg(long, default_value_t = 1.0)]
    pub bound: f64,
    #[arg(long, default_value = "per_coordinate")]
    pub mode: String,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    /// number of coordinates protected jointly (group privacy)
    #[arg(long, default_value_t = 1)]
    pub group_size: u32,
    /// write the full (t0, alpha_bar, tau, gamma*, epsilon) table here
    #[arg(long)]
    pub sweep: Option<PathBuf>,
    /// solve for the smallest t0 reaching this epsilon
    #[arg(long)]
    pub solve_epsilon: Option<f64>,
}

pub async fn run(server: &Option<String>, args: AccountArgs) -> CmdResult {
    if args.group_size > 1 && args.mode == "per_sample" {
        return Err(Failure::config("group privacy applies to per-coordinate bounds"));
    }
    let client = service_client(server).await?;
    let schedule = pfdm_client::types::ScheduleParams {
        t_steps: args.t_steps,
        beta_start: args.beta_start,
        beta_end: args.beta_end,
        sigma_mode: "beta".into(),
    };

    let mut did_something = false;
    if let Some(t0) = args.t0 {
        let report = client
            .account(&AccountRequest {
                schedule: schedule.clone(),
                t0,
                bound: args.bound,
                mode: args.mode.clone(),
                delta: args.delta,
                group_size: args.group_size,
            })
            .await
            .map_err(|e| Failure::config(e.to_string()))?;
        println!(
            "privacy report: t0={}, bound={} ({}), delta={:e}, k={}",
            report.t0, report.bound, report.mode, report.delta, report.group_size
        );
        println!("  alpha_bar(t0) = {:.6}", report.alpha_bar_t0);
        println!("  tau           = {:.6}", report.tau);
        match report.gamma_star {
            Some(g) => println!("  gamma*        = {g:.6}"),
            None => println!("  gamma*        = inf"),
        }
        println!("  epsilon1      = {:.6}", report.epsilon1);
        println!("  epsilon2      = {:.6}", report.epsilon2);
        println!("  epsilon       = {:.6}", report.epsilon);
        did_something = true;
    }

    if let Some(path) = &args.sweep {
        let csv = client
            .sweep_csv(&SweepRequest {
                schedule: schedule.clone(),
                bound: args.bound,
                mode: args.mode.clone(),
                delta: args.delta,
            })
            .await
            .map_err(|e| Failure::config(e.to_string()))?;
        std::fs::write(path, &csv).map_err(|e| Failure::stage(e.to_string()))?;
        println!("wrote sweep ({} rows) to {}", csv.lines().count() - 1, path.display());
        did_something = true;
    }

    if let Some(target) = args.solve_epsilon {
        let resp = client
            .solve_t0(&SolveT0Request {
                schedule,
                target_epsilon: target,
                bound: args.bound,
                mode: args.mode.clone(),
                delta: args.delta,
            })
            .await
            .map_err(|e| Failure::config(e.to_string()))?;
        match (resp.reachable, resp.t0) {
            (true, Some(t0)) => println!(
                "smallest t0 with epsilon <= {target}: t0 = {t0} (epsilon = {:.6})",
                resp.epsilon_at_t0.unwrap_or(f64::NAN)
            ),
            _ => {
                return Err(Failure::gate(format!(
                    "target epsilon {target} unreachable within the schedule"
                )))
            }
        }
        did_something = true;
    }

    if !did_something {
        return Err(Failure::config("nothing to do: pass --t0, --sweep or --solve-epsilon"));
    }
    Ok(())
}
