//! `pfdm sample`: draw samples from saved checkpoints. With a local
//! checkpoint and `--t0 > 0` this is the split procedure; `--t0 0` (or no
//! local checkpoint) returns global-stage samples unchanged.

use std::path::PathBuf;

use clap::Args;
use pfdm_core::config::ScheduleConfig;
use pfdm_core::data::write_mnist_idx;
use pfdm_core::denoiser::read_checkpoint;
use pfdm_core::diffusion::sample_ddpm;
use pfdm_core::eval::{save_grid_png, save_trajectory_png};
use pfdm_core::federation::{pfdm_sample, pfdm_sample_trace};
use pfdm_core::rng;
use pfdm_core::SampleBatch;
use rand::RngCore;

use crate::{CmdResult, Failure};

#[derive(Args)]
pub struct SampleArgs {
    /// global denoiser checkpoint
    #[arg(long)]
    pub global: PathBuf,
    /// personal denoiser checkpoint for the split stage
    #[arg(long)]
    pub local: Option<PathBuf>,
    /// personal steps; 0 skips the local stage
    #[arg(long, default_value_t = 0)]
    pub t0: usize,
    #[arg(long, default_value_t = 1000)]
    pub t_steps: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 0.02)]
    pub beta_end: f64,
    #[arg(long, default_value = "beta")]
    pub sigma_mode: String,
    /// samples per class (or total when unconditional)
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// classes to condition on, e.g. 0,1,2; unconditional when empty
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<u16>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// sample grid output
    #[arg(long)]
    pub out_png: Option<PathBuf>,
    /// raw sample output as an IDX pair (images, labels)
    #[arg(long, num_args = 2)]
    pub out_idx: Vec<PathBuf>,
    /// trajectory strip for the first sample (split sampling only)
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

pub fn run(args: SampleArgs) -> CmdResult {
    let sigma_mode = match args.sigma_mode.as_str() {
        "beta" => pfdm_core::SigmaMode::Beta,
        "posterior" => pfdm_core::SigmaMode::Posterior,
        other => return Err(Failure::config(format!("unknown sigma mode {other:?}"))),
    };
    let schedule = ScheduleConfig {
        t_steps: args.t_steps,
        beta_start: args.beta_start,
        beta_end: args.beta_end,
        sigma_mode,
    }
    .build()
    .map_err(|e| Failure::config(e.to_string()))?;

    let global_blob = std::fs::read(&args.global).map_err(|e| Failure::config(e.to_string()))?;
    let global = read_checkpoint(&global_blob).map_err(|e| Failure::config(e.to_string()))?;
    let local = match &args.local {
        Some(path) => {
            let blob = std::fs::read(path).map_err(|e| Failure::config(e.to_string()))?;
            Some(read_checkpoint(&blob).map_err(|e| Failure::config(e.to_string()))?)
        }
        None => None,
    };
    if args.t0 > 0 && local.is_none() {
        return Err(Failure::config("--t0 > 0 needs a --local checkpoint"));
    }

    let conditioned: Vec<Option<u16>> = if args.labels.is_empty() {
        vec![None]
    } else {
        args.labels.iter().map(|&l| Some(l)).collect()
    };

    let mut batches: Vec<SampleBatch> = Vec::new();
    let mut trajectory_written = false;
    for label in &conditioned {
        let seed = match label {
            Some(l) => rng::stream(args.seed, &format!("class{l}")).next_u64(),
            None => args.seed,
        };
        let batch = match (&local, args.t0) {
            (Some(local), t0) if t0 > 0 => {
                if let (Some(path), false) = (&args.trajectory, trajectory_written) {
                    let (batch, snapshots) =
                        pfdm_sample_trace(&global, local, &schedule, t0, args.count, *label, seed)
                            .map_err(|e| Failure::stage(e.to_string()))?;
                    save_trajectory_png(path, &snapshots, 0)
                        .map_err(|e| Failure::stage(e.to_string()))?;
                    trajectory_written = true;
                    batch
                } else {
                    pfdm_sample(&global, local, &schedule, t0, args.count, *label, seed)
                        .map_err(|e| Failure::stage(e.to_string()))?
                }
            }
            _ => sample_ddpm(&global, &schedule, schedule.len(), args.count, *label, seed)
                .map_err(|e| Failure::stage(e.to_string()))?,
        };
        batches.push(batch);
    }
    let samples = SampleBatch::concat(&batches).map_err(|e| Failure::stage(e.to_string()))?;
    println!("sampled {} points of shape {:?}", samples.count(), samples.shape());

    if let Some(path) = &args.out_png {
        save_grid_png(path, &samples, args.count).map_err(|e| Failure::stage(e.to_string()))?;
        println!("grid written to {}", path.display());
    }
    if args.out_idx.len() == 2 {
        if samples.labels().is_none() {
            return Err(Failure::config("IDX output needs conditioned samples (labels)"));
        }
        write_mnist_idx(&samples, &args.out_idx[0], &args.out_idx[1])?;
        println!("idx written to {} / {}", args.out_idx[0].display(), args.out_idx[1].display());
    }
    if let Some(path) = &args.trajectory {
        if trajectory_written {
            println!("trajectory strip written to {}", path.display());
        } else {
            return Err(Failure::config("--trajectory needs --t0 > 0 and a --local checkpoint"));
        }
    }
    Ok(())
}
