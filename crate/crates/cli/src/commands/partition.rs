//! `pfdm partition`: split the configured corpus into per-client IDX
//! files plus a provenance manifest.

use std::path::PathBuf;

use clap::Args;
use pfdm_core::config::ExperimentConfig;
use pfdm_core::data::{partition, write_mnist_idx};
use pfdm_core::pipeline::load_corpus;
use pfdm_core::rng;
use rand::RngCore;

use crate::{CmdResult, Failure};

#[derive(Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// overrides the config's master seed
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: PartitionArgs) -> CmdResult {
    let cfg = ExperimentConfig::load(&args.config).map_err(|e| Failure::config(e.to_string()))?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let corpus = load_corpus(&cfg.data).map_err(|e| Failure::config(e.to_string()))?;
    let spec = cfg.partition.to_spec(rng::stream(seed, "partition").next_u64());
    let (clients, manifest) =
        partition(&corpus.train, &spec).map_err(|e| Failure::config(e.to_string()))?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Failure::stage(e.to_string()))?;
    for batch in &clients {
        let id = batch.client_id().expect("partition assigns ids");
        write_mnist_idx(
            batch,
            &args.out_dir.join(format!("client{id}-images.idx")),
            &args.out_dir.join(format!("client{id}-labels.idx")),
        )?;
        println!("client {id}: {} samples", batch.count());
    }
    let manifest_path = args.out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest.to_csv()).map_err(|e| Failure::stage(e.to_string()))?;
    println!(
        "wrote {} clients and manifest ({} rows, config {}) to {}",
        clients.len(),
        manifest.rows.len(),
        cfg.hash(),
        args.out_dir.display()
    );
    Ok(())
}
