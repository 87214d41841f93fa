//! `pfdm gen-data`: write a synthetic digit corpus as IDX file pairs.

use std::path::PathBuf;

use clap::Args;
use pfdm_core::data::{synthetic_digits, write_mnist_idx};

use crate::{CmdResult, Failure};

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1100)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 100)]
    pub test_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub side: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn run(args: GenDataArgs) -> CmdResult {
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Failure::stage(e.to_string()))?;
    let train = synthetic_digits(args.train_per_class, args.side, args.seed)
        .map_err(|e| Failure::config(e.to_string()))?;
    let test = synthetic_digits(args.test_per_class, args.side, args.seed ^ 0x5eed)
        .map_err(|e| Failure::config(e.to_string()))?;
    write_mnist_idx(
        &train,
        &args.out_dir.join("train-images.idx"),
        &args.out_dir.join("train-labels.idx"),
    )?;
    write_mnist_idx(
        &test,
        &args.out_dir.join("test-images.idx"),
        &args.out_dir.join("test-labels.idx"),
    )?;
    println!(
        "wrote {} train and {} test samples ({}x{}) to {}",
        train.count(),
        test.count(),
        args.side,
        args.side,
        args.out_dir.display()
    );
    Ok(())
}
