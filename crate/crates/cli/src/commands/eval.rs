//! `pfdm eval`: score generated samples against reference data — kernel
//! MMD (computed by the service), per-class classifier agreement, and
//! optional downstream accuracy.

use std::path::PathBuf;

use clap::Args;
use pfdm_client::types::{encode_f32_b64, MmdRequest, SamplesPayload};
use pfdm_core::data::load_mnist_idx;
use pfdm_core::eval::{
    downstream_accuracy, per_class_report, read_classifier, train_classifier, write_classifier,
    ClassifierConfig,
};
use pfdm_core::SampleBatch;

use crate::{service_client, CmdResult, Failure};

#[derive(Args)]
pub struct EvalArgs {
    /// generated samples as an IDX pair: images labels
    #[arg(long, num_args = 2, required = true)]
    pub samples: Vec<PathBuf>,
    /// held-out real data as an IDX pair: images labels
    #[arg(long, num_args = 2, required = true)]
    pub reference: Vec<PathBuf>,
    /// real training data to fit the reference classifier: images labels
    #[arg(long, num_args = 2)]
    pub reference_train: Vec<PathBuf>,
    /// reuse a saved reference classifier instead of training one
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    /// save the (possibly freshly trained) reference classifier here
    #[arg(long)]
    pub save_classifier: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 500)]
    pub classifier_seed: u64,
    /// also train a downstream classifier on the samples and report
    /// accuracy on the reference data
    #[arg(long)]
    pub downstream: bool,
    /// metric CSV output
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// fail (exit code 4) when aggregate agreement falls below this
    #[arg(long)]
    pub min_agreement: Option<f64>,
}

fn payload(batch: &SampleBatch) -> SamplesPayload {
    let flat: Vec<f32> = batch.data().iter().copied().collect();
    SamplesPayload {
        shape: batch.shape().to_vec(),
        data_b64: encode_f32_b64(&flat),
        labels: batch.labels().map(|l| l.to_vec()),
    }
}

pub async fn run(server: &Option<String>, args: EvalArgs) -> CmdResult {
    let samples = load_mnist_idx(&args.samples[0], &args.samples[1])
        .map_err(|e| Failure::config(e.to_string()))?;
    let reference = load_mnist_idx(&args.reference[0], &args.reference[1])
        .map_err(|e| Failure::config(e.to_string()))?;

    // kernel MMD over the service
    let client = service_client(server).await?;
    let mmd = client
        .mmd(&MmdRequest { a: payload(&samples), b: payload(&reference), bandwidth: None })
        .await
        .map_err(|e| Failure::stage(e.to_string()))?;
    println!("mmd^2 = {:.6} (bandwidth {:.4})", mmd.mmd2, mmd.bandwidth);

    // reference classifier: load or train
    let model = match &args.classifier {
        Some(path) => {
            let blob = std::fs::read(path).map_err(|e| Failure::config(e.to_string()))?;
            read_classifier(&blob).map_err(|e| Failure::config(e.to_string()))?
        }
        None => {
            if args.reference_train.len() != 2 {
                return Err(Failure::config(
                    "pass --classifier or --reference-train <images> <labels>",
                ));
            }
            let train = load_mnist_idx(&args.reference_train[0], &args.reference_train[1])
                .map_err(|e| Failure::config(e.to_string()))?;
            train_classifier(
                &train,
                args.num_classes,
                &ClassifierConfig { seed: args.classifier_seed, ..ClassifierConfig::default() },
            )
            .map_err(|e| Failure::stage(e.to_string()))?
        }
    };
    if let Some(path) = &args.save_classifier {
        std::fs::write(path, write_classifier(&model)).map_err(|e| Failure::stage(e.to_string()))?;
    }

    let agreement =
        per_class_report(&samples, &model).map_err(|e| Failure::stage(e.to_string()))?;
    print!("{}", agreement.summary());

    let mut csv = agreement.to_csv();
    csv.push_str(&format!("mmd,all,{:.12e},{}\n", mmd.mmd2, samples.count()));

    if args.downstream {
        let acc = downstream_accuracy(
            &samples,
            &reference,
            args.num_classes,
            &ClassifierConfig::default(),
            &[args.classifier_seed],
        )
        .map_err(|e| Failure::stage(e.to_string()))?;
        println!("downstream accuracy = {:.4}", acc.aggregate);
        csv.push_str(&format!("downstream_accuracy,all,{:.12e},{}\n", acc.aggregate, reference.count()));
    }

    if let Some(path) = &args.report {
        std::fs::write(path, csv).map_err(|e| Failure::stage(e.to_string()))?;
        println!("report written to {}", path.display());
    }

    if let Some(min) = args.min_agreement {
        if agreement.aggregate < min {
            return Err(Failure::gate(format!(
                "aggregate agreement {:.4} below the required {min}",
                agreement.aggregate
            )));
        }
    }
    Ok(())
}
