//! Dataset ingestion, the majority/minority heterogeneity partitioner, and
//! norm-bound handling for the accountant.

mod cifar;
mod idx;
mod synth;

pub use cifar::load_cifar10_bin;
pub use idx::{load_mnist_idx, write_mnist_idx};
pub use synth::synthetic_digits;

use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::error::{Error, Result};
use crate::rng;
use rand::seq::SliceRandom;

/// One client's share: a majority count drawn from its majority cluster and
/// a minority count drawn from the remaining clusters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientPartition {
    pub majority_cluster: usize,
    pub majority_count: usize,
    pub minority_count: usize,
}

/// Label clusters plus per-client counts; sampling is without replacement
/// across the whole partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub clusters: Vec<Vec<u16>>,
    pub clients: Vec<ClientPartition>,
    pub seed: u64,
}

/// Provenance rows `(client_id, source_index, label)` for the manifest CSV.
#[derive(Debug, Clone, Default)]
pub struct PartitionManifest {
    pub rows: Vec<(u32, usize, u16)>,
}

impl PartitionManifest {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("client_id,source_index,label\n");
        for (c, i, l) in &self.rows {
            out.push_str(&format!("{c},{i},{l}\n"));
        }
        out
    }
}

/// Split a labeled dataset into disjoint per-client batches with exact
/// majority/minority counts, seed-deterministic.
pub fn partition(
    dataset: &SampleBatch,
    spec: &PartitionSpec,
) -> Result<(Vec<SampleBatch>, PartitionManifest)> {
    let labels = dataset
        .labels()
        .ok_or_else(|| Error::Data("partitioning requires labels".into()))?;
    if spec.clusters.len() < 2 {
        return Err(Error::Data("need at least two clusters".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for cluster in &spec.clusters {
        if cluster.is_empty() {
            return Err(Error::Data("empty cluster".into()));
        }
        for &l in cluster {
            if !seen.insert(l) {
                return Err(Error::Data(format!("label {l} appears in two clusters")));
            }
        }
    }
    for (ci, c) in spec.clients.iter().enumerate() {
        if c.majority_cluster >= spec.clusters.len() {
            return Err(Error::Data(format!("client {ci}: unknown cluster {}", c.majority_cluster)));
        }
        if c.majority_count + c.minority_count == 0 {
            return Err(Error::Data(format!("client {ci} would be empty")));
        }
    }

    // one shuffled pool of source indices per cluster, shared cursors
    let mut pools: Vec<Vec<usize>> = spec
        .clusters
        .iter()
        .map(|cluster| {
            (0..dataset.count())
                .filter(|&i| cluster.contains(&labels[i]))
                .collect::<Vec<_>>()
        })
        .collect();
    for (k, pool) in pools.iter_mut().enumerate() {
        let mut r = rng::stream(spec.seed, &format!("partition/cluster{k}"));
        pool.shuffle(&mut r);
    }
    let mut cursors = vec![0usize; pools.len()];

    fn take(
        pools: &[Vec<usize>],
        cursors: &mut [usize],
        k: usize,
        n: usize,
    ) -> Result<Vec<usize>> {
        let available = pools[k].len() - cursors[k];
        if available < n {
            return Err(Error::Data(format!(
                "cluster {k} exhausted: need {n}, have {available}"
            )));
        }
        let out = pools[k][cursors[k]..cursors[k] + n].to_vec();
        cursors[k] += n;
        Ok(out)
    }

    let mut batches = Vec::with_capacity(spec.clients.len());
    let mut manifest = PartitionManifest::default();
    for (ci, client) in spec.clients.iter().enumerate() {
        let mut indices =
            take(&pools, &mut cursors, client.majority_cluster, client.majority_count)?;
        // minority draws spread over the complement clusters, most-remaining first
        let mut remaining = client.minority_count;
        while remaining > 0 {
            let k = (0..pools.len())
                .filter(|&k| k != client.majority_cluster)
                .max_by_key(|&k| pools[k].len() - cursors[k])
                .expect("at least two clusters");
            if pools[k].len() == cursors[k] {
                return Err(Error::Data(format!(
                    "minority clusters exhausted for client {ci}"
                )));
            }
            indices.extend(take(&pools, &mut cursors, k, 1)?);
            remaining -= 1;
        }
        for &i in &indices {
            manifest.rows.push((ci as u32, i, labels[i]));
        }
        batches.push(dataset.select(&indices)?.with_client_id(ci as u32));
    }
    Ok((batches, manifest))
}

/// Whether the bound is asserted by clipping or merely observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    Report,
    Clip,
}

/// Norm handling ahead of release: `Report` observes the maxima for the
/// accountant; `Clip` enforces them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormPolicy {
    pub mode: NormMode,
    /// whole-sample l2 bound C
    pub sample_bound: Option<f64>,
    /// per-coordinate magnitude bound c
    pub coord_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormReport {
    pub max_l2: f64,
    pub max_abs: f64,
    pub clipped_samples: usize,
    pub clamped_coords: usize,
}

/// Observe (and in clip mode enforce) the sample-norm and coordinate bounds.
///
/// Report mode returns the observed maxima; Theorem-style guarantees need a
/// bound that holds for all inputs, which only clip mode asserts.
pub fn apply_norm_policy(batch: &SampleBatch, policy: &NormPolicy) -> Result<(SampleBatch, NormReport)> {
    if policy.mode == NormMode::Clip
        && policy.sample_bound.map_or(true, |b| b <= 0.0)
        && policy.coord_bound.map_or(true, |b| b <= 0.0)
    {
        return Err(Error::Data("clip mode needs a positive bound".into()));
    }
    let mut data = batch.data().to_owned();
    let mut clipped_samples = 0usize;
    let mut clamped_coords = 0usize;
    if policy.mode == NormMode::Clip {
        if let Some(c) = policy.coord_bound {
            let c = c as f32;
            for v in data.iter_mut() {
                if v.abs() > c {
                    *v = v.signum() * c;
                    clamped_coords += 1;
                }
            }
        }
        if let Some(cap) = policy.sample_bound {
            for mut row in data.rows_mut() {
                let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
                if norm > cap {
                    let scale = (cap / norm) as f32;
                    row.mapv_inplace(|v| v * scale);
                    clipped_samples += 1;
                }
            }
        }
    }
    let mut max_l2 = 0.0f64;
    let mut max_abs = 0.0f64;
    for row in data.rows() {
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        max_l2 = max_l2.max(norm);
    }
    for &v in data.iter() {
        max_abs = max_abs.max(v.abs() as f64);
    }
    let out = batch.with_data(data)?;
    Ok((out, NormReport { max_l2, max_abs, clipped_samples, clamped_coords }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn labeled_dataset() -> SampleBatch {
        // 100 samples, labels 0..9 repeating
        let data = Array2::from_shape_fn((100, 4), |(i, j)| (i * 4 + j) as f32 / 400.0);
        let labels: Vec<u16> = (0..100).map(|i| (i % 10) as u16).collect();
        SampleBatch::new(data, vec![4], Some(labels), None).unwrap()
    }

    fn two_cluster_spec(seed: u64) -> PartitionSpec {
        PartitionSpec {
            clusters: vec![vec![0, 1, 2, 3, 4], vec![5, 6, 7, 8, 9]],
            clients: vec![
                ClientPartition { majority_cluster: 0, majority_count: 30, minority_count: 5 },
                ClientPartition { majority_cluster: 1, majority_count: 30, minority_count: 5 },
            ],
            seed,
        }
    }

    #[test]
    fn exact_counts_and_reversed_majorities() {
        let ds = labeled_dataset();
        let (clients, manifest) = partition(&ds, &two_cluster_spec(3)).unwrap();
        assert_eq!(clients.len(), 2);
        for (ci, majority) in [(0usize, vec![0u16, 1, 2, 3, 4]), (1, vec![5, 6, 7, 8, 9])] {
            let b = &clients[ci];
            assert_eq!(b.count(), 35);
            assert_eq!(b.client_id(), Some(ci as u32));
            let in_majority =
                b.labels().unwrap().iter().filter(|l| majority.contains(l)).count();
            assert_eq!(in_majority, 30, "client {ci}");
        }
        assert_eq!(manifest.rows.len(), 70);
        let csv = manifest.to_csv();
        assert!(csv.starts_with("client_id,source_index,label\n"));
        assert_eq!(csv.lines().count(), 71);
    }

    #[test]
    fn client_index_sets_are_disjoint_and_deterministic() {
        let ds = labeled_dataset();
        let (_, m1) = partition(&ds, &two_cluster_spec(5)).unwrap();
        let (_, m2) = partition(&ds, &two_cluster_spec(5)).unwrap();
        assert_eq!(m1.rows, m2.rows);
        let (_, m3) = partition(&ds, &two_cluster_spec(6)).unwrap();
        assert_ne!(m1.rows, m3.rows);

        let mut seen = std::collections::HashSet::new();
        for (_, idx, _) in &m1.rows {
            assert!(seen.insert(*idx), "index {idx} assigned twice");
        }
    }

    #[test]
    fn rejects_empty_clients_overlap_and_exhaustion() {
        let ds = labeled_dataset();
        let mut spec = two_cluster_spec(1);
        spec.clients[0].majority_count = 0;
        spec.clients[0].minority_count = 0;
        assert!(partition(&ds, &spec).is_err());

        let mut spec = two_cluster_spec(1);
        spec.clusters[1][0] = 0; // overlap
        assert!(partition(&ds, &spec).is_err());

        let mut spec = two_cluster_spec(1);
        spec.clients[0].majority_count = 51; // only 50 in the cluster
        assert!(partition(&ds, &spec).is_err());
    }

    #[test]
    fn norm_report_on_zeros_and_saturated_pixels() {
        let zeros = SampleBatch::flat(Array2::zeros((3, 4)), None).unwrap();
        let policy = NormPolicy { mode: NormMode::Report, sample_bound: None, coord_bound: None };
        let (_, report) = apply_norm_policy(&zeros, &policy).unwrap();
        assert_eq!(report.max_l2, 0.0);
        assert_eq!(report.max_abs, 0.0);

        let mut data = Array2::zeros((2, 3));
        data[[1, 2]] = 1.0;
        let b = SampleBatch::flat(data, None).unwrap();
        let (_, report) = apply_norm_policy(&b, &policy).unwrap();
        assert_eq!(report.max_abs, 1.0);
    }

    #[test]
    fn clip_mode_enforces_the_ball() {
        let mut data = Array2::zeros((3, 4));
        data.row_mut(0).fill(2.0); // l2 = 4
        data.row_mut(1).fill(0.1);
        data[[2, 0]] = -3.0;
        let b = SampleBatch::flat(data, None).unwrap();
        let policy = NormPolicy { mode: NormMode::Clip, sample_bound: Some(1.0), coord_bound: Some(1.5) };
        let (out, report) = apply_norm_policy(&b, &policy).unwrap();
        for row in out.data().rows() {
            let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-6);
        }
        assert!(report.clamped_coords >= 1);
        assert!(report.clipped_samples >= 1);
        assert!(report.max_l2 <= 1.0 + 1e-6);

        let bad = NormPolicy { mode: NormMode::Clip, sample_bound: None, coord_bound: None };
        assert!(apply_norm_policy(&b, &bad).is_err());
    }
}
