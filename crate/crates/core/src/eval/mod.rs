//! Desk-scale generation-quality metrics and the downstream-classifier
//! harness.

mod classifier;
mod grid;

pub use classifier::{
    downstream_accuracy, per_class_report, read_classifier, train_classifier, write_classifier,
    Classifier, ClassifierConfig,
};
pub use grid::{save_grid_png, save_trajectory_png};

use ndarray::ArrayView2;
use serde::Serialize;

use crate::batch::SampleBatch;
use crate::denoiser::GaussianMixtureSpec;
use crate::error::{Error, Result};

/// Result of a metric computation. `aggregate` is the count-weighted mean
/// of the per-class values when per-class values exist.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    /// (class, value, sample count)
    pub per_class: Vec<(u16, f64, usize)>,
    pub aggregate: f64,
    pub count: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricReport {
    pub fn scalar(metric: &str, value: f64, count: usize) -> Self {
        Self {
            metric: metric.to_string(),
            per_class: Vec::new(),
            aggregate: value,
            count,
            seed: 0,
            config_hash: String::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,class,value,count\n");
        for (c, v, n) in &self.per_class {
            out.push_str(&format!("{},{c},{v:.12e},{n}\n", self.metric));
        }
        out.push_str(&format!("{},aggregate,{:.12e},{}\n", self.metric, self.aggregate, self.count));
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{}: {:.6} over {} samples\n", self.metric, self.aggregate, self.count);
        for (c, v, n) in &self.per_class {
            out.push_str(&format!("  class {c}: {v:.6} ({n} samples)\n"));
        }
        out
    }
}

/// Squared 2-Wasserstein distance between the empirical Gaussian of
/// `samples` and a single-component isotropic target:
/// `||mean - mu||^2 + sum_j (sqrt(var_j) - s)^2`.
pub fn gaussian_moment_distance(samples: &SampleBatch, target: &GaussianMixtureSpec) -> Result<f64> {
    if target.weights.len() != 1 {
        return Err(Error::Metric("target must be a single Gaussian".into()));
    }
    if samples.count() < 2 {
        return Err(Error::Metric("need at least two samples".into()));
    }
    if samples.flat_dim() != target.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![target.dim()],
            got: vec![samples.flat_dim()],
        });
    }
    let n = samples.count() as f64;
    let s = target.variances[0].sqrt();
    let mut dist = 0.0f64;
    for (j, col) in samples.data().columns().into_iter().enumerate() {
        let mean = col.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = col.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        dist += (mean - target.means[0][j]).powi(2);
        // var = 0 falls out of the same branch: (0 - s)^2
        dist += (var.sqrt() - s).powi(2);
    }
    Ok(dist)
}

/// How the RBF bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// median pairwise distance over the pooled samples
    Median,
    Fixed(f64),
}

fn sq_dist(a: ArrayView2<f32>, i: usize, b: ArrayView2<f32>, j: usize) -> f64 {
    a.row(i)
        .iter()
        .zip(b.row(j).iter())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum()
}

/// Unbiased squared maximum mean discrepancy with an RBF kernel
/// `k(x, y) = exp(-||x-y||^2 / (2 h^2))`.
///
/// Returns `(mmd2, bandwidth)`. The unbiased estimator can be slightly
/// negative for identical distributions.
pub fn kernel_mmd(a: &SampleBatch, b: &SampleBatch, bandwidth: Bandwidth) -> Result<(f64, f64)> {
    if a.flat_dim() != b.flat_dim() {
        return Err(Error::ShapeMismatch { expected: vec![a.flat_dim()], got: vec![b.flat_dim()] });
    }
    let (m, n) = (a.count(), b.count());
    if m < 2 || n < 2 {
        return Err(Error::Metric("need at least two samples on each side".into()));
    }
    let h = match bandwidth {
        Bandwidth::Fixed(h) if h > 0.0 => h,
        Bandwidth::Fixed(_) => return Err(Error::Metric("bandwidth must be positive".into())),
        Bandwidth::Median => {
            // median over the pooled set, deterministically subsampled
            let cap = 512usize;
            let rows_a: Vec<usize> = stride_sample(m, cap / 2);
            let rows_b: Vec<usize> = stride_sample(n, cap / 2);
            let mut dists = Vec::new();
            let pooled: Vec<(bool, usize)> = rows_a
                .iter()
                .map(|&i| (true, i))
                .chain(rows_b.iter().map(|&j| (false, j)))
                .collect();
            for (pi, &(sa, i)) in pooled.iter().enumerate() {
                for &(sb, j) in pooled.iter().skip(pi + 1) {
                    let (va, ia) = if sa { (a.data(), i) } else { (b.data(), i) };
                    let (vb, ib) = if sb { (a.data(), j) } else { (b.data(), j) };
                    let d = sq_dist(va, ia, vb, ib).sqrt();
                    if d > 0.0 {
                        dists.push(d);
                    }
                }
            }
            if dists.is_empty() {
                1.0
            } else {
                dists.sort_by(|x, y| x.partial_cmp(y).unwrap());
                dists[dists.len() / 2]
            }
        }
    };
    let gamma = 1.0 / (2.0 * h * h);
    let k = |a_: ArrayView2<f32>, i: usize, b_: ArrayView2<f32>, j: usize| -> f64 {
        (-gamma * sq_dist(a_, i, b_, j)).exp()
    };

    let mut kaa = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kaa += k(a.data(), i, a.data(), j);
            }
        }
    }
    kaa /= (m * (m - 1)) as f64;
    let mut kbb = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kbb += k(b.data(), i, b.data(), j);
            }
        }
    }
    kbb /= (n * (n - 1)) as f64;
    let mut kab = 0.0f64;
    for i in 0..m {
        for j in 0..n {
            kab += k(a.data(), i, b.data(), j);
        }
    }
    kab /= (m * n) as f64;

    Ok((kaa + kbb - 2.0 * kab, h))
}

fn stride_sample(n: usize, cap: usize) -> Vec<usize> {
    if n <= cap {
        (0..n).collect()
    } else {
        (0..cap).map(|i| i * n / cap).collect()
    }
}
