//! Closed-form optimal denoiser for isotropic Gaussian-mixture data.
//!
//! For data `x_0` from a mixture with weights `w_k`, means `mu_k` and
//! isotropic variances `s_k^2`, the marginal of `x_t` given component `k`
//! is normal with mean `sqrt(a) mu_k` and per-coordinate variance
//! `a s_k^2 + 1 - a` where `a = alpha_bar_t`. The minimum-MSE noise
//! prediction is `(x_t - sqrt(a) E[x_0 | x_t]) / sqrt(1 - a)` with the
//! posterior mixed over component responsibilities.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Isotropic Gaussian mixture used as an analytic data distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl GaussianMixtureSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::Config("mixture component lists must be non-empty and equal length".into()));
        }
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, expected 1")));
        }
        if variances.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("mixture variances must be positive".into()));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::Config("mixture means must share a non-empty dimension".into()));
        }
        Ok(Self { weights, means, variances })
    }

    /// Single Gaussian `N(mu, s^2 I)`.
    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Draw `count` samples, seed-deterministic.
    pub fn sample(&self, count: usize, seed: u64) -> Result<SampleBatch> {
        let mut r = rng::stream(seed, "gmm/sample");
        let dim = self.dim();
        let mut data = Array2::zeros((count, dim));
        for mut row in data.rows_mut() {
            let u: f64 = r.gen();
            let mut acc = 0.0;
            let mut k = self.weights.len() - 1;
            for (i, &w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let s = self.variances[k].sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                let z: f64 = r.sample(StandardNormal);
                *v = (self.means[k][j] + s * z) as f32;
            }
        }
        SampleBatch::flat(data, None)
    }

    /// Exact mean vector of the mixture.
    pub fn mean(&self) -> Vec<f64> {
        let dim = self.dim();
        let mut m = vec![0.0; dim];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for j in 0..dim {
                m[j] += w * mu[j];
            }
        }
        m
    }

    /// Exact per-coordinate variance of the mixture.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let dim = self.dim();
        let mut v = vec![0.0; dim];
        for ((w, mu), s2) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for j in 0..dim {
                v[j] += w * (s2 + (mu[j] - m[j]).powi(2));
            }
        }
        v
    }

    /// The mixture of `t0`-diffused components: means scaled by
    /// `sqrt(alpha_bar)`, variances `a s_k^2 + 1 - a`. This is the data
    /// distribution the global model sees.
    pub fn diffused(&self, t0: usize, schedule: &NoiseSchedule) -> Result<Self> {
        if t0 == 0 || t0 > schedule.len() {
            return Err(Error::StepOutOfRange { t: t0, t_max: schedule.len() });
        }
        let a = schedule.alpha_bar(t0);
        let sa = a.sqrt();
        Self::new(
            self.weights.clone(),
            self.means.iter().map(|m| m.iter().map(|&x| sa * x).collect()).collect(),
            self.variances.iter().map(|&s2| a * s2 + 1.0 - a).collect(),
        )
    }

    /// Pool several mixtures with equal weight per source.
    pub fn pool(specs: &[GaussianMixtureSpec]) -> Result<Self> {
        let share = 1.0 / specs.len() as f64;
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut variances = Vec::new();
        for s in specs {
            for ((w, m), v) in s.weights.iter().zip(&s.means).zip(&s.variances) {
                weights.push(share * w);
                means.push(m.clone());
                variances.push(*v);
            }
        }
        // renormalize away accumulated rounding
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self::new(weights, means, variances)
    }
}

/// The analytic denoiser for a [`GaussianMixtureSpec`] under a fixed schedule.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    spec: GaussianMixtureSpec,
    schedule: NoiseSchedule,
    shape: Vec<usize>,
}

impl OracleDenoiser {
    pub fn new(spec: GaussianMixtureSpec, schedule: NoiseSchedule) -> Self {
        let shape = vec![spec.dim()];
        Self { spec, schedule, shape }
    }

    pub fn spec(&self) -> &GaussianMixtureSpec {
        &self.spec
    }

    /// Component responsibilities at `x_t`, normalized in log space.
    pub fn responsibilities(&self, x_t: &[f32], t: usize) -> Vec<f64> {
        let a = self.schedule.alpha_bar(t);
        let sa = a.sqrt();
        let d = self.spec.dim() as f64;
        let logs: Vec<f64> = self
            .spec
            .weights
            .iter()
            .zip(&self.spec.means)
            .zip(&self.spec.variances)
            .map(|((&w, mu), &s2)| {
                let v = a * s2 + 1.0 - a;
                let sq: f64 = x_t
                    .iter()
                    .zip(mu)
                    .map(|(&x, &m)| {
                        let diff = x as f64 - sa * m;
                        diff * diff
                    })
                    .sum();
                w.ln() - 0.5 * d * (v.ln() + std::f64::consts::TAU.ln()) - sq / (2.0 * v)
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut r: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = r.iter().sum();
        for v in &mut r {
            *v /= total;
        }
        r
    }

    /// `E[x_0 | x_t]` mixed over responsibilities.
    pub fn posterior_mean(&self, x_t: &[f32], t: usize) -> Vec<f64> {
        let a = self.schedule.alpha_bar(t);
        let sa = a.sqrt();
        let r = self.responsibilities(x_t, t);
        let dim = self.spec.dim();
        let mut out = vec![0.0f64; dim];
        for ((rk, mu), &s2) in r.iter().zip(&self.spec.means).zip(&self.spec.variances) {
            let gain = sa * s2 / (a * s2 + 1.0 - a);
            for j in 0..dim {
                out[j] += rk * (mu[j] + gain * (x_t[j] as f64 - sa * mu[j]));
            }
        }
        out
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, x_t: &Array2<f32>, ts: &[usize], _labels: Option<&[u16]>) -> Array2<f32> {
        assert_eq!(x_t.nrows(), ts.len(), "one step index per row");
        assert_eq!(x_t.ncols(), self.spec.dim(), "dimension mismatch");
        let mut out = Array2::zeros(x_t.raw_dim());
        for (i, &t) in ts.iter().enumerate() {
            let a = self.schedule.alpha_bar(t);
            let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
            let row: Vec<f32> = x_t.row(i).to_vec();
            let e = self.posterior_mean(&row, t);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = ((row[j] as f64 - sa * e[j]) / sn) as f32;
            }
        }
        out
    }

    fn sample_shape(&self) -> Vec<usize> {
        self.shape.clone()
    }

    fn clone_box(&self) -> Box<dyn Denoiser> {
        Box::new(self.clone())
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}

/// Convenience constructor mirroring the module-level operation name.
pub fn oracle_denoiser(spec: GaussianMixtureSpec, schedule: &NoiseSchedule) -> OracleDenoiser {
    OracleDenoiser::new(spec, schedule.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::SigmaMode;
    use ndarray::array;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02, SigmaMode::Beta).unwrap()
    }

    #[test]
    fn standard_normal_fixed_point() {
        // mu = 0, s^2 = 1: z_hat(x_t) = sqrt(1 - alpha_bar_t) x_t.
        let spec = GaussianMixtureSpec::new(vec![1.0], vec![vec![0.0, 0.0]], vec![1.0]).unwrap();
        let d = OracleDenoiser::new(spec, sched());
        for t in [1, 50, 400, 1000] {
            let x = array![[0.7f32, -1.3]];
            let z = d.predict(&x, &[t], None);
            let c = (1.0 - sched().alpha_bar(t)).sqrt() as f32;
            for j in 0..2 {
                assert!((z[[0, j]] - c * x[[0, j]]).abs() < 1e-6, "t={t}");
            }
        }
    }

    #[test]
    fn prediction_vanishes_at_scaled_mean() {
        let spec = GaussianMixtureSpec::new(vec![1.0], vec![vec![2.0, -1.0]], vec![0.5]).unwrap();
        let d = OracleDenoiser::new(spec, sched());
        let t = 300;
        let sa = sched().alpha_bar(t).sqrt();
        let x = array![[(2.0 * sa) as f32, (-sa) as f32]];
        let z = d.predict(&x, &[t], None);
        assert!(z.iter().all(|&v| v.abs() < 1e-6), "{z:?}");
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let spec = GaussianMixtureSpec::new(
            vec![0.25, 0.25, 0.5],
            vec![vec![-3.0], vec![0.0], vec![4.0]],
            vec![0.5, 1.0, 2.0],
        )
        .unwrap();
        let d = OracleDenoiser::new(spec, sched());
        for probe in [-50.0f32, -3.0, 0.0, 1.7, 80.0] {
            for t in [1, 100, 900] {
                let r = d.responsibilities(&[probe], t);
                let total: f64 = r.iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "probe={probe}, t={t}: {total}");
                assert!(r.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn matches_monte_carlo_conditional_expectation() {
        // Brute-force oracle: bin (x0, z) pairs by x_t near a probe and average z.
        let spec = GaussianMixtureSpec::new(
            vec![0.4, 0.6],
            vec![vec![-1.5], vec![1.0]],
            vec![0.3, 0.8],
        )
        .unwrap();
        let t = 350;
        let schedule = sched();
        let a = schedule.alpha_bar(t);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        let d = OracleDenoiser::new(spec.clone(), schedule.clone());

        let n = 1_000_000usize;
        let x0 = spec.sample(n, 99).unwrap();
        let mut zs = Vec::with_capacity(n);
        let mut xts = Vec::with_capacity(n);
        let mut zr = rng::stream(77, "mc/z");
        for i in 0..n {
            let z: f64 = zr.sample(StandardNormal);
            zs.push(z);
            xts.push(sa * x0.data()[[i, 0]] as f64 + sn * z);
        }
        // probes sit where the prediction is well away from zero so a
        // relative comparison is meaningful
        let width = 0.05;
        for probe in [-0.9f64, 0.8] {
            let mut sum = 0.0f64;
            let mut count = 0usize;
            for (&z, &xt) in zs.iter().zip(&xts) {
                if (xt - probe).abs() < width {
                    sum += z;
                    count += 1;
                }
            }
            assert!(count > 10_000, "bin too sparse at probe {probe}: {count}");
            let mc = sum / count as f64;
            let analytic = d.predict(&array![[probe as f32]], &[t], None)[[0, 0]] as f64;
            let rel = (mc - analytic).abs() / analytic.abs();
            assert!(rel < 0.02, "probe {probe}: mc {mc} vs analytic {analytic} (rel {rel})");
        }
    }

    #[test]
    fn oracle_loss_never_exceeds_a_trained_network() {
        // optimality of the conditional expectation: whatever the training
        // budget, the analytic denoiser's loss lower-bounds the network's
        // (up to Monte-Carlo noise on the shared evaluation draws)
        use crate::denoiser::{build_trainable_denoiser, TrainingConfig};
        use crate::diffusion::{ddpm_loss, train_ddpm};

        let schedule = NoiseSchedule::linear(60, 1e-3, 0.05, SigmaMode::Beta).unwrap();
        let spec = GaussianMixtureSpec::new(
            vec![0.5, 0.5],
            vec![vec![-1.0, 0.5], vec![1.0, -0.5]],
            vec![0.25, 0.5],
        )
        .unwrap();
        let oracle = OracleDenoiser::new(spec.clone(), schedule.clone());
        let data = spec.sample(512, 61).unwrap();
        let cfg = TrainingConfig {
            steps: 1500,
            batch_size: 32,
            learning_rate: 2e-3,
            hidden: vec![24, 24],
            time_embed_dim: 8,
            seed: 62,
            ..TrainingConfig::default()
        };
        let net = build_trainable_denoiser(&cfg, &[2], 60, None).unwrap();
        let trained = train_ddpm(&data, 60, &schedule, Box::new(net), &cfg).unwrap().denoiser;

        let eval = spec.sample(4000, 63).unwrap();
        let mut zr = rng::stream(64, "opt-eval");
        for t in (1..=60).step_by(7) {
            let z = crate::rng::standard_normal(&mut zr, 4000, 2);
            let lo = ddpm_loss(&oracle, &eval, t, &z, &schedule).unwrap();
            let ln = ddpm_loss(trained.as_ref(), &eval, t, &z, &schedule).unwrap();
            // generous Monte-Carlo allowance; the gap is usually clear
            assert!(lo <= ln + 0.02, "t={t}: oracle {lo} vs trained {ln}");
        }
    }

    #[test]
    fn mixture_moments_are_exact() {
        let spec = GaussianMixtureSpec::new(
            vec![0.5, 0.5],
            vec![vec![-1.0], vec![3.0]],
            vec![1.0, 4.0],
        )
        .unwrap();
        assert_eq!(spec.mean(), vec![1.0]);
        // var = E[s^2] + Var(mu) = 2.5 + 4.0
        assert_eq!(spec.variance(), vec![6.5]);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(GaussianMixtureSpec::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixtureSpec::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
        assert!(GaussianMixtureSpec::new(vec![1.0], vec![vec![]], vec![1.0]).is_err());
    }
}
