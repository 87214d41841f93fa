//! Noise schedules for the forward and reverse diffusion processes.
//!
//! Time indices are 1-based throughout, matching the convention that
//! `alpha_bar(t)` is the cumulative product over steps `1..=t` with
//! `alpha_bar(0) := 1`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Which per-step standard deviation the reverse sampler uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `sigma_t = sqrt(beta_t)` (Ho-style default).
    #[default]
    Beta,
    /// `sigma_t = sqrt(beta_tilde_t)`, the forward-posterior standard deviation.
    Posterior,
}

/// Precomputed per-step quantities for a `T`-step diffusion process.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
    sigmas: Vec<f64>,
    sigma_mode: SigmaMode,
}

impl NoiseSchedule {
    /// Linear beta schedule from `beta_start` to `beta_end` over `t_steps` steps.
    ///
    /// For `t_steps = 1` the single beta is `beta_start`.
    pub fn linear(
        t_steps: usize,
        beta_start: f64,
        beta_end: f64,
        sigma_mode: SigmaMode,
    ) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::Schedule("step count must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
            )));
        }
        let betas: Vec<f64> = if t_steps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (t_steps - 1) as f64;
            (0..t_steps).map(|i| beta_start + i as f64 * step).collect()
        };
        Ok(Self::from_betas(betas, sigma_mode))
    }

    fn from_betas(betas: Vec<f64>, sigma_mode: SigmaMode) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0f64;
        for &beta in &betas {
            acc *= 1.0 - beta;
            alpha_bars.push(acc);
        }
        // beta_tilde_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t, with alpha_bar_0 = 1,
        // so beta_tilde_1 = 0.
        let posterior_vars: Vec<f64> = betas
            .iter()
            .enumerate()
            .map(|(i, &beta)| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[i]) * beta
            })
            .collect();
        let sigmas: Vec<f64> = match sigma_mode {
            SigmaMode::Beta => betas.iter().map(|b| b.sqrt()).collect(),
            SigmaMode::Posterior => posterior_vars.iter().map(|v| v.sqrt()).collect(),
        };
        Self { betas, alpha_bars, posterior_vars, sigmas, sigma_mode }
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            Err(Error::StepOutOfRange { t, t_max: self.len() })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check(t).expect("step index");
        self.betas[t - 1]
    }

    /// Cumulative signal retention `alpha_bar(t)`; `t = 0` returns 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        self.check(t).expect("step index");
        self.alpha_bars[t - 1]
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.check(t).expect("step index");
        self.posterior_vars[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.check(t).expect("step index");
        self.sigmas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// SHA-256 over the beta table; identifies the schedule in protocol messages.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u32).to_le_bytes());
        for &beta in &self.betas {
            hasher.update(beta.to_le_bytes());
        }
        hasher.finalize().into()
    }

    /// Plain-text table `t beta alpha_bar sigma` at 17 significant digits,
    /// for cross-implementation comparison.
    pub fn to_table(&self) -> String {
        let mut out = String::from("t\tbeta\talpha_bar\tsigma\n");
        for t in 1..=self.len() {
            out.push_str(&format!(
                "{}\t{:.16e}\t{:.16e}\t{:.16e}\n",
                t,
                self.beta(t),
                self.alpha_bar(t),
                self.sigma(t)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02, SigmaMode::Beta).unwrap()
    }

    #[test]
    fn linear_endpoints_and_first_alpha_bar() {
        let s = standard();
        assert_eq!(s.len(), 1000);
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 0.02);
        // alpha_bar_1 = 1 - beta_1
        assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
    }

    #[test]
    fn cumulative_product_reference_values() {
        // Independent oracle: direct product over the closed-form betas.
        let oracle = |t: usize| -> f64 {
            (1..=t)
                .map(|s| 1.0 - (1e-4 + (s - 1) as f64 * (0.02 - 1e-4) / 999.0))
                .product()
        };
        let s = standard();
        for t in [1, 2, 100, 400, 999, 1000] {
            let rel = (s.alpha_bar(t) - oracle(t)).abs() / oracle(t);
            assert!(rel < 1e-12, "t={t}: {} vs {}", s.alpha_bar(t), oracle(t));
        }
        // Frozen values computed with the oracle above.
        assert!((s.alpha_bar(400) - 0.195146444933).abs() < 1e-9, "{}", s.alpha_bar(400));
        assert!((s.alpha_bar(100) - 0.897018145675).abs() < 1e-9, "{}", s.alpha_bar(100));
        assert!((s.alpha_bar(1000) - 4.0358297654e-5).abs() < 1e-12, "{}", s.alpha_bar(1000));
        // "x_T nearly standard Gaussian": alpha_bar_T below 1e-4.
        assert!(s.alpha_bar(1000) < 1e-4);
    }

    #[test]
    fn recurrence_holds_everywhere() {
        let s = standard();
        for t in 1..=s.len() {
            let expect = s.alpha_bar(t - 1) * (1.0 - s.beta(t));
            let rel = (s.alpha_bar(t) - expect).abs() / expect;
            assert!(rel < 1e-12);
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) < 1.0);
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
    }

    #[test]
    fn posterior_variance_definition() {
        let s = standard();
        assert_eq!(s.posterior_var(1), 0.0);
        for t in 2..=s.len() {
            let expect = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
            assert!((s.posterior_var(t) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn sigma_modes() {
        let b = standard();
        let p = NoiseSchedule::linear(1000, 1e-4, 0.02, SigmaMode::Posterior).unwrap();
        for t in 1..=1000 {
            assert_eq!(b.sigma(t), b.beta(t).sqrt());
            assert_eq!(p.sigma(t), p.posterior_var(t).sqrt());
            assert!(b.sigma(t) >= 0.0 && p.sigma(t) >= 0.0);
        }
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 0.3, 0.9, SigmaMode::Beta).unwrap();
        assert_eq!(s.beta(1), 0.3);
        assert_eq!(s.alpha_bar(1), 0.7);
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02, SigmaMode::Beta).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.02, SigmaMode::Beta).is_err());
        assert!(NoiseSchedule::linear(10, 0.02, 1e-4, SigmaMode::Beta).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 1.0, SigmaMode::Beta).is_err());
    }

    #[test]
    fn fingerprint_distinguishes_schedules() {
        let a = standard();
        let b = NoiseSchedule::linear(1000, 1e-4, 0.021, SigmaMode::Beta).unwrap();
        let c = NoiseSchedule::linear(1000, 1e-4, 0.02, SigmaMode::Posterior).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        // The fingerprint hashes the beta table; sigma mode is sampler-side.
        assert_eq!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn table_round_trips_at_full_precision() {
        let s = standard();
        let table = s.to_table();
        let mut lines = table.lines();
        assert_eq!(lines.next(), Some("t\tbeta\talpha_bar\tsigma"));
        for (t, line) in (1..=s.len()).zip(lines) {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols[0].parse::<usize>().unwrap(), t);
            assert_eq!(cols[1].parse::<f64>().unwrap(), s.beta(t));
            assert_eq!(cols[2].parse::<f64>().unwrap(), s.alpha_bar(t));
            assert_eq!(cols[3].parse::<f64>().unwrap(), s.sigma(t));
        }
    }
}
