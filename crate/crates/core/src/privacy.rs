//! Exact analytic accountant for the local-DP guarantee of releasing
//! forward-diffused data.
//!
//! Releasing `x_tilde = sqrt(alpha_bar_t0) x + sqrt(1 - alpha_bar_t0) z`
//! is a Gaussian mechanism with l2-sensitivity `2 sqrt(alpha_bar_t0) b`
//! and noise variance `1 - alpha_bar_t0`, hence `(gamma, gamma tau)`-RDP
//! with `tau = 2 alpha_bar_t0 b^2 / (1 - alpha_bar_t0)`. Conversion to
//! `(epsilon, delta)`-DP uses natural logarithms throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Whether the bound is a whole-sample l2 bound `C` or a per-coordinate
/// bound `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    PerSample,
    PerCoordinate,
}

impl std::fmt::Display for BoundMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundMode::PerSample => write!(f, "per_sample"),
            BoundMode::PerCoordinate => write!(f, "per_coordinate"),
        }
    }
}

/// Inputs to the accountant. `group_size > 1` asks for the k-coordinate
/// group guarantee and requires per-coordinate mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyQuery {
    pub t0: usize,
    pub bound: f64,
    pub mode: BoundMode,
    pub delta: f64,
    pub group_size: u32,
}

impl PrivacyQuery {
    pub fn new(t0: usize, bound: f64, mode: BoundMode, delta: f64) -> Self {
        Self { t0, bound, mode, delta, group_size: 1 }
    }

    pub fn with_group_size(mut self, k: u32) -> Self {
        self.group_size = k;
        self
    }

    fn validate(&self, schedule: &NoiseSchedule) -> Result<()> {
        if self.t0 == 0 || self.t0 > schedule.len() {
            return Err(Error::StepOutOfRange { t: self.t0, t_max: schedule.len() });
        }
        if !(self.bound >= 0.0 && self.bound.is_finite()) {
            return Err(Error::Privacy("bound must be finite and nonnegative".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Privacy("delta must lie in (0, 1)".into()));
        }
        if self.group_size == 0 {
            return Err(Error::Privacy("group size must be at least 1".into()));
        }
        Ok(())
    }
}

/// The accountant's output. `gamma_star` is `None` when `tau = 0` (the
/// optimal Renyi order diverges; epsilon is 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub t0: usize,
    pub alpha_bar_t0: f64,
    pub bound: f64,
    pub mode: BoundMode,
    pub delta: f64,
    pub group_size: u32,
    pub tau: f64,
    pub gamma_star: Option<f64>,
    pub epsilon: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
}

/// RDP rate coefficient `tau = 2 alpha_bar_t0 bound^2 / (1 - alpha_bar_t0)`.
///
/// Underflow of `alpha_bar` at large `t0` yields the valid limit 0.
pub fn rdp_tau(t0: usize, bound: f64, schedule: &NoiseSchedule) -> f64 {
    let a = schedule.alpha_bar(t0);
    2.0 * a * bound * bound / (1.0 - a)
}

/// Convert a `(gamma, rho)`-RDP guarantee to `(epsilon, delta)`-DP:
/// `epsilon = rho + ln(1/delta) / (gamma - 1)`.
pub fn rdp_to_dp(gamma: f64, rho: f64, delta: f64) -> Result<f64> {
    if !(gamma > 1.0) {
        return Err(Error::Privacy(format!("gamma must exceed 1, got {gamma}")));
    }
    if rho < 0.0 {
        return Err(Error::Privacy("rho must be nonnegative".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Privacy("delta must lie in (0, 1)".into()));
    }
    Ok(rho + (1.0 / delta).ln() / (gamma - 1.0))
}

fn epsilon_components(t0: usize, bound: f64, schedule: &NoiseSchedule) -> (f64, f64, f64) {
    let a = schedule.alpha_bar(t0);
    let tau = rdp_tau(t0, bound, schedule);
    // epsilon1 = tau, epsilon2 = sqrt(8 b^2 abar / (1 - abar));
    // the optimal-order epsilon is epsilon1 + epsilon2 sqrt(ln(1/delta)).
    let eps2 = (8.0 * bound * bound * a / (1.0 - a)).sqrt();
    (tau, tau, eps2)
}

/// Optimal-order epsilon for a single sample or coordinate (`k = 1`):
/// minimize `gamma tau + ln(1/delta)/(gamma-1)` at
/// `gamma* = 1 + sqrt(ln(1/delta)/tau)`, giving
/// `epsilon = tau + 2 sqrt(tau ln(1/delta))`.
pub fn theorem1_epsilon(schedule: &NoiseSchedule, query: &PrivacyQuery) -> Result<PrivacyReport> {
    query.validate(schedule)?;
    if query.group_size != 1 {
        return Err(Error::Privacy("use group_epsilon for group size > 1".into()));
    }
    let (tau, eps1, eps2) = epsilon_components(query.t0, query.bound, schedule);
    let ln_inv_delta = (1.0 / query.delta).ln();
    let (gamma_star, epsilon) = if tau == 0.0 {
        (None, 0.0)
    } else {
        (Some(1.0 + (ln_inv_delta / tau).sqrt()), tau + 2.0 * (tau * ln_inv_delta).sqrt())
    };
    Ok(PrivacyReport {
        t0: query.t0,
        alpha_bar_t0: schedule.alpha_bar(query.t0),
        bound: query.bound,
        mode: query.mode,
        delta: query.delta,
        group_size: 1,
        tau,
        gamma_star,
        epsilon,
        epsilon1: eps1,
        epsilon2: eps2,
    })
}

/// Group guarantee for `k` coordinates:
/// `epsilon = k eps1 + k eps2 sqrt(5 + k (eps1 + eps2))`, applied exactly
/// as stated (it does not reduce to [`theorem1_epsilon`] at `k = 1`).
pub fn group_epsilon(schedule: &NoiseSchedule, query: &PrivacyQuery) -> Result<PrivacyReport> {
    query.validate(schedule)?;
    if query.mode != BoundMode::PerCoordinate {
        return Err(Error::Privacy("group privacy applies to per-coordinate bounds".into()));
    }
    let (tau, eps1, eps2) = epsilon_components(query.t0, query.bound, schedule);
    let k = query.group_size as f64;
    let epsilon = k * eps1 + k * eps2 * (5.0 + k * (eps1 + eps2)).sqrt();
    Ok(PrivacyReport {
        t0: query.t0,
        alpha_bar_t0: schedule.alpha_bar(query.t0),
        bound: query.bound,
        mode: query.mode,
        delta: query.delta,
        group_size: query.group_size,
        tau,
        gamma_star: None,
        epsilon,
        epsilon1: eps1,
        epsilon2: eps2,
    })
}

/// Smallest `t0` whose epsilon does not exceed `target`. Epsilon is
/// strictly decreasing in `t0`, so binary search applies; an unreachable
/// target is an explicit error, never a clamp.
pub fn min_t0_for_epsilon(
    target: f64,
    bound: f64,
    mode: BoundMode,
    delta: f64,
    schedule: &NoiseSchedule,
) -> Result<usize> {
    if !(target > 0.0) {
        return Err(Error::Privacy("target epsilon must be positive".into()));
    }
    let eps_at = |t0: usize| -> Result<f64> {
        Ok(theorem1_epsilon(schedule, &PrivacyQuery::new(t0, bound, mode, delta))?.epsilon)
    };
    let t_max = schedule.len();
    let at_end = eps_at(t_max)?;
    if at_end > target {
        return Err(Error::TargetUnreachable { target, at_t_max: at_end });
    }
    let (mut lo, mut hi) = (1usize, t_max);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if eps_at(mid)? <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// One row of the trade-off table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub t0: usize,
    pub alpha_bar: f64,
    pub tau: f64,
    pub gamma_star: Option<f64>,
    pub epsilon: f64,
}

/// Evaluate the accountant at every `t0`; epsilon is strictly decreasing
/// down the table.
pub fn budget_sweep(
    schedule: &NoiseSchedule,
    bound: f64,
    delta: f64,
    mode: BoundMode,
) -> Result<Vec<SweepRow>> {
    (1..=schedule.len())
        .map(|t0| {
            let r = theorem1_epsilon(schedule, &PrivacyQuery::new(t0, bound, mode, delta))?;
            Ok(SweepRow {
                t0,
                alpha_bar: r.alpha_bar_t0,
                tau: r.tau,
                gamma_star: r.gamma_star,
                epsilon: r.epsilon,
            })
        })
        .collect()
}

/// Render a sweep as CSV with header `t0,alpha_bar,tau,gamma_star,epsilon`.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("t0,alpha_bar,tau,gamma_star,epsilon\n");
    for r in rows {
        let gamma = r.gamma_star.map_or_else(|| "inf".to_string(), |g| format!("{g:.12e}"));
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{},{:.12e}\n",
            r.t0, r.alpha_bar, r.tau, gamma, r.epsilon
        ));
    }
    out
}

/// Human-readable single-query report.
pub fn report_text(r: &PrivacyReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "privacy report: t0={}, bound={} ({}), delta={:e}, k={}\n",
        r.t0, r.bound, r.mode, r.delta, r.group_size
    ));
    out.push_str(&format!("  alpha_bar(t0) = {:.6}\n", r.alpha_bar_t0));
    out.push_str(&format!("  tau           = {:.6}\n", r.tau));
    match r.gamma_star {
        Some(g) => out.push_str(&format!("  gamma*        = {g:.6}\n")),
        None => out.push_str("  gamma*        = inf\n"),
    }
    out.push_str(&format!("  epsilon1      = {:.6}\n", r.epsilon1));
    out.push_str(&format!("  epsilon2      = {:.6}\n", r.epsilon2));
    out.push_str(&format!("  epsilon       = {:.6}\n", r.epsilon));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::SigmaMode;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 1e-4, 0.02, SigmaMode::Beta).unwrap()
    }

    #[test]
    fn tau_reference_values() {
        let s = sched();
        assert_eq!(rdp_tau(400, 0.0, &s), 0.0);
        // Frozen from the cumulative-product oracle over the closed-form betas.
        assert!((rdp_tau(400, 1.0, &s) - 0.484924105025).abs() < 1e-9, "{}", rdp_tau(400, 1.0, &s));
        assert!((rdp_tau(100, 1.0, &s) - 17.420897138708).abs() < 1e-8, "{}", rdp_tau(100, 1.0, &s));
    }

    #[test]
    fn rdp_to_dp_direct_substitution() {
        assert!((rdp_to_dp(2.0, 0.0, (-1.0f64).exp()).unwrap() - 1.0).abs() < 1e-15);
        assert!((rdp_to_dp(3.0, 1.0, (-2.0f64).exp()).unwrap() - 2.0).abs() < 1e-15);
        assert!(rdp_to_dp(1.0, 0.0, 0.5).is_err());
        assert!(rdp_to_dp(0.5, 0.0, 0.5).is_err());
    }

    #[test]
    fn whole_image_epsilon_matches_published_value() {
        let r = theorem1_epsilon(
            &sched(),
            &PrivacyQuery::new(400, 10.0, BoundMode::PerSample, 1e-5),
        )
        .unwrap();
        assert!((r.epsilon - 95.0).abs() < 1.5, "epsilon {}", r.epsilon);
        // frozen exact value
        assert!((r.epsilon - 95.748711996887).abs() < 1e-8, "epsilon {}", r.epsilon);
    }

    #[test]
    fn per_pixel_epsilon_matches_published_value() {
        let r = theorem1_epsilon(
            &sched(),
            &PrivacyQuery::new(400, 1.0, BoundMode::PerCoordinate, 1e-5),
        )
        .unwrap();
        assert!((r.epsilon - 5.2).abs() < 0.1, "epsilon {}", r.epsilon);
        assert!((r.epsilon - 5.210554254464).abs() < 1e-8, "epsilon {}", r.epsilon);
        assert!((r.gamma_star.unwrap() - 5.872546137085).abs() < 1e-8);
    }

    #[test]
    fn early_split_epsilon_matches_published_value() {
        let r = theorem1_epsilon(
            &sched(),
            &PrivacyQuery::new(100, 1.0, BoundMode::PerCoordinate, 1e-5),
        )
        .unwrap();
        assert!((r.epsilon - 45.0).abs() < 1.0, "epsilon {}", r.epsilon);
        assert!((r.epsilon - 45.745126363233).abs() < 1e-8, "epsilon {}", r.epsilon);
    }

    #[test]
    fn group_epsilon_matches_published_value() {
        let q = PrivacyQuery::new(400, 1.0, BoundMode::PerCoordinate, 1e-5).with_group_size(10);
        let r = group_epsilon(&sched(), &q).unwrap();
        assert!((r.epsilon - 72.0).abs() < 1.5, "epsilon {}", r.epsilon);
        assert!((r.epsilon - 72.760409898730).abs() < 1e-8, "epsilon {}", r.epsilon);
        // per-sample mode is rejected
        let bad = PrivacyQuery::new(400, 1.0, BoundMode::PerSample, 1e-5).with_group_size(10);
        assert!(group_epsilon(&sched(), &bad).is_err());
    }

    #[test]
    fn group_epsilon_zero_components_and_monotone_in_k() {
        let s = sched();
        let zero = group_epsilon(&s, &PrivacyQuery::new(400, 0.0, BoundMode::PerCoordinate, 1e-5))
            .unwrap();
        assert_eq!(zero.epsilon, 0.0);
        let mut last = 0.0;
        for k in 1..=50 {
            let q = PrivacyQuery::new(400, 1.0, BoundMode::PerCoordinate, 1e-5).with_group_size(k);
            let e = group_epsilon(&s, &q).unwrap().epsilon;
            assert!(e > last, "k={k}: {e} <= {last}");
            last = e;
        }
    }

    #[test]
    fn gamma_star_minimizes_the_conversion_over_a_grid() {
        let s = sched();
        for (t0, bound) in [(400usize, 1.0f64), (100, 1.0), (400, 10.0), (700, 0.5)] {
            let q = PrivacyQuery::new(t0, bound, BoundMode::PerCoordinate, 1e-5);
            let r = theorem1_epsilon(&s, &q).unwrap();
            let tau = r.tau;
            let mut best = f64::INFINITY;
            let mut arg = 0.0;
            // fine grid over gamma in (1, 1000]
            for i in 1..=2_000_000u64 {
                let gamma = 1.0 + i as f64 * 0.0005;
                let eps = rdp_to_dp(gamma, gamma * tau, 1e-5).unwrap();
                if eps < best {
                    best = eps;
                    arg = gamma;
                }
            }
            assert!(
                (r.epsilon - best) / best < 1e-6,
                "t0={t0}: closed form {} vs grid {best} at gamma {arg}",
                r.epsilon
            );
            assert!((r.gamma_star.unwrap() - arg).abs() < 0.001, "gamma {} vs {arg}", r.gamma_star.unwrap());
        }
    }

    #[test]
    fn epsilon_monotone_in_t0_and_bound() {
        let s = sched();
        let rows = budget_sweep(&s, 1.0, 1e-5, BoundMode::PerCoordinate).unwrap();
        assert_eq!(rows.len(), 1000);
        for w in rows.windows(2) {
            assert!(w[1].epsilon < w[0].epsilon, "t0={}", w[1].t0);
        }
        // increasing in bound
        let e1 = theorem1_epsilon(&s, &PrivacyQuery::new(300, 1.0, BoundMode::PerSample, 1e-5))
            .unwrap()
            .epsilon;
        let e2 = theorem1_epsilon(&s, &PrivacyQuery::new(300, 2.0, BoundMode::PerSample, 1e-5))
            .unwrap()
            .epsilon;
        assert!(e2 > e1);
        // bound scaling: tau term quadratic, sqrt term linear
        let r1 = theorem1_epsilon(&s, &PrivacyQuery::new(300, 1.0, BoundMode::PerSample, 1e-5)).unwrap();
        let r2 = theorem1_epsilon(&s, &PrivacyQuery::new(300, 2.0, BoundMode::PerSample, 1e-5)).unwrap();
        let ln_inv_delta = (1.0f64 / 1e-5).ln();
        let expect = 4.0 * r1.tau + 2.0 * (4.0 * r1.tau * ln_inv_delta).sqrt();
        assert!((r2.epsilon - expect).abs() < 1e-10);
    }

    #[test]
    fn sweep_rows_match_single_queries_exactly() {
        let s = sched();
        let rows = budget_sweep(&s, 1.0, 1e-5, BoundMode::PerCoordinate).unwrap();
        let r400 = theorem1_epsilon(&s, &PrivacyQuery::new(400, 1.0, BoundMode::PerCoordinate, 1e-5))
            .unwrap();
        let row = &rows[399];
        assert_eq!(row.epsilon.to_bits(), r400.epsilon.to_bits());
        assert_eq!(row.tau.to_bits(), r400.tau.to_bits());
    }

    #[test]
    fn inverse_solver_brackets_the_target() {
        let s = sched();
        // invert the Fig. 2 operating point
        let t0 = min_t0_for_epsilon(16.6, 1.0, BoundMode::PerCoordinate, 1e-5, &s).unwrap();
        assert_eq!(t0, 205);
        let at = theorem1_epsilon(&s, &PrivacyQuery::new(t0, 1.0, BoundMode::PerCoordinate, 1e-5))
            .unwrap()
            .epsilon;
        let before =
            theorem1_epsilon(&s, &PrivacyQuery::new(t0 - 1, 1.0, BoundMode::PerCoordinate, 1e-5))
                .unwrap()
                .epsilon;
        assert!(at <= 16.6 && before > 16.6);

        // self-consistency: the solver returns a step no later than the probe
        let probe = theorem1_epsilon(&s, &PrivacyQuery::new(400, 1.0, BoundMode::PerCoordinate, 1e-5))
            .unwrap()
            .epsilon;
        let back = min_t0_for_epsilon(probe, 1.0, BoundMode::PerCoordinate, 1e-5, &s).unwrap();
        assert!(back <= 400);

        // unreachable target
        let err = min_t0_for_epsilon(1e-9, 1.0, BoundMode::PerCoordinate, 1e-5, &s);
        assert!(matches!(err, Err(Error::TargetUnreachable { .. })));
    }

    #[test]
    fn reports_are_deterministic() {
        let s = sched();
        let q = PrivacyQuery::new(123, 3.2, BoundMode::PerSample, 1e-6);
        let a = theorem1_epsilon(&s, &q).unwrap();
        let b = theorem1_epsilon(&s, &q).unwrap();
        assert_eq!(a.epsilon.to_bits(), b.epsilon.to_bits());
        assert_eq!(a.tau.to_bits(), b.tau.to_bits());
    }
}
