pub mod account;
pub mod eval;
pub mod gen_data;
pub mod partition;
pub mod run;
pub mod sample;
pub mod schedule;

use pfdm_client::types::ScheduleParams;
use pfdm_core::config::ScheduleConfig;
use pfdm_core::SigmaMode;

pub(crate) fn schedule_params(cfg: &ScheduleConfig) -> ScheduleParams {
    ScheduleParams {
        t_steps: cfg.t_steps,
        beta_start: cfg.beta_start,
        beta_end: cfg.beta_end,
        sigma_mode: match cfg.sigma_mode {
            SigmaMode::Beta => "beta".to_string(),
            SigmaMode::Posterior => "posterior".to_string(),
        },
    }
}
