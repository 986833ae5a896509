//! Parametric accelerated failure time models fitted by weighted maximum
//! likelihood.

mod gengamma;
mod weibull;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::StepCurve;

pub use gengamma::{
    fit_gengamma, fit_gengamma_from, gengamma_loglik, gengamma_loglik_fixed_q, gengamma_survival, log_density_w,
    log_surv_w, loglik_gradient, standard_errors, start_from_weibull, surv_w, LOGNORMAL_SWITCH,
};
pub use weibull::{fit_weibull_ls, weibull_ls_log_hazard_ratio, weibull_ls_survival};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AftFamily {
    WeibullLs,
    Gengamma,
}

impl AftFamily {
    pub fn param_names(self) -> [&'static str; 4] {
        match self {
            AftFamily::WeibullLs => ["log_lambda", "gamma", "beta", "kappa"],
            AftFamily::Gengamma => ["mu", "log_sigma", "q", "beta"],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AftFit {
    pub family: AftFamily,
    pub params: Vec<f64>,
    pub loglik: f64,
    /// Gradient of the log-likelihood at `params`.
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl AftFit {
    pub fn named_params(&self) -> Vec<(&'static str, f64)> {
        self.family.param_names().into_iter().zip(self.params.iter().copied()).collect()
    }

    /// Survival of arm `z` at time `t`.
    pub fn survival(&self, z: bool, t: f64) -> f64 {
        let zf = if z { 1.0 } else { 0.0 };
        match self.family {
            AftFamily::WeibullLs => weibull_ls_survival(&self.params, zf, t),
            AftFamily::Gengamma => gengamma_survival(&self.params, zf, t),
        }
    }
}

/// Evenly spaced grid `k * step` for k = 1..=horizon/step, ending at `horizon`.
pub fn parametric_grid(horizon: f64, step: f64) -> Vec<f64> {
    let k = (horizon / step).round() as usize;
    let inv = (1.0 / step).round();
    let mut g: Vec<f64> = if (inv * step - 1.0).abs() < 1e-12 {
        (1..=k).map(|i| i as f64 / inv).collect()
    } else {
        (1..=k).map(|i| i as f64 * step).collect()
    };
    g.retain(|&t| t < horizon);
    g.push(horizon);
    g
}

/// Fitted survival of arm `z` sampled on `grid` as a step curve.
pub fn aft_survival_curve(fit: &AftFit, z: bool, grid: &[f64]) -> Result<StepCurve> {
    if !fit.converged {
        return Err(Error::Contract("survival curve requested from an unconverged fit".into()));
    }
    // guard against roundoff above the previous value
    let mut prev = 1.0f64;
    let surv: Vec<f64> = grid
        .iter()
        .map(|&t| {
            prev = prev.min(fit.survival(z, t).clamp(0.0, 1.0));
            prev
        })
        .collect();
    let fu = grid.last().copied().unwrap_or(0.0);
    StepCurve::new(grid.to_vec(), surv, 1.0, fu)
}

#[cfg(test)]
mod tests;
