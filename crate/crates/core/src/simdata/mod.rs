//! Synthetic cohorts from a Weibull proportional-hazards model with a
//! time-varying treatment effect,
//! `h(t | Z, x) = gamma lambda t^(gamma-1) exp(beta1 Z + f(Z, t) + x psi)`,
//! plus the analytic truth for the treatment-effect estimands.

mod covariates;
mod scenario;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use covariates::{correlation_factor, default_covariate_model, gen_covariates, CovariateModel, CovariateSpec, Marginal};
pub use scenario::{
    scenario_by_name, scenario_registry, Baseline, Censoring, CoefficientTable, EffectForm, ScenarioSpec,
    SCENARIO_NAMES,
};

use crate::error::{Error, Result};
use crate::model::SubjectRecord;
use crate::numeric::{bisect, dot, integrate};
use crate::propensity::{calibrate_intercept, logistic};
use crate::rng::{stream, Purpose};

/// Cumulative-hazard kernel of one scenario, free of covariates:
/// `H(t | z, eta) = exp(eta) * H_z(t)` with `eta = beta1 z + x psi`.
#[derive(Debug, Clone, Copy)]
pub struct HazardModel {
    lambda: f64,
    gamma: f64,
    beta1: f64,
    form: EffectForm,
}

impl HazardModel {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        Self::from_parts(spec.baseline.lambda, spec.baseline.gamma, spec.beta1, spec.f_form)
    }

    pub fn from_parts(lambda: f64, gamma: f64, beta1: f64, form: EffectForm) -> Result<Self> {
        let m = Self {
            lambda,
            gamma,
            beta1,
            form,
        };
        if !(m.lambda > 0.0 && m.gamma > 0.0) {
            return Err(Error::InvalidHazard("lambda and gamma must be positive".into()));
        }
        if let EffectForm::LogTime { kappa } = m.form {
            if m.gamma + kappa <= 0.0 {
                return Err(Error::InvalidHazard(format!(
                    "gamma + kappa = {} makes the treated hazard non-integrable",
                    m.gamma + kappa
                )));
            }
        }
        Ok(m)
    }

    /// Linear predictor including the constant treatment effect.
    #[inline]
    pub fn eta(&self, z: bool, x_psi: f64) -> f64 {
        x_psi + if z { self.beta1 } else { 0.0 }
    }

    /// Hazard at `t` for linear predictor `eta`.
    pub fn hazard(&self, t: f64, z: bool, eta: f64) -> f64 {
        let f = match (self.form, z) {
            (_, false) => 0.0,
            (EffectForm::LogTime { kappa }, true) => kappa * t.ln(),
            (EffectForm::Piecewise { kappa, cut }, true) => {
                if t >= cut {
                    kappa
                } else {
                    0.0
                }
            }
        };
        self.gamma * self.lambda * t.powf(self.gamma - 1.0) * (eta + f).exp()
    }

    /// Closed-form cumulative hazard.
    pub fn cumhaz(&self, t: f64, z: bool, eta: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let scale = self.lambda * eta.exp();
        match (self.form, z) {
            (_, false) => scale * t.powf(self.gamma),
            (EffectForm::LogTime { kappa }, true) => {
                let s = self.gamma + kappa;
                scale * self.gamma / s * t.powf(s)
            }
            (EffectForm::Piecewise { kappa, cut }, true) => {
                if t < cut {
                    scale * t.powf(self.gamma)
                } else {
                    let c = cut.powf(self.gamma);
                    scale * (c + kappa.exp() * (t.powf(self.gamma) - c))
                }
            }
        }
    }

    /// Time at which the cumulative hazard reaches `e = -log U`.
    pub fn invert(&self, e: f64, z: bool, eta: f64) -> f64 {
        let scale = self.lambda * eta.exp();
        match (self.form, z) {
            (_, false) => (e / scale).powf(1.0 / self.gamma),
            (EffectForm::LogTime { kappa }, true) => {
                let s = self.gamma + kappa;
                (s * e / (self.gamma * scale)).powf(1.0 / s)
            }
            (EffectForm::Piecewise { kappa, cut }, true) => {
                let c = cut.powf(self.gamma);
                let r = e / scale;
                if r < c {
                    r.powf(1.0 / self.gamma)
                } else {
                    (c + (r - c) * (-kappa).exp()).powf(1.0 / self.gamma)
                }
            }
        }
    }

    /// Cumulative hazard by adaptive quadrature of [`Self::hazard`].
    pub fn cumhaz_numeric(&self, t: f64, z: bool, eta: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let h = |u: f64| self.hazard(u, z, eta);
        let tol = 1e-14;
        match self.form {
            EffectForm::Piecewise { cut, .. } if z && t > cut => integrate(h, 0.0, cut, tol) + integrate(h, cut, t, tol),
            _ => integrate(h, 0.0, t, tol),
        }
    }

    /// Inversion by bracketed root finding on the numerically integrated
    /// cumulative hazard, to `|H(T) - e| <= 1e-10`.
    pub fn invert_numeric(&self, e: f64, z: bool, eta: f64) -> Result<f64> {
        let g = |t: f64| self.cumhaz_numeric(t, z, eta) - e;
        let mut hi = 1.0;
        while g(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::InvalidHazard("cumulative hazard does not reach the target".into()));
            }
        }
        bisect(g, 0.0, hi, 1e-15 * hi, 0.0)
    }
}

/// Fixed covariates of a scenario together with their linear predictors and
/// true propensity scores.
#[derive(Debug, Clone)]
pub struct Population {
    pub spec: ScenarioSpec,
    pub hazard: HazardModel,
    pub covariates: Vec<Vec<f64>>,
    /// `x psi` per subject.
    pub x_psi: Vec<f64>,
    pub intercept: f64,
    pub propensity: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Population {
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let hazard = HazardModel::new(spec)?;
        let (covariates, warn) = gen_covariates(&spec.covariate_model, spec.n_total, spec.covariate_seed, false)?;
        let intercept = match spec.treatment_intercept {
            Some(b) => b,
            None => calibrate_intercept(&spec.treatment_coeffs, &covariates, spec.target_treat_prob)?,
        };
        let propensity = covariates
            .iter()
            .map(|x| logistic(intercept + dot(x, &spec.treatment_coeffs)))
            .collect();
        let x_psi = covariates.iter().map(|x| dot(x, &spec.survival_coeffs)).collect();
        Ok(Self {
            spec: spec.clone(),
            hazard,
            covariates,
            x_psi,
            intercept,
            propensity,
            warnings: warn.into_iter().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.covariates.len()
    }

    /// Both potential event times per subject from a shared uniform.
    pub fn potential_outcomes(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let e = exponential_draws(self.n(), seed);
        let t0 = e
            .iter()
            .zip(&self.x_psi)
            .map(|(&e, &xp)| self.hazard.invert(e, false, self.hazard.eta(false, xp)))
            .collect();
        let t1 = e
            .iter()
            .zip(&self.x_psi)
            .map(|(&e, &xp)| self.hazard.invert(e, true, self.hazard.eta(true, xp)))
            .collect();
        (t0, t1)
    }

    /// One observed cohort: treatment, event time and censoring all come
    /// from streams of `seed`.
    pub fn simulate_cohort(&self, seed: u64) -> Result<Vec<SubjectRecord>> {
        let z = assign_treatment_from(&self.propensity, seed);
        let t = draw_survival(self, &z, seed);
        let obs = apply_censoring(&t, &self.spec.censoring, seed);
        self.covariates
            .iter()
            .zip(z)
            .zip(obs)
            .enumerate()
            .map(|(i, ((x, z), (t, d)))| SubjectRecord::new(i as i64 + 1, x.clone(), z, t, d))
            .collect()
    }

    pub fn truth(&self, eval_times: &[f64], horizon: f64) -> Result<TruthReport> {
        true_estimands(&self.x_psi, &self.hazard, &self.spec.name, eval_times, horizon)
    }
}

/// `-log U` per subject from the survival stream.
fn exponential_draws(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, Purpose::Survival, 0);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            // u in [0, 1): use 1 - u in (0, 1]
            -(1.0 - u).ln()
        })
        .collect()
}

/// `Z_i ~ Bernoulli(logistic(b0 + x_i psi_trt))`.
pub fn assign_treatment(covariates: &[Vec<f64>], coeffs: &[f64], intercept: f64, seed: u64) -> Result<Vec<bool>> {
    if covariates.iter().any(|x| x.len() != coeffs.len()) {
        return Err(Error::InvalidArgument("treatment coefficients do not match covariate width".into()));
    }
    let p: Vec<f64> = covariates.iter().map(|x| logistic(intercept + dot(x, coeffs))).collect();
    Ok(assign_treatment_from(&p, seed))
}

fn assign_treatment_from(propensity: &[f64], seed: u64) -> Vec<bool> {
    let mut rng = stream(seed, Purpose::Treatment, 0);
    propensity.iter().map(|&p| rng.random::<f64>() < p).collect()
}

/// Event times under the assigned arms by inverse transform.
pub fn draw_survival(pop: &Population, z: &[bool], seed: u64) -> Vec<f64> {
    let e = exponential_draws(pop.n(), seed);
    e.iter()
        .zip(&pop.x_psi)
        .zip(z)
        .map(|((&e, &xp), &z)| pop.hazard.invert(e, z, pop.hazard.eta(z, xp)))
        .collect()
}

/// Observed `(time, event)` under the censoring scheme.
pub fn apply_censoring(times: &[f64], scheme: &Censoring, seed: u64) -> Vec<(f64, bool)> {
    match *scheme {
        Censoring::None => times.iter().map(|&t| (t, true)).collect(),
        Censoring::Administrative { tau } => times.iter().map(|&t| if t <= tau { (t, true) } else { (tau, false) }).collect(),
        Censoring::Uniform { a, b } => {
            let mut rng = stream(seed, Purpose::Censoring, 0);
            times
                .iter()
                .map(|&t| {
                    let c = rng.random_range(a..b);
                    if t <= c {
                        (t, true)
                    } else {
                        (c, false)
                    }
                })
                .collect()
        }
    }
}

/// True marginal survival functions and the implied treatment effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub scenario: String,
    pub eval_times: Vec<f64>,
    pub horizon: f64,
    /// `(S_0(t), S_1(t))` at each evaluation time.
    pub surv: Vec<(f64, f64)>,
    pub median: (Option<f64>, Option<f64>),
    pub rms: (f64, f64),
}

impl TruthReport {
    /// Effects in estimand order: survival differences, median, RMS.
    pub fn values(&self) -> Vec<Option<f64>> {
        let mut v: Vec<Option<f64>> = self.surv.iter().map(|(a, b)| Some(b - a)).collect();
        v.push(match self.median {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        });
        v.push(Some(self.rms.1 - self.rms.0));
        v
    }
}

/// `S_z(t) = mean_i exp(-H(t | z, x_i))`.
pub fn marginal_survival(x_psi: &[f64], hazard: &HazardModel, z: bool, t: f64) -> f64 {
    let base = hazard.cumhaz(t, z, hazard.eta(z, 0.0));
    x_psi.iter().map(|&xp| (-base * xp.exp()).exp()).sum::<f64>() / x_psi.len() as f64
}

pub fn true_estimands(
    x_psi: &[f64],
    hazard: &HazardModel,
    scenario: &str,
    eval_times: &[f64],
    horizon: f64,
) -> Result<TruthReport> {
    if x_psi.is_empty() {
        return Err(Error::InvalidArgument("truth needs at least one covariate row".into()));
    }
    let mut sorted = x_psi.to_vec();
    sorted.sort_by(f64::total_cmp);
    let s = |z: bool, t: f64| marginal_survival(&sorted, hazard, z, t);
    let surv = eval_times.iter().map(|&t| (s(false, t), s(true, t))).collect();
    let median = |z: bool| -> Result<Option<f64>> {
        if s(z, horizon) > 0.5 {
            return Ok(None);
        }
        bisect(|t| s(z, t) - 0.5, 0.0, horizon, 1e-12, 0.0).map(Some)
    };
    let area = |z: bool| {
        let f = |t: f64| s(z, t);
        match hazard.form {
            EffectForm::Piecewise { cut, .. } if z && cut < horizon => {
                integrate(f, 0.0, cut, 5e-10) + integrate(f, cut, horizon, 5e-10)
            }
            _ => integrate(f, 0.0, horizon, 1e-9),
        }
    };
    Ok(TruthReport {
        scenario: scenario.to_string(),
        eval_times: eval_times.to_vec(),
        horizon,
        surv,
        median: (median(false)?, median(true)?),
        rms: (area(false), area(true)),
    })
}

/// Monte-Carlo truth from potential outcomes: `n_draws` subjects cycle
/// through the covariate rows, each drawing both arms from one uniform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McTruth {
    pub values: Vec<Option<f64>>,
    pub se: Vec<Option<f64>>,
    /// Empirical `(S_0(t), S_1(t))` at the evaluation times.
    pub surv: Vec<(f64, f64)>,
}

pub fn monte_carlo_truth(pop: &Population, n_draws: usize, seed: u64, eval_times: &[f64], horizon: f64) -> McTruth {
    let mut rng = stream(seed, Purpose::Oracle, 0);
    let n = pop.n();
    let h = &pop.hazard;
    let mut t0 = Vec::with_capacity(n_draws);
    let mut t1 = Vec::with_capacity(n_draws);
    for j in 0..n_draws {
        let xp = pop.x_psi[j % n];
        let u: f64 = rng.random();
        let e = -(1.0 - u).ln();
        t0.push(h.invert(e, false, h.eta(false, xp)));
        t1.push(h.invert(e, true, h.eta(true, xp)));
    }
    let nf = n_draws as f64;
    let paired = |d: &dyn Fn(usize) -> f64| {
        let m = (0..n_draws).map(d).sum::<f64>() / nf;
        let v = (0..n_draws).map(|i| (d(i) - m).powi(2)).sum::<f64>() / (nf - 1.0);
        (m, (v / nf).sqrt())
    };
    let mut values = Vec::new();
    let mut se = Vec::new();
    let mut surv = Vec::new();
    for &t in eval_times {
        let ind = |x: f64| if x > t { 1.0 } else { 0.0 };
        let (m, s) = paired(&|i| ind(t1[i]) - ind(t0[i]));
        values.push(Some(m));
        se.push(Some(s));
        surv.push((
            t0.iter().filter(|&&x| x > t).count() as f64 / nf,
            t1.iter().filter(|&&x| x > t).count() as f64 / nf,
        ));
    }
    // sample medians; SE from the spacing of neighbouring quantiles
    let med = |v: &[f64]| -> (Option<f64>, f64) {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let q = |p: f64| crate::numeric::order_stat_quantile(&s, p);
        let m = q(0.5);
        let dq = 0.01;
        let inv_f = (q(0.5 + dq) - q(0.5 - dq)) / (2.0 * dq);
        (if m <= horizon { Some(m) } else { None }, 0.5 * inv_f / nf.sqrt())
    };
    let (m0, s0) = med(&t0);
    let (m1, s1) = med(&t1);
    match (m0, m1) {
        (Some(a), Some(b)) => {
            values.push(Some(b - a));
            // ignores the positive correlation induced by shared uniforms,
            // so this overstates the error
            se.push(Some((s0 * s0 + s1 * s1).sqrt()));
        }
        _ => {
            values.push(None);
            se.push(None);
        }
    }
    let (m, s) = paired(&|i| t1[i].min(horizon) - t0[i].min(horizon));
    values.push(Some(m));
    se.push(Some(s));
    McTruth { values, se, surv }
}

#[cfg(test)]
mod tests;
