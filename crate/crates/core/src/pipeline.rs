//! The IPTW estimation pipeline: propensity fit, weighting, one of seven
//! survival estimators, and the estimand report.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::aft::{aft_survival_curve, fit_gengamma_from, fit_weibull_ls, parametric_grid, AftFit};
use crate::cox::{cox_marginal_curves, fit_cox_sample, CoxVariant, EpisodeOptions};
use crate::error::{Error, Result};
use crate::estimands::{ate_report, CurvePair};
use crate::model::{EstimandReport, StepCurve, SubjectRecord, WeightedSample};
use crate::nonparam::{monthly_grid, weighted_km, weighted_pseudo_mean_from};
use crate::propensity::{center, compute_iptw, fit_logistic_rows, LogisticFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Cox,
    CtvLt,
    CtvPwc,
    AftGg,
    AftWblLs,
    Pseudo,
    WtdKm,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Cox,
        EstimatorKind::CtvLt,
        EstimatorKind::CtvPwc,
        EstimatorKind::AftGg,
        EstimatorKind::AftWblLs,
        EstimatorKind::Pseudo,
        EstimatorKind::WtdKm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Cox => "cox",
            EstimatorKind::CtvLt => "ctv_lt",
            EstimatorKind::CtvPwc => "ctv_pwc",
            EstimatorKind::AftGg => "aft_gg",
            EstimatorKind::AftWblLs => "aft_wbl_ls",
            EstimatorKind::Pseudo => "pseudo",
            EstimatorKind::WtdKm => "wtd_km",
        }
    }

    /// Row label in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            EstimatorKind::Cox => "Cox",
            EstimatorKind::CtvLt => "CTV LT",
            EstimatorKind::CtvPwc => "CTV PWC",
            EstimatorKind::AftGg => "AFT GG",
            EstimatorKind::AftWblLs => "AFT WBL LS",
            EstimatorKind::Pseudo => "Pseudo",
            EstimatorKind::WtdKm => "Wtd KM",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown estimator {s:?}")))
    }
}

/// Parses a comma-separated estimator list, keeping the canonical order.
pub fn parse_estimators(list: &str) -> Result<Vec<EstimatorKind>> {
    let mut v: Vec<EstimatorKind> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    v.sort();
    v.dedup();
    if v.is_empty() {
        return Err(Error::Config("empty estimator list".into()));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub eval_times: Vec<f64>,
    pub horizon: f64,
    /// Rescale weights to mean one within each arm before averaging
    /// pseudo-observations.
    pub center_weights: bool,
    pub episodes: EpisodeOptions,
    /// Spacing of the grid the parametric curves are sampled on.
    pub parametric_step: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eval_times: vec![2.0, 5.0, 10.0],
            horizon: 10.0,
            center_weights: true,
            episodes: EpisodeOptions::default(),
            parametric_step: 0.01,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.eval_times.is_empty() {
            return Err(Error::Config("no evaluation times".into()));
        }
        if let Some(t) = self.eval_times.iter().find(|t| !(**t > 0.0 && **t <= self.horizon)) {
            return Err(Error::Config(format!("evaluation time {t} outside (0, horizon]")));
        }
        if !(self.parametric_step > 0.0 && self.parametric_step < self.horizon) {
            return Err(Error::Config("parametric grid step must lie in (0, horizon)".into()));
        }
        Ok(())
    }
}

/// Fits carried from the original-sample analysis into bootstrap resamples
/// as starting values.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub logistic: Option<Vec<f64>>,
    pub gengamma: Option<Vec<f64>>,
}

/// One estimator's output on one cohort.
#[derive(Debug)]
pub struct EstimatorRun {
    pub kind: EstimatorKind,
    pub report: Result<EstimandReport>,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct PipelineRun {
    pub propensity: Result<LogisticFit>,
    pub propensity_seconds: f64,
    pub runs: Vec<EstimatorRun>,
    pub warm: WarmStart,
}

/// Fits the propensity model once, then every requested estimator on the
/// weighted cohort.
pub fn run_pipeline(
    records: &[SubjectRecord],
    kinds: &[EstimatorKind],
    cfg: &PipelineConfig,
    warm: Option<&WarmStart>,
) -> PipelineRun {
    let t0 = Instant::now();
    let init = warm.and_then(|w| w.logistic.as_deref());
    let fit = fit_propensity(records, init);
    let propensity_seconds = t0.elapsed().as_secs_f64();
    let ws = fit.as_ref().map_err(Clone::clone).and_then(|f| compute_iptw(f, records.to_vec()));
    let mut next_warm = WarmStart {
        logistic: fit.as_ref().ok().map(|f| f.coefficients.clone()),
        gengamma: None,
    };
    let runs = kinds
        .iter()
        .map(|&kind| {
            let t = Instant::now();
            let report = match &ws {
                Ok(ws) => {
                    let start = warm.and_then(|w| w.gengamma.as_deref());
                    estimate(ws, kind, cfg, start).map(|(r, gg)| {
                        if gg.is_some() {
                            next_warm.gengamma = gg;
                        }
                        r
                    })
                }
                Err(e) => Err(e.clone()),
            };
            EstimatorRun {
                kind,
                report,
                seconds: t.elapsed().as_secs_f64(),
            }
        })
        .collect();
    PipelineRun {
        propensity: fit,
        propensity_seconds,
        runs,
        warm: next_warm,
    }
}

/// Logistic propensity fit on the records' covariates (intercept added).
pub fn fit_propensity(records: &[SubjectRecord], init: Option<&[f64]>) -> Result<LogisticFit> {
    let rows = records.iter().map(|r| r.covariates.as_slice());
    let y: Vec<bool> = records.iter().map(|r| r.treatment).collect();
    fit_logistic_rows(rows, &y, init)
}

/// Marginal survival curves of one estimator on a weighted cohort. Also
/// returns the generalized gamma parameters when that model was fitted.
pub fn estimator_curves(
    ws: &WeightedSample,
    kind: EstimatorKind,
    cfg: &PipelineConfig,
    gg_start: Option<&[f64]>,
) -> Result<(StepCurve, StepCurve, Option<Vec<f64>>)> {
    let cox = |variant| -> Result<(StepCurve, StepCurve, Option<Vec<f64>>)> {
        let fit = fit_cox_sample(ws, variant, &cfg.episodes)?;
        let (s0, s1) = cox_marginal_curves(&fit)?;
        Ok((s0, s1, None))
    };
    let aft = |fit: &AftFit| -> Result<(StepCurve, StepCurve)> {
        let grid = parametric_grid(cfg.horizon, cfg.parametric_step);
        Ok((aft_survival_curve(fit, false, &grid)?, aft_survival_curve(fit, true, &grid)?))
    };
    match kind {
        EstimatorKind::Cox => cox(CoxVariant::Standard),
        EstimatorKind::CtvLt => cox(CoxVariant::LogTime),
        EstimatorKind::CtvPwc => cox(CoxVariant::Piecewise),
        EstimatorKind::AftWblLs => {
            let (s0, s1) = aft(&fit_weibull_ls(ws)?)?;
            Ok((s0, s1, None))
        }
        EstimatorKind::AftGg => {
            let fit = fit_gengamma_from(ws, gg_start)?;
            let (s0, s1) = aft(&fit)?;
            Ok((s0, s1, Some(fit.params)))
        }
        EstimatorKind::WtdKm => Ok((weighted_km(ws, false)?, weighted_km(ws, true)?, None)),
        EstimatorKind::Pseudo => {
            let grid = monthly_grid(cfg.horizon, &cfg.eval_times);
            let arm = |z: bool| -> Result<StepCurve> {
                let idx: Vec<usize> = (0..ws.len()).filter(|&i| ws.records()[i].treatment == z).collect();
                let obs: Vec<(f64, bool)> = idx.iter().map(|&i| (ws.records()[i].time, ws.records()[i].event)).collect();
                let w: Vec<f64> = idx.iter().map(|&i| ws.weights()[i]).collect();
                let w = if cfg.center_weights { center(&w) } else { w };
                let ps = weighted_pseudo_mean_from(&obs, &w, &grid)?;
                Ok(ps.curve)
            };
            Ok((arm(false)?, arm(true)?, None))
        }
    }
}

fn estimate(
    ws: &WeightedSample,
    kind: EstimatorKind,
    cfg: &PipelineConfig,
    gg_start: Option<&[f64]>,
) -> Result<(EstimandReport, Option<Vec<f64>>)> {
    let (s0, s1, gg) = estimator_curves(ws, kind, cfg, gg_start)?;
    let pair = CurvePair::new(s0, s1, cfg.horizon)?;
    let mut report = ate_report(&pair, &cfg.eval_times, kind.as_str())?;
    if kind == EstimatorKind::Pseudo && cfg.center_weights {
        report.notes.push("centered weights".into());
    }
    Ok((report, gg))
}

/// Point estimates for one estimator on a raw cohort.
pub fn estimate_one(records: &[SubjectRecord], kind: EstimatorKind, cfg: &PipelineConfig) -> Result<EstimandReport> {
    let mut run = run_pipeline(records, &[kind], cfg, None);
    run.runs.pop().expect("one estimator").report
}
