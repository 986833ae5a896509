//! Treatment-effect estimands computed from a pair of marginal survival
//! curves: survival differences, median-survival difference and
//! restricted-mean difference.

use crate::error::{Error, Result};
use crate::model::{Estimate, EstimandReport, StepCurve};

/// Control and treated curves with a common horizon no later than either
/// curve's follow-up.
#[derive(Debug, Clone)]
pub struct CurvePair {
    control: StepCurve,
    treated: StepCurve,
    horizon: f64,
}

impl CurvePair {
    pub fn new(control: StepCurve, treated: StepCurve, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        for (arm, c) in [("control", &control), ("treated", &treated)] {
            if horizon > c.follow_up() {
                return Err(Error::OutOfRange(format!(
                    "horizon {horizon} exceeds {arm} follow-up {}",
                    c.follow_up()
                )));
            }
        }
        Ok(Self {
            control,
            treated,
            horizon,
        })
    }

    pub fn control(&self) -> &StepCurve {
        &self.control
    }

    pub fn treated(&self) -> &StepCurve {
        &self.treated
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn swapped(&self) -> Self {
        Self {
            control: self.treated.clone(),
            treated: self.control.clone(),
            horizon: self.horizon,
        }
    }
}

/// `S_1(t) - S_0(t)`.
pub fn delta_surv_at(pair: &CurvePair, t: f64) -> Result<f64> {
    if !(0.0..=pair.horizon).contains(&t) {
        return Err(Error::OutOfRange(format!("time {t} outside [0, {}]", pair.horizon)));
    }
    Ok(pair.treated.value_at(t) - pair.control.value_at(t))
}

/// First step time at which the curve is at or below one half, if that
/// happens within follow-up.
pub fn median_survival(curve: &StepCurve) -> Option<f64> {
    if curve.anchor() <= 0.5 {
        return Some(0.0);
    }
    let k = curve.surv().iter().position(|&s| s <= 0.5)?;
    let t = curve.times()[k];
    (t <= curve.follow_up()).then_some(t)
}

/// Area under the step curve over `[0, horizon]`.
pub fn rms(curve: &StepCurve, horizon: f64) -> Result<f64> {
    if horizon < 0.0 || horizon > curve.follow_up() {
        return Err(Error::OutOfRange(format!(
            "horizon {horizon} outside [0, {}]",
            curve.follow_up()
        )));
    }
    let mut area = 0.0;
    let mut prev_t = 0.0;
    let mut prev_s = curve.anchor();
    for (&t, &s) in curve.times().iter().zip(curve.surv()) {
        if t >= horizon {
            break;
        }
        area += prev_s * (t - prev_t);
        prev_t = t;
        prev_s = s;
    }
    Ok(area + prev_s * (horizon - prev_t))
}

/// Point estimates of every estimand for one estimator.
pub fn ate_report(pair: &CurvePair, eval_times: &[f64], estimator_name: &str) -> Result<EstimandReport> {
    let delta_surv_at = eval_times
        .iter()
        .map(|&t| Ok((t, Estimate::point(delta_surv_at(pair, t)?))))
        .collect::<Result<Vec<_>>>()?;
    let m0 = median_survival(&pair.control).filter(|&m| m <= pair.horizon);
    let m1 = median_survival(&pair.treated).filter(|&m| m <= pair.horizon);
    let (delta_median, median_note) = match (m0, m1) {
        (Some(a), Some(b)) => (Some(Estimate::point(b - a)), None),
        _ => {
            let missing: Vec<&str> = [("control", m0), ("treated", m1)]
                .iter()
                .filter(|(_, m)| m.is_none())
                .map(|(a, _)| *a)
                .collect();
            (
                None,
                Some(format!("median not estimable: {} survival stays above 0.5", missing.join(" and "))),
            )
        }
    };
    let delta_rms = Estimate::point(rms(&pair.treated, pair.horizon)? - rms(&pair.control, pair.horizon)?);
    Ok(EstimandReport {
        estimator_name: estimator_name.to_string(),
        horizon: pair.horizon,
        delta_surv_at,
        delta_median,
        median_note,
        delta_rms,
        notes: Vec::new(),
    })
}
