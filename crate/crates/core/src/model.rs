//! Shared domain types: subject records, weighted cohorts, step survival
//! curves and per-estimator treatment-effect reports.
//!
//! Time is measured in years everywhere in this crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: covariate row, treatment arm, observed time and event flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: i64,
    /// Design-matrix row (dummy-coded categories, no intercept column).
    pub covariates: Vec<f64>,
    pub treatment: bool,
    /// Observed time in years: event time if `event`, censoring time otherwise.
    pub time: f64,
    /// `true` when death was observed at `time`.
    pub event: bool,
}

impl SubjectRecord {
    pub fn new(id: i64, covariates: Vec<f64>, treatment: bool, time: f64, event: bool) -> Result<Self> {
        if !time.is_finite() || time < 0.0 {
            return Err(Error::Data(format!(
                "subject {id}: time must be finite and >= 0, got {time}"
            )));
        }
        if covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data(format!("subject {id}: non-finite covariate")));
        }
        Ok(Self {
            id,
            covariates,
            treatment,
            time,
            event,
        })
    }

    #[inline]
    pub fn z(&self) -> f64 {
        if self.treatment {
            1.0
        } else {
            0.0
        }
    }
}

/// Checks the cohort-level invariants: non-empty, consistent covariate width,
/// finite non-negative times.
pub fn validate_cohort(records: &[SubjectRecord]) -> Result<usize> {
    let first = records
        .first()
        .ok_or_else(|| Error::Data("empty cohort".into()))?;
    let width = first.covariates.len();
    for r in records {
        if r.covariates.len() != width {
            return Err(Error::Data(format!(
                "subject {}: covariate width {} differs from cohort width {}",
                r.id,
                r.covariates.len(),
                width
            )));
        }
        if !r.time.is_finite() || r.time < 0.0 {
            return Err(Error::Data(format!("subject {}: invalid time {}", r.id, r.time)));
        }
    }
    Ok(width)
}

/// A cohort with IPTW weights and the propensities they were built from.
#[derive(Debug, Clone)]
pub struct WeightedSample {
    records: Vec<SubjectRecord>,
    weights: Vec<f64>,
    propensity: Vec<f64>,
}

impl WeightedSample {
    pub fn new(records: Vec<SubjectRecord>, weights: Vec<f64>, propensity: Vec<f64>) -> Result<Self> {
        if records.len() != weights.len() || records.len() != propensity.len() {
            return Err(Error::InvalidArgument(format!(
                "length mismatch: {} records, {} weights, {} propensities",
                records.len(),
                weights.len(),
                propensity.len()
            )));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "weight for subject {} must be finite and > 0, got {w}",
                records[i].id
            )));
        }
        Ok(Self {
            records,
            weights,
            propensity,
        })
    }

    /// Every subject weighted 1 with propensity 1/2; used for unadjusted fits.
    pub fn unit(records: Vec<SubjectRecord>) -> Self {
        let n = records.len();
        Self {
            records,
            weights: vec![1.0; n],
            propensity: vec![0.5; n],
        }
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn propensity(&self) -> &[f64] {
        &self.propensity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.records.clone(), weights, self.propensity.clone())
    }

    /// `(time, event, weight)` triples for one arm.
    pub fn arm(&self, treated: bool) -> Vec<(f64, bool, f64)> {
        self.records
            .iter()
            .zip(&self.weights)
            .filter(|(r, _)| r.treatment == treated)
            .map(|(r, &w)| (r.time, r.event, w))
            .collect()
    }

    pub fn max_time(&self) -> f64 {
        self.records.iter().map(|r| r.time).fold(0.0, f64::max)
    }
}

/// Right-continuous step survival function.
///
/// `surv[k]` holds on `[times[k], times[k+1])`; before `times[0]` the curve
/// equals `anchor`. `follow_up` is the last time at which the curve is
/// supported by data (infinite once the curve has reached zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    times: Vec<f64>,
    surv: Vec<f64>,
    anchor: f64,
    follow_up: f64,
}

impl StepCurve {
    pub fn new(times: Vec<f64>, surv: Vec<f64>, anchor: f64, follow_up: f64) -> Result<Self> {
        if times.len() != surv.len() {
            return Err(Error::InvalidArgument(format!(
                "curve has {} times but {} survival values",
                times.len(),
                surv.len()
            )));
        }
        if !(0.0..=1.0).contains(&anchor) {
            return Err(Error::InvalidArgument(format!("anchor {anchor} outside [0, 1]")));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::InvalidArgument("curve times must be finite and >= 0".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("curve times must be strictly increasing".into()));
        }
        if surv.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument("survival values must lie in [0, 1]".into()));
        }
        let mut prev = anchor;
        for (t, &s) in times.iter().zip(&surv) {
            if s > prev {
                return Err(Error::InvalidArgument(format!(
                    "survival increases at t = {t} ({prev} -> {s})"
                )));
            }
            prev = s;
        }
        let last = times.last().copied().unwrap_or(0.0);
        if follow_up.is_nan() || follow_up < last {
            return Err(Error::InvalidArgument(format!(
                "follow-up {follow_up} precedes last step time {last}"
            )));
        }
        Ok(Self {
            times,
            surv,
            anchor,
            follow_up,
        })
    }

    /// Samples a smooth survival function on `grid` (which must be strictly
    /// increasing); the follow-up is the last grid point.
    pub fn from_fn(grid: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        let surv: Vec<f64> = grid.iter().map(|&t| f(t).clamp(0.0, 1.0)).collect();
        let follow_up = grid.last().copied().unwrap_or(0.0);
        Self::new(grid.to_vec(), surv, 1.0, follow_up)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn surv(&self) -> &[f64] {
        &self.surv
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn follow_up(&self) -> f64 {
        self.follow_up
    }

    /// S(t): value at the largest step time `<= t`, or the anchor before the
    /// first step.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !t.is_finite() {
            return Err(Error::InvalidArgument(format!("cannot evaluate curve at {t}")));
        }
        Ok(self.value_at(t))
    }

    #[inline]
    pub(crate) fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            self.anchor
        } else {
            self.surv[k - 1]
        }
    }
}

/// Free-function form of [`StepCurve::evaluate`].
pub fn evaluate_curve(curve: &StepCurve, t: f64) -> Result<f64> {
    curve.evaluate(t)
}

/// A point estimate with an optional confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub lcl: Option<f64>,
    pub ucl: Option<f64>,
}

impl Estimate {
    pub fn point(estimate: f64) -> Self {
        Self {
            estimate,
            lcl: None,
            ucl: None,
        }
    }

    pub fn with_ci(mut self, lcl: f64, ucl: f64) -> Self {
        self.lcl = Some(lcl);
        self.ucl = Some(ucl);
        self
    }

    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.ci().map(|(l, u)| l <= truth && truth <= u)
    }

    pub fn ci(&self) -> Option<(f64, f64)> {
        self.lcl.zip(self.ucl)
    }
}

/// Treatment-effect summary for one estimator: survival differences at the
/// evaluation times, the median-survival difference (when both medians
/// exist) and the restricted-mean difference at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandReport {
    pub estimator_name: String,
    pub horizon: f64,
    pub delta_surv_at: Vec<(f64, Estimate)>,
    pub delta_median: Option<Estimate>,
    /// Why the median difference is missing, when it is.
    pub median_note: Option<String>,
    pub delta_rms: Estimate,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EstimandReport {
    /// Estimand values in canonical order: survival differences, median, RMS.
    pub fn values(&self) -> Vec<Option<f64>> {
        let mut v: Vec<Option<f64>> = self
            .delta_surv_at
            .iter()
            .map(|(_, e)| Some(e.estimate))
            .collect();
        v.push(self.delta_median.map(|e| e.estimate));
        v.push(Some(self.delta_rms.estimate));
        v
    }

    pub fn eval_times(&self) -> Vec<f64> {
        self.delta_surv_at.iter().map(|(t, _)| *t).collect()
    }

    /// Attaches per-estimand intervals in the order of [`Self::values`].
    pub fn attach_cis(&mut self, cis: &[Option<(f64, f64)>]) {
        let k = self.delta_surv_at.len();
        debug_assert_eq!(cis.len(), k + 2);
        for ((_, e), ci) in self.delta_surv_at.iter_mut().zip(cis) {
            if let Some((l, u)) = ci {
                *e = e.with_ci(*l, *u);
            }
        }
        if let (Some(e), Some((l, u))) = (self.delta_median.as_mut(), cis[k]) {
            *e = e.with_ci(l, u);
        }
        if let Some((l, u)) = cis[k + 1] {
            self.delta_rms = self.delta_rms.with_ci(l, u);
        }
    }
}

/// Column labels matching [`EstimandReport::values`].
pub fn estimand_labels(eval_times: &[f64]) -> Vec<String> {
    let mut labels: Vec<String> = eval_times.iter().map(|t| format!("surv_{}", fmt_time(*t))).collect();
    labels.push("median".into());
    labels.push("rms".into());
    labels
}

pub(crate) fn fmt_time(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> StepCurve {
        StepCurve::new(vec![1.0, 2.0], vec![0.8, 0.5], 1.0, 3.0).unwrap()
    }

    #[test]
    fn evaluate_between_steps() {
        assert_eq!(toy().evaluate(1.5).unwrap(), 0.8);
    }

    #[test]
    fn evaluate_before_first_step() {
        assert_eq!(toy().evaluate(0.5).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_is_right_continuous() {
        assert_eq!(toy().evaluate(2.0).unwrap(), 0.5);
        assert_eq!(evaluate_curve(&toy(), 1.0).unwrap(), 0.8);
    }

    #[test]
    fn evaluate_rejects_non_finite() {
        assert!(toy().evaluate(f64::NAN).is_err());
        assert!(toy().evaluate(f64::INFINITY).is_err());
    }

    #[test]
    fn non_monotone_curve_rejected() {
        assert!(StepCurve::new(vec![1.0, 2.0], vec![0.5, 0.6], 1.0, 2.0).is_err());
        assert!(StepCurve::new(vec![1.0], vec![0.5], 0.4, 2.0).is_err());
        assert!(StepCurve::new(vec![2.0, 1.0], vec![0.8, 0.5], 1.0, 2.0).is_err());
    }

    #[test]
    fn subject_rejects_bad_time() {
        assert!(SubjectRecord::new(1, vec![], true, -1.0, true).is_err());
        assert!(SubjectRecord::new(1, vec![], true, f64::NAN, true).is_err());
    }

    #[test]
    fn weighted_sample_rejects_zero_weight() {
        let r = SubjectRecord::new(1, vec![], true, 1.0, true).unwrap();
        assert!(WeightedSample::new(vec![r], vec![0.0], vec![0.5]).is_err());
    }

    #[test]
    fn ci_coverage_is_inclusive() {
        let e = Estimate::point(0.3).with_ci(0.25, 0.5);
        assert_eq!(e.covers(0.5), Some(true));
        assert_eq!(e.covers(0.51), Some(false));
        assert_eq!(Estimate::point(0.3).covers(0.3), None);
    }

    proptest! {
        #[test]
        fn evaluation_monotone(steps in proptest::collection::vec((0.01f64..1.0, 0.0f64..1.0), 1..20),
                               a in 0.0f64..12.0, b in 0.0f64..12.0) {
            let mut t = 0.0;
            let mut s = 1.0;
            let mut times = vec![];
            let mut surv = vec![];
            for (dt, frac) in steps {
                t += dt;
                s *= frac;
                times.push(t);
                surv.push(s);
            }
            let c = StepCurve::new(times, surv, 1.0, t).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(c.evaluate(hi).unwrap() <= c.evaluate(lo).unwrap());
        }
    }
}
