//! Nonparametric subject-level bootstrap with percentile intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EstimandReport, SubjectRecord};
use crate::numeric::order_stat_quantile;
use crate::rng::{stream, Purpose};

/// Share of failed replicates above which the bootstrap is declared degenerate.
pub const MAX_FAILED_SHARE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub iterations: usize,
    pub seed: u64,
    pub ci_level: f64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            iterations: 500,
            seed: 1,
            ci_level: 0.95,
        }
    }
}

impl BootstrapSpec {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return Err(Error::Config(format!("bootstrap needs at least 2 iterations, got {}", self.iterations)));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(Error::Config(format!("ci_level {} outside (0, 1)", self.ci_level)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// One row per iteration; `None` for a failed replicate.
    pub replicate_estimates: Vec<Option<Vec<Option<f64>>>>,
    /// Per estimand, over the replicates where it is defined.
    pub se: Vec<Option<f64>>,
    pub ci: Vec<Option<(f64, f64)>>,
    /// Replicates whose pipeline failed or left some estimand undefined.
    pub n_failed: usize,
    /// Replicates whose pipeline returned an error.
    pub n_errors: usize,
    pub method: String,
}

/// Resample indices of iteration `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Bootstrap, b as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Runs `pipeline` on `iterations` resamples of `records`. The pipeline
/// returns one outcome per estimator, each a vector of estimand values.
/// Results come back per estimator, reduced in iteration order so the
/// thread count never changes them.
pub fn bootstrap_multi<F>(
    records: &[SubjectRecord],
    spec: &BootstrapSpec,
    n_outputs: usize,
    pipeline: F,
) -> Result<Vec<Result<BootstrapResult>>>
where
    F: Fn(&[SubjectRecord]) -> Vec<Result<Vec<Option<f64>>>> + Sync,
{
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::Data("bootstrap of an empty cohort".into()));
    }
    let rows: Vec<Vec<Result<Vec<Option<f64>>>>> = (0..spec.iterations)
        .into_par_iter()
        .map(|b| {
            let sample: Vec<SubjectRecord> = resample_indices(records.len(), spec.seed, b)
                .into_iter()
                .map(|i| records[i].clone())
                .collect();
            let out = pipeline(&sample);
            debug_assert_eq!(out.len(), n_outputs);
            out
        })
        .collect();
    let mut per_output: Vec<Vec<Option<Vec<Option<f64>>>>> = vec![Vec::with_capacity(spec.iterations); n_outputs];
    let mut last_err: Vec<Option<Error>> = (0..n_outputs).map(|_| None).collect();
    for row in rows {
        for (k, r) in row.into_iter().enumerate() {
            match r {
                Ok(v) => per_output[k].push(Some(v)),
                Err(e) => {
                    per_output[k].push(None);
                    last_err[k] = Some(e);
                }
            }
        }
    }
    Ok(per_output
        .into_iter()
        .zip(last_err)
        .map(|(reps, err)| summarize(reps, spec, err))
        .collect())
}

/// Single-pipeline bootstrap over full estimand reports.
pub fn bootstrap_pipeline<F>(records: &[SubjectRecord], spec: &BootstrapSpec, pipeline: F) -> Result<BootstrapResult>
where
    F: Fn(&[SubjectRecord]) -> Result<EstimandReport> + Sync,
{
    bootstrap_multi(records, spec, 1, |s| vec![pipeline(s).map(|r| r.values())])?
        .pop()
        .expect("one output")
}

fn summarize(reps: Vec<Option<Vec<Option<f64>>>>, spec: &BootstrapSpec, err: Option<Error>) -> Result<BootstrapResult> {
    let b = reps.len();
    let n_errors = reps.iter().filter(|r| r.is_none()).count();
    if n_errors as f64 > MAX_FAILED_SHARE * b as f64 {
        return Err(Error::BootstrapDegenerate {
            failed: n_errors,
            iterations: b,
            reason: err.map(|e| e.to_string()).unwrap_or_default(),
        });
    }
    let k = reps.iter().flatten().map(|v| v.len()).max().unwrap_or(0);
    let n_failed = reps
        .iter()
        .filter(|r| match r {
            None => true,
            Some(v) => v.iter().any(|x| x.is_none()),
        })
        .count();
    let alpha = 1.0 - spec.ci_level;
    let mut se = Vec::with_capacity(k);
    let mut ci = Vec::with_capacity(k);
    for j in 0..k {
        let mut vals: Vec<f64> = reps.iter().flatten().filter_map(|v| v.get(j).copied().flatten()).collect();
        if vals.len() < 2 {
            se.push(None);
            ci.push(None);
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        se.push(Some(var.sqrt()));
        vals.sort_by(f64::total_cmp);
        ci.push(Some((
            order_stat_quantile(&vals, alpha / 2.0),
            order_stat_quantile(&vals, 1.0 - alpha / 2.0),
        )));
    }
    Ok(BootstrapResult {
        replicate_estimates: reps,
        se,
        ci,
        n_failed,
        n_errors,
        method: "percentile".into(),
    })
}
