//! Propensity scores by logistic regression (IRLS), IPTW weights, weight
//! centering, and intercept calibration for simulated assignment models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SubjectRecord, WeightedSample};
use crate::numeric::{bisect, max_abs};

/// IRLS iteration cap.
pub const MAX_IRLS_ITER: usize = 100;
/// Convergence threshold on the max-norm of the score.
pub const GRAD_TOL: f64 = 1e-8;
/// Coefficients beyond this magnitude indicate (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 30.0;
/// Propensities must lie in `(POSITIVITY_EPS, 1 - POSITIVITY_EPS)`.
pub const POSITIVITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per covariate.
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

impl LogisticFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        logistic(self.linear_predictor(x))
    }
}

#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
#[inline]
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Row-major design with a leading intercept column.
struct Design {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl Design {
    fn new<'a>(rows: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::new();
        let mut p = None;
        for row in rows {
            let width = row.len() + 1;
            match p {
                None => p = Some(width),
                Some(w) if w != width => {
                    return Err(Error::Data("ragged covariate rows".into()));
                }
                _ => {}
            }
            data.push(1.0);
            data.extend_from_slice(row);
        }
        Ok(Self {
            n,
            p: p.unwrap_or(1),
            data,
        })
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

fn log_likelihood(x: &Design, y: &[bool], beta: &[f64]) -> f64 {
    (0..x.n)
        .map(|i| {
            let eta: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            if y[i] {
                eta - softplus(eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

/// Score vector and Fisher information at `beta`.
fn score_info(x: &Design, y: &[bool], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = x.p;
    let mut g = vec![0.0; p];
    let mut h = vec![0.0; p * p];
    for i in 0..x.n {
        let row = x.row(i);
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let mu = logistic(eta);
        let r = if y[i] { 1.0 - mu } else { -mu };
        let w = mu * (1.0 - mu);
        for j in 0..p {
            g[j] += r * row[j];
            let wj = w * row[j];
            if wj != 0.0 {
                let hrow = &mut h[j * p..(j + 1) * p];
                for k in j..p {
                    hrow[k] += wj * row[k];
                }
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            h[j * p + k] = h[k * p + j];
        }
    }
    (g, h)
}

fn newton_step(g: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    let p = g.len();
    let hm = DMatrix::from_row_slice(p, p, h);
    let max_diag = (0..p).map(|i| hm[(i, i)]).fold(0.0, f64::max);
    let chol = hm
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularDesign("information matrix not positive definite".into()))?;
    let l = chol.l_dirty();
    for i in 0..p {
        if l[(i, i)] * l[(i, i)] <= 1e-12 * max_diag.max(f64::MIN_POSITIVE) {
            return Err(Error::SingularDesign(format!(
                "design matrix is rank deficient (column {i})"
            )));
        }
    }
    Ok(chol.solve(&DVector::from_column_slice(g)).as_slice().to_vec())
}

/// Maximum-likelihood logistic regression of `treatment` on the covariates.
pub fn fit_logistic(records: &[SubjectRecord]) -> Result<LogisticFit> {
    let rows = records.iter().map(|r| r.covariates.as_slice());
    let y: Vec<bool> = records.iter().map(|r| r.treatment).collect();
    fit_logistic_rows(rows, &y, None)
}

/// IRLS with step halving. `init` warm-starts the iteration (intercept first).
pub fn fit_logistic_rows<'a>(
    rows: impl ExactSizeIterator<Item = &'a [f64]>,
    y: &[bool],
    init: Option<&[f64]>,
) -> Result<LogisticFit> {
    let x = Design::new(rows)?;
    if x.n != y.len() {
        return Err(Error::InvalidArgument("outcome length differs from design rows".into()));
    }
    let n1 = y.iter().filter(|v| **v).count();
    if n1 == 0 || n1 == x.n {
        return Err(Error::Data(
            "propensity model needs at least one subject in each treatment group".into(),
        ));
    }
    let mut beta = match init {
        Some(b) if b.len() == x.p => b.to_vec(),
        _ => {
            let mut b = vec![0.0; x.p];
            let pbar = n1 as f64 / x.n as f64;
            b[0] = (pbar / (1.0 - pbar)).ln();
            b
        }
    };
    let mut ll = log_likelihood(&x, y, &beta);
    for iter in 0..=MAX_IRLS_ITER {
        let (g, h) = score_info(&x, y, &beta);
        if max_abs(&g) <= GRAD_TOL {
            // Under separation the score vanishes while the fitted
            // probabilities saturate; catch that through the linear predictor.
            let max_eta = (0..x.n)
                .map(|i| x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>().abs())
                .fold(0.0, f64::max);
            if max_eta > SEPARATION_BOUND {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    reason: format!("linear predictor magnitude {max_eta} exceeds {SEPARATION_BOUND}: separation"),
                    best: beta,
                });
            }
            return Ok(LogisticFit {
                coefficients: beta,
                converged: true,
                iterations: iter,
                log_likelihood: ll,
            });
        }
        if iter == MAX_IRLS_ITER {
            break;
        }
        let delta = newton_step(&g, &h)?;
        let mut step = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let ll_c = log_likelihood(&x, y, &cand);
            if ll_c >= ll - 1e-12 * ll.abs().max(1.0) || step < 1e-10 {
                beta = cand;
                ll = ll_c;
                break;
            }
            step *= 0.5;
        }
        if let Some(b) = beta.iter().find(|b| b.abs() > SEPARATION_BOUND) {
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                reason: format!("coefficient magnitude {} exceeds {SEPARATION_BOUND}: separation", b.abs()),
                best: beta,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: MAX_IRLS_ITER,
        reason: "IRLS iteration limit reached".into(),
        best: beta,
    })
}

/// IPTW weights `Z/e + (1-Z)/(1-e)` from a fitted propensity model.
pub fn compute_iptw(fit: &LogisticFit, records: Vec<SubjectRecord>) -> Result<WeightedSample> {
    let propensity: Vec<f64> = records.iter().map(|r| fit.predict(&r.covariates)).collect();
    iptw_from_propensity(records, propensity)
}

pub fn iptw_from_propensity(records: Vec<SubjectRecord>, propensity: Vec<f64>) -> Result<WeightedSample> {
    let bad: Vec<i64> = records
        .iter()
        .zip(&propensity)
        .filter(|(_, e)| !(**e > POSITIVITY_EPS && **e < 1.0 - POSITIVITY_EPS))
        .map(|(r, _)| r.id)
        .collect();
    if !bad.is_empty() {
        return Err(Error::PositivityViolation { ids: bad });
    }
    let weights = records
        .iter()
        .zip(&propensity)
        .map(|(r, &e)| if r.treatment { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect();
    WeightedSample::new(records, weights, propensity)
}

/// Rescales the weights to have mean exactly one.
pub fn center_weights(ws: &WeightedSample) -> Result<WeightedSample> {
    ws.with_weights(center(ws.weights()))
}

/// Divides a weight vector by its mean.
pub fn center(weights: &[f64]) -> Vec<f64> {
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    weights.iter().map(|w| w / mean).collect()
}

/// Intercept `b0` such that the average of `logistic(b0 + x psi)` over the
/// rows equals `target_mean`.
pub fn calibrate_intercept(coeffs: &[f64], covariates: &[Vec<f64>], target_mean: f64) -> Result<f64> {
    if !(target_mean > 0.0 && target_mean < 1.0) {
        return Err(Error::Calibration(format!("target {target_mean} outside (0, 1)")));
    }
    if covariates.is_empty() {
        return Err(Error::Calibration("no covariate rows".into()));
    }
    let lp: Vec<f64> = covariates
        .iter()
        .map(|x| x.iter().zip(coeffs).map(|(a, b)| a * b).sum())
        .collect();
    let n = lp.len() as f64;
    let gap = |b0: f64| lp.iter().map(|e| logistic(b0 + e)).sum::<f64>() / n - target_mean;
    let mut lo = -1.0;
    let mut hi = 1.0;
    while gap(lo) > 0.0 {
        lo *= 2.0;
        if lo < -1e3 {
            return Err(Error::Calibration("target unreachable from below".into()));
        }
    }
    while gap(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Calibration("target unreachable from above".into()));
        }
    }
    bisect(gap, lo, hi, 1e-15, 1e-13)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rec(id: i64, x: Vec<f64>, z: bool) -> SubjectRecord {
        SubjectRecord::new(id, x, z, 1.0, true).unwrap()
    }

    #[test]
    fn intercept_only_closed_form() {
        let recs: Vec<_> = [true, false, false, false]
            .iter()
            .enumerate()
            .map(|(i, &z)| rec(i as i64, vec![], z))
            .collect();
        let fit = fit_logistic(&recs).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[0], (1.0f64 / 3.0).ln(), epsilon = 1e-8);
    }

    #[test]
    fn balanced_independent_covariate_has_zero_slope() {
        let data = [(0.0, true), (0.0, false), (1.0, true), (1.0, false), (0.0, true), (1.0, true)];
        let recs: Vec<_> = data
            .iter()
            .enumerate()
            .map(|(i, &(x, z))| rec(i as i64, vec![x], z))
            .collect();
        let fit = fit_logistic(&recs).unwrap();
        assert_abs_diff_eq!(fit.coefficients[1], 0.0, epsilon = 1e-8);
    }

    fn six_points() -> Vec<SubjectRecord> {
        let data = [
            (-1.5, false),
            (-0.7, false),
            (-0.2, true),
            (0.3, false),
            (0.9, true),
            (1.6, true),
        ];
        data.iter()
            .enumerate()
            .map(|(i, &(x, z))| rec(i as i64, vec![x], z))
            .collect()
    }

    /// Brute-force oracle: successively refined 2-D grid search of the
    /// log-likelihood.
    fn grid_search_mle(recs: &[SubjectRecord]) -> (f64, f64) {
        let ll = |b0: f64, b1: f64| -> f64 {
            recs.iter()
                .map(|r| {
                    let eta = b0 + b1 * r.covariates[0];
                    let p = 1.0 / (1.0 + (-eta).exp());
                    if r.treatment {
                        p.ln()
                    } else {
                        (1.0 - p).ln()
                    }
                })
                .sum()
        };
        let (mut c0, mut c1, mut half) = (0.0, 0.0, 10.0);
        for _ in 0..12 {
            let mut best = (f64::NEG_INFINITY, c0, c1);
            for i in 0..=40 {
                for j in 0..=40 {
                    let b0 = c0 - half + 2.0 * half * i as f64 / 40.0;
                    let b1 = c1 - half + 2.0 * half * j as f64 / 40.0;
                    let v = ll(b0, b1);
                    if v > best.0 {
                        best = (v, b0, b1);
                    }
                }
            }
            c0 = best.1;
            c1 = best.2;
            half /= 4.0;
        }
        (c0, c1)
    }

    #[test]
    fn irls_matches_grid_search() {
        let recs = six_points();
        let fit = fit_logistic(&recs).unwrap();
        let (g0, g1) = grid_search_mle(&recs);
        assert_abs_diff_eq!(fit.coefficients[0], g0, epsilon = 1e-4);
        assert_abs_diff_eq!(fit.coefficients[1], g1, epsilon = 1e-4);
    }

    #[test]
    fn irls_fixed_point() {
        let recs = six_points();
        let fit = fit_logistic(&recs).unwrap();
        let rows: Vec<&[f64]> = recs.iter().map(|r| r.covariates.as_slice()).collect();
        let x = Design::new(rows.into_iter()).unwrap();
        let y: Vec<bool> = recs.iter().map(|r| r.treatment).collect();
        let (g, h) = score_info(&x, &y, &fit.coefficients);
        let d = newton_step(&g, &h).unwrap();
        assert!(max_abs(&d) < 1e-10);
    }

    #[test]
    fn separation_is_an_error() {
        let recs: Vec<_> = [(-2.0, false), (-1.0, false), (1.0, true), (2.0, true)]
            .iter()
            .enumerate()
            .map(|(i, &(x, z))| rec(i as i64, vec![x], z))
            .collect();
        let r = fit_logistic(&recs);
        assert!(matches!(r, Err(Error::NonConvergence { .. })), "{r:?}");
    }

    #[test]
    fn rank_deficient_design_is_an_error() {
        let recs: Vec<_> = [(1.0, false), (2.0, true), (3.0, false), (4.0, true)]
            .iter()
            .enumerate()
            .map(|(i, &(x, z))| rec(i as i64, vec![x, 2.0 * x], z))
            .collect();
        assert!(matches!(fit_logistic(&recs), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn iptw_definition() {
        let recs = vec![rec(1, vec![], true), rec(2, vec![], false), rec(3, vec![], true)];
        let ws = iptw_from_propensity(recs, vec![0.5, 0.2, 0.1]).unwrap();
        assert_abs_diff_eq!(ws.weights()[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.weights()[1], 1.25, epsilon = 1e-15);
        assert_abs_diff_eq!(ws.weights()[2], 10.0, epsilon = 1e-14);
    }

    #[test]
    fn positivity_violation_names_ids() {
        let recs = vec![rec(7, vec![], true), rec(8, vec![], false)];
        match iptw_from_propensity(recs, vec![1e-9, 0.5]) {
            Err(Error::PositivityViolation { ids }) => assert_eq!(ids, vec![7]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn centering_examples() {
        assert_eq!(center(&[2.0, 2.0, 2.0]), vec![1.0, 1.0, 1.0]);
        assert_eq!(center(&[1.0, 3.0]), vec![0.5, 1.5]);
    }

    #[test]
    fn calibrate_symmetric_case() {
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![3.0, -2.0]];
        let b0 = calibrate_intercept(&[0.0, 0.0], &x, 0.5).unwrap();
        assert_abs_diff_eq!(b0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn calibrate_rejects_bad_target() {
        assert!(calibrate_intercept(&[0.0], &[vec![1.0]], 1.0).is_err());
    }

    proptest! {
        #[test]
        fn centered_mean_is_one(w in proptest::collection::vec(0.01f64..100.0, 1..200)) {
            let c = center(&w);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            prop_assert!((mean - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn calibration_hits_target(psi in proptest::collection::vec(-1.0f64..1.0, 3),
                                   target in 0.05f64..0.95) {
            let rows: Vec<Vec<f64>> = (0..50)
                .map(|i| vec![(i % 7) as f64 - 3.0, (i % 2) as f64, ((i * 13) % 5) as f64 / 2.0])
                .collect();
            let b0 = calibrate_intercept(&psi, &rows, target).unwrap();
            let mean = rows.iter()
                .map(|x| logistic(b0 + x.iter().zip(&psi).map(|(a, b)| a * b).sum::<f64>()))
                .sum::<f64>() / rows.len() as f64;
            prop_assert!((mean - target).abs() <= 1e-8);
        }
    }
}
