//! Weibull model with a treatment-specific shape.
//!
//! `log T = (-log lambda + beta Z + eps) / (gamma + kappa Z)` with `eps` the
//! log of a unit exponential, so that
//! `S_z(t) = exp(-lambda exp(-beta z) t^(gamma + kappa z))`.
//! On the hazard scale this is `h_0(t) = lambda gamma t^(gamma-1)` and
//! `log h_1(t)/h_0(t) = -beta + log((gamma+kappa)/gamma) + kappa log t`.
//! Each arm is then an ordinary two-parameter Weibull, so the joint MLE
//! factorizes into two profile-likelihood problems in the shape.

use super::{AftFamily, AftFit};
use crate::error::{Error, Result};
use crate::model::WeightedSample;
use crate::numeric::max_abs;

const SHAPE_TOL: f64 = 1e-13;

/// Weighted sufficient pieces of one arm: (log t, event, weight).
struct Arm {
    obs: Vec<(f64, bool, f64)>,
    d: f64,
    a: f64,
    log_tmax: f64,
}

impl Arm {
    fn new(data: Vec<(f64, bool, f64)>) -> Result<Self> {
        let mut obs = Vec::with_capacity(data.len());
        for (t, e, w) in data {
            if t <= 0.0 {
                if e {
                    return Err(Error::Data("event at time 0 has zero Weibull density".into()));
                }
                continue;
            }
            obs.push((t.ln(), e, w));
        }
        let d: f64 = obs.iter().filter(|o| o.1).map(|o| o.2).sum();
        if d <= 0.0 {
            return Err(Error::Data("each arm needs at least one event".into()));
        }
        let a = obs.iter().filter(|o| o.1).map(|o| o.2 * o.0).sum();
        let log_tmax = obs.iter().map(|o| o.0).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { obs, d, a, log_tmax })
    }

    /// Scaled sums `sum w s^g (log s)^k` for `s = t / tmax`, k = 0, 1, 2.
    fn moments(&self, g: f64) -> (f64, f64, f64) {
        let (mut c, mut b, mut e) = (0.0, 0.0, 0.0);
        for &(lt, _, w) in &self.obs {
            let ls = lt - self.log_tmax;
            let v = w * (g * ls).exp();
            c += v;
            b += v * ls;
            e += v * ls * ls;
        }
        (c, b, e)
    }

    /// Profile score in the shape and its derivative.
    fn score(&self, g: f64) -> (f64, f64) {
        let (c, b, e) = self.moments(g);
        let m = b / c;
        let score = self.d / g + self.a - self.d * (self.log_tmax + m);
        let deriv = -self.d / (g * g) - self.d * (e / c - m * m);
        (score, deriv)
    }

    /// Shape and log-rate MLE.
    fn fit(&self) -> Result<(f64, f64)> {
        // score is strictly decreasing in g; bracket then safeguarded Newton
        let mut lo = 1e-3;
        let mut hi = 1.0;
        while self.score(hi).0 > 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e3 {
                return Err(Error::NonConvergence {
                    iterations: 0,
                    reason: "Weibull shape diverges".into(),
                    best: vec![hi],
                });
            }
        }
        while self.score(lo).0 < 0.0 {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-8 {
                return Err(Error::NonConvergence {
                    iterations: 0,
                    reason: "Weibull shape collapses to zero".into(),
                    best: vec![lo],
                });
            }
        }
        let mut g = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (s, ds) = self.score(g);
            if s > 0.0 {
                lo = g;
            } else {
                hi = g;
            }
            let mut next = g - s / ds;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - g).abs() <= SHAPE_TOL * g || hi - lo <= SHAPE_TOL * g {
                g = next;
                break;
            }
            g = next;
        }
        let (c, _, _) = self.moments(g);
        let log_rate = self.d.ln() - c.ln() - g * self.log_tmax;
        Ok((g, log_rate))
    }

    /// Log-likelihood and its gradient in (log rate, shape).
    fn loglik(&self, log_rate: f64, g: f64) -> (f64, f64, f64) {
        let rate = log_rate.exp();
        let (mut ll, mut dl, mut dg) = (0.0, 0.0, 0.0);
        for &(lt, e, w) in &self.obs {
            let h = rate * (g * lt).exp();
            ll -= w * h;
            dl -= w * h;
            dg -= w * h * lt;
            if e {
                ll += w * (log_rate + g.ln() + (g - 1.0) * lt);
                dl += w;
                dg += w * (1.0 / g + lt);
            }
        }
        (ll, dl, dg)
    }
}

/// Weighted MLE of the treatment-varying-shape Weibull model.
/// Parameters are `(log lambda, gamma, beta, kappa)`.
pub fn fit_weibull_ls(ws: &WeightedSample) -> Result<AftFit> {
    let arm0 = Arm::new(ws.arm(false))?;
    let arm1 = Arm::new(ws.arm(true))?;
    let (g0, l0) = arm0.fit()?;
    let (g1, l1) = arm1.fit()?;
    let (ll0, dl0, dg0) = arm0.loglik(l0, g0);
    let (ll1, dl1, dg1) = arm1.loglik(l1, g1);
    // chain rule to (log lambda, gamma, beta, kappa): log lambda_1 = log lambda - beta
    let grad = vec![dl0 + dl1, dg0 + dg1, -dl1, dg1];
    let converged = max_abs(&grad) <= 1e-6;
    if !converged {
        return Err(Error::NonConvergence {
            iterations: 0,
            reason: format!("Weibull gradient {} above tolerance", max_abs(&grad)),
            best: vec![l0, g0, l0 - l1, g1 - g0],
        });
    }
    Ok(AftFit {
        family: AftFamily::WeibullLs,
        params: vec![l0, g0, l0 - l1, g1 - g0],
        loglik: ll0 + ll1,
        gradient: grad,
        iterations: 1,
        converged,
    })
}

/// `S_z(t)` for parameters `(log lambda, gamma, beta, kappa)`.
pub fn weibull_ls_survival(params: &[f64], z: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let (log_lambda, gamma, beta, kappa) = (params[0], params[1], params[2], params[3]);
    let shape = gamma + kappa * z;
    (-(log_lambda - beta * z + shape * t.ln()).exp()).exp()
}

/// `log h_1(t) / h_0(t)` implied by the fitted parameters.
pub fn weibull_ls_log_hazard_ratio(params: &[f64], t: f64) -> f64 {
    let (gamma, beta, kappa) = (params[1], params[2], params[3]);
    -beta + ((gamma + kappa) / gamma).ln() + kappa * t.ln()
}
