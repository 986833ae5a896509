//! Generalized gamma AFT model in the (mu, sigma, Q) parameterization:
//! `log T = mu + beta Z + sigma W`, where for `Q != 0` and `a = Q^-2` the
//! variable `a exp(Q W)` is Gamma(a, 1). `Q = 1` is the Weibull, `Q = 0` the
//! log-normal.
//!
//! Near `Q = 0` the closed form cancels catastrophically, so for `|Q| < 0.2`
//! the log density is evaluated from its Taylor and Stirling series and the
//! survival function by quadrature of the density in `w`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::{digamma, gamma_lr, gamma_ur, ln_gamma};

use super::{AftFamily, AftFit};
use crate::error::{Error, Result};
use crate::model::WeightedSample;
use crate::numeric::{max_abs, minimize_bfgs, norm_sf, MinimizeOptions};

/// Below this `|Q|` the survival curve uses the log-normal limit.
pub const LOGNORMAL_SWITCH: f64 = 1e-5;
const SERIES_SWITCH: f64 = 0.2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const Q_STEP: f64 = 1e-3;
const RESTARTS: usize = 3;

/// Normalizing constant `log|Q| + a log a - a - lnGamma(a)` and its
/// derivative in Q.
fn norm_const(q: f64) -> (f64, f64) {
    if q.abs() < SERIES_SWITCH {
        let q2 = q * q;
        let q4 = q2 * q2;
        let c = -LN_SQRT_2PI - q2 / 12.0 + q4 * q2 / 360.0 - q4 * q4 * q2 / 1260.0 + q4 * q4 * q4 * q2 / 1680.0;
        let dc = -q / 6.0 + q4 * q / 60.0 - q4 * q4 * q / 126.0 + q4 * q4 * q4 * q / 120.0;
        (c, dc)
    } else {
        let a = 1.0 / (q * q);
        let c = q.abs().ln() + a * a.ln() - a - ln_gamma(a);
        let dc = 1.0 / q - 2.0 * (a.ln() - digamma(a)) / (q * q * q);
        (c, dc)
    }
}

/// `(exp(x) - 1 - x) / Q^2` with `x = Q w`.
fn excess(q: f64, w: f64) -> f64 {
    let x = q * w;
    if x.abs() < 0.5 {
        // w^2 sum_{k>=2} x^(k-2) / k!
        let mut term = 0.5;
        let mut sum = 0.5;
        for k in 3..30 {
            term *= x / k as f64;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        w * w * sum
    } else {
        (x.exp_m1() - x) / (q * q)
    }
}

/// Derivative of [`excess`] in Q at fixed w.
fn excess_dq(q: f64, w: f64) -> f64 {
    let x = q * w;
    if x.abs() < 0.5 {
        // w^3 sum_{k>=3} x^(k-3) (k-2) / k!
        let mut fact = 6.0;
        let mut pow = 1.0;
        let mut sum = 1.0 / 6.0;
        for k in 4..32 {
            fact *= k as f64;
            pow *= x;
            let term = pow * (k - 2) as f64 / fact;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        w * w * w * sum
    } else {
        let em1 = x.exp_m1();
        (x * em1 - 2.0 * (em1 - x)) / (q * q * q)
    }
}

/// Log density of W with derivatives in w and Q.
pub fn log_density_w(w: f64, q: f64) -> (f64, f64, f64) {
    let (c, dc) = norm_const(q);
    let logf = c - excess(q, w);
    let dw = if q == 0.0 { -w } else { -(q * w).exp_m1() / q };
    (logf, dw, dc - excess_dq(q, w))
}

fn log_density_only(w: f64, q: f64) -> f64 {
    norm_const(q).0 - excess(q, w)
}

const GL10_X: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL10_W: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// `int exp(logf(u) - logf(w0)) du` over `[lo, hi]`, fixed composite
/// 10-point Gauss-Legendre on 24 panels.
fn scaled_integral(q: f64, w0: f64, lo: f64, hi: f64) -> f64 {
    let base = log_density_only(w0, q);
    let panels = 24;
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let c = lo + (p as f64 + 0.5) * h;
        let r = 0.5 * h;
        let mut s = 0.0;
        for k in 0..5 {
            let d = r * GL10_X[k];
            s += GL10_W[k] * ((log_density_only(c - d, q) - base).exp() + (log_density_only(c + d, q) - base).exp());
        }
        total += s * r;
    }
    total
}

/// Log survival of W by quadrature; valid for `|Q| < 0.2`.
fn log_surv_quadrature(w: f64, q: f64) -> f64 {
    let slope = if q == 0.0 { w.abs() } else { ((q * w).exp_m1() / q).abs() };
    let len = if slope < 40.0 / 12.0 { 12.0 } else { 40.0 / slope };
    if w >= 0.0 {
        log_density_only(w, q) + scaled_integral(q, w, w, w + len).ln()
    } else {
        let lower = (log_density_only(w, q)).exp() * scaled_integral(q, w, w - len, w);
        (-lower).ln_1p()
    }
}

/// Log survival of W, continuous in Q (used by the likelihood).
pub fn log_surv_w(w: f64, q: f64) -> f64 {
    if q.abs() < SERIES_SWITCH {
        return log_surv_quadrature(w, q);
    }
    let a = 1.0 / (q * q);
    let u = a * (q * w).exp();
    let upper = q > 0.0;
    if u <= 0.0 {
        return if upper { 0.0 } else { f64::NEG_INFINITY };
    }
    if !u.is_finite() {
        return if upper { f64::NEG_INFINITY } else { 0.0 };
    }
    let s = if upper { gamma_ur(a, u) } else { gamma_lr(a, u) };
    s.ln()
}

/// Survival of W as reported on curves: the log-normal limit for
/// `|Q| < 1e-5`, otherwise [`log_surv_w`].
pub fn surv_w(w: f64, q: f64) -> f64 {
    if q.abs() < LOGNORMAL_SWITCH {
        norm_sf(w)
    } else {
        log_surv_w(w, q).exp()
    }
}

/// Survival of T for parameters `(mu, log sigma, Q, beta)`.
pub fn gengamma_survival(params: &[f64], z: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let (mu, sigma, q, beta) = (params[0], params[1].exp(), params[2], params[3]);
    surv_w((t.ln() - mu - beta * z) / sigma, q)
}

struct Data {
    /// events: (log t, z, weight)
    events: Vec<(f64, f64, f64)>,
    /// censored, grouped by (time, arm): (log t, z, summed weight)
    censored: Vec<(f64, f64, f64)>,
    /// sum of w log t over events, a parameter-free term
    event_log_t: f64,
}

impl Data {
    fn new(ws: &WeightedSample) -> Result<Self> {
        let mut events = Vec::new();
        let mut cens: Vec<(f64, bool, f64)> = Vec::new();
        let (mut e0, mut e1) = (0usize, 0usize);
        for (r, &w) in ws.records().iter().zip(ws.weights()) {
            if r.event {
                if r.time <= 0.0 {
                    return Err(Error::Data("event at time 0 has zero generalized gamma density".into()));
                }
                events.push((r.time.ln(), r.z(), w));
                if r.treatment {
                    e1 += 1;
                } else {
                    e0 += 1;
                }
            } else if r.time > 0.0 {
                cens.push((r.time, r.treatment, w));
            }
        }
        if e0 == 0 || e1 == 0 {
            return Err(Error::Data("each arm needs at least one event".into()));
        }
        cens.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut censored: Vec<(f64, f64, f64)> = Vec::new();
        for (t, z, w) in cens {
            let zf = if z { 1.0 } else { 0.0 };
            match censored.last_mut() {
                Some(last) if last.0 == t.ln() && last.1 == zf => last.2 += w,
                _ => censored.push((t.ln(), zf, w)),
            }
        }
        let event_log_t = events.iter().map(|e| e.2 * e.0).sum();
        Ok(Self {
            events,
            censored,
            event_log_t,
        })
    }

    /// Negative log-likelihood and gradient in `(mu, log sigma, Q, beta)`.
    fn objective(&self, th: &[f64]) -> (f64, Vec<f64>) {
        let (mu, ls, q, beta) = (th[0], th[1], th[2], th[3]);
        let sigma = ls.exp();
        if !sigma.is_finite() || sigma <= 0.0 || !q.is_finite() {
            return (f64::INFINITY, vec![f64::NAN; 4]);
        }
        let mut ll = -self.event_log_t;
        let mut g = [0.0; 4];
        let (c, dc) = norm_const(q);
        for &(lt, z, w) in &self.events {
            let om = (lt - mu - beta * z) / sigma;
            let logf = c - excess(q, om);
            let dw = if q == 0.0 { -om } else { -(q * om).exp_m1() / q };
            ll += w * (logf - ls);
            g[0] -= w * dw / sigma;
            g[1] -= w * (dw * om + 1.0);
            g[2] += w * (dc - excess_dq(q, om));
            g[3] -= w * dw * z / sigma;
        }
        for &(lt, z, w) in &self.censored {
            let om = (lt - mu - beta * z) / sigma;
            let lsurv = log_surv_w(om, q);
            let hz = -(log_density_only(om, q) - lsurv).exp();
            ll += w * lsurv;
            g[0] -= w * hz / sigma;
            g[1] -= w * hz * om;
            g[3] -= w * hz * z / sigma;
            let f = |dq: f64| log_surv_w(om, q + dq);
            let d = (f(-2.0 * Q_STEP) - 8.0 * f(-Q_STEP) + 8.0 * f(Q_STEP) - f(2.0 * Q_STEP)) / (12.0 * Q_STEP);
            g[2] += w * d;
        }
        if !ll.is_finite() {
            return (f64::INFINITY, vec![f64::NAN; 4]);
        }
        (-ll, g.iter().map(|v| -v).collect())
    }
}

/// Inverse of a central-difference Hessian of `obj`, if positive definite.
fn inverse_hessian(obj: &impl Fn(&[f64]) -> (f64, Vec<f64>), x: &[f64]) -> Option<Vec<Vec<f64>>> {
    let n = x.len();
    let mut h = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-5 * (1.0 + x[j].abs());
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += step;
        xm[j] -= step;
        let (_, gp) = obj(&xp);
        let (_, gm) = obj(&xm);
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let h = 0.5 * (&h + h.transpose());
    if !h.iter().all(|v| v.is_finite()) {
        return None;
    }
    let inv = h.cholesky()?.inverse();
    Some((0..n).map(|i| (0..n).map(|j| inv[(i, j)]).collect()).collect())
}

struct Run {
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// BFGS to the neighbourhood of the optimum, then Newton steps judged by the
/// gradient norm, which stays informative after objective differences have
/// fallen below rounding.
fn minimize(obj: &impl Fn(&[f64]) -> (f64, Vec<f64>), x0: &[f64], grad_tol: f64) -> Run {
    // BFGS only needs to reach the Newton basin; near the optimum its line
    // search stalls on rounding and wastes iterations.
    let opts = MinimizeOptions {
        max_iter: 200,
        grad_tol: grad_tol.max(1e-3),
    };
    let m = minimize_bfgs(obj, x0, inverse_hessian(obj, x0), &opts);
    let (mut x, mut value, mut grad) = (m.x, m.value, m.grad);
    let mut iterations = m.iterations;
    if !value.is_finite() {
        return Run {
            x,
            value,
            grad,
            iterations,
            converged: false,
        };
    }
    for _ in 0..20 {
        if max_abs(&grad) <= grad_tol {
            break;
        }
        let Some(hinv) = inverse_hessian(obj, &x) else { break };
        iterations += 1;
        let xn: Vec<f64> = (0..x.len())
            .map(|i| x[i] - hinv[i].iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let (vn, gn) = obj(&xn);
        let tol = 1e-9 * value.abs().max(1.0);
        if !(vn.is_finite() && vn <= value + tol && max_abs(&gn) < max_abs(&grad)) {
            break;
        }
        x = xn;
        value = vn;
        grad = gn;
    }
    let converged = max_abs(&grad) <= grad_tol;
    Run {
        x,
        value,
        grad,
        iterations,
        converged,
    }
}

fn run(data: &Data, x0: &[f64]) -> (Vec<f64>, f64, Vec<f64>, usize, bool) {
    let r = minimize(&|th: &[f64]| data.objective(th), x0, 1e-6);
    (r.x, -r.value, r.grad, r.iterations, r.converged)
}

/// Starting point `(mu, log sigma, Q, beta)` matching a Weibull fit
/// `(log lambda, gamma, beta_w, kappa)` at Q = 1.
pub fn start_from_weibull(w: &[f64]) -> Vec<f64> {
    let (log_lambda, gamma, beta_w, kappa) = (w[0], w[1], w[2], w[3]);
    let shape = gamma + 0.5 * kappa;
    vec![-log_lambda / shape, -shape.ln(), 1.0, beta_w / shape]
}

/// Weighted MLE of the generalized gamma AFT model, started from `start`
/// (defaults to the Weibull nesting) with seeded random restarts on failure.
pub fn fit_gengamma_from(ws: &WeightedSample, start: Option<&[f64]>) -> Result<AftFit> {
    let data = Data::new(ws)?;
    let x0 = match start {
        Some(s) => s.to_vec(),
        None => start_from_weibull(&super::fit_weibull_ls(ws)?.params),
    };
    let mut best = run(&data, &x0);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6767);
    let mut attempt = 0;
    while !best.4 && attempt < RESTARTS {
        attempt += 1;
        let x: Vec<f64> = x0
            .iter()
            .enumerate()
            .map(|(i, v)| if i == 2 { rng.random_range(-1.0..1.5) } else { v + rng.random_range(-0.3..0.3) })
            .collect();
        let cand = run(&data, &x);
        if cand.4 || cand.1 > best.1 {
            best = cand;
        }
    }
    let (x, ll, g, iterations, converged) = best;
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            reason: format!("generalized gamma gradient {} above tolerance after restarts", max_abs(&g)),
            best: x,
        });
    }
    Ok(AftFit {
        family: AftFamily::Gengamma,
        params: x,
        loglik: ll,
        gradient: g.iter().map(|v| -v).collect(),
        iterations,
        converged,
    })
}

pub fn fit_gengamma(ws: &WeightedSample) -> Result<AftFit> {
    fit_gengamma_from(ws, None)
}

/// Weighted log-likelihood at arbitrary parameters.
pub fn gengamma_loglik(ws: &WeightedSample, params: &[f64]) -> Result<f64> {
    Ok(-Data::new(ws)?.objective(params).0)
}

/// Maximizes the likelihood with Q held fixed; returns the log-likelihood.
pub fn gengamma_loglik_fixed_q(ws: &WeightedSample, q: f64, start: &[f64]) -> Result<f64> {
    let data = Data::new(ws)?;
    let obj = |th: &[f64]| {
        let full = [th[0], th[1], q, th[2]];
        let (v, g) = data.objective(&full);
        (v, vec![g[0], g[1], g[3]])
    };
    let x0 = [start[0], start[1], start[3]];
    let m = minimize(&obj, &x0, 1e-6);
    if !m.converged {
        return Err(Error::NonConvergence {
            iterations: m.iterations,
            reason: "fixed-Q generalized gamma fit".into(),
            best: m.x,
        });
    }
    Ok(-m.value)
}

/// Gradient of the weighted log-likelihood at `params`.
pub fn loglik_gradient(ws: &WeightedSample, params: &[f64]) -> Result<Vec<f64>> {
    let (_, g) = Data::new(ws)?.objective(params);
    Ok(g.iter().map(|v| -v).collect())
}

/// Observed-information standard errors at `params`.
pub fn standard_errors(ws: &WeightedSample, params: &[f64]) -> Result<Vec<f64>> {
    let data = Data::new(ws)?;
    let inv = inverse_hessian(&|th: &[f64]| data.objective(th), params)
        .ok_or_else(|| Error::SingularDesign("information matrix not positive definite".into()))?;
    Ok((0..params.len()).map(|i| inv[i][i].sqrt()).collect())
}
