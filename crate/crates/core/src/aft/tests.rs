use super::*;
use crate::model::{SubjectRecord, WeightedSample};
use crate::numeric::{integrate, norm_pdf};
use approx::assert_abs_diff_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

fn cohort(rows: Vec<(f64, bool, bool)>) -> WeightedSample {
    let recs = rows
        .into_iter()
        .enumerate()
        .map(|(i, (t, e, z))| SubjectRecord::new(i as i64, vec![], z, t, e).unwrap())
        .collect();
    WeightedSample::unit(recs)
}

/// Draws from the log-time identity with administrative censoring at `tau`.
fn weibull_ls_sample(n: usize, p: [f64; 4], tau: f64, seed: u64) -> WeightedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let z = i % 2 == 1;
            let zf = if z { 1.0 } else { 0.0 };
            let eps: f64 = Exp1.sample(&mut rng);
            let t = ((-p[0] + p[2] * zf + eps.ln()) / (p[1] + p[3] * zf)).exp();
            (t.min(tau), t <= tau, z)
        })
        .collect();
    cohort(rows)
}

fn lognormal_sample(n: usize, mu: f64, sigma: f64, beta: f64, seed: u64) -> WeightedSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let z = i % 2 == 1;
            let e: f64 = StandardNormal.sample(&mut rng);
            let t = (mu + if z { beta } else { 0.0 } + sigma * e).exp();
            (t.min(10.0), t <= 10.0, z)
        })
        .collect();
    cohort(rows)
}

#[test]
fn density_integrates_to_one() {
    for q in [-1.5, -0.5, -0.19, -1e-3, 0.0, 1e-6, 0.1, 0.21, 1.0, 2.0] {
        let v = integrate(|w| log_density_w(w, q).0.exp(), -60.0, 60.0, 1e-13);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-10);
    }
}

#[test]
fn density_derivatives_match_finite_differences() {
    for q in [-1.2, -0.3, -0.15, 0.05, 0.19, 0.20001, 0.7, 1.0] {
        for w in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let (_, dw, dq) = log_density_w(w, q);
            let h = 1e-6;
            let fw = (log_density_w(w + h, q).0 - log_density_w(w - h, q).0) / (2.0 * h);
            let fq = (log_density_w(w, q + h).0 - log_density_w(w, q - h).0) / (2.0 * h);
            assert!((dw - fw).abs() < 1e-7, "q={q} w={w}: {dw} vs {fw}");
            assert!((dq - fq).abs() < 1e-7, "q={q} w={w}: {dq} vs {fq}");
        }
    }
}

#[test]
fn survival_matches_density_quadrature() {
    for q in [-1.0, -0.4, -0.2, -0.05, 0.0, 0.03, 0.19, 0.2, 0.6, 1.0, 1.7] {
        for w in [-4.0, -1.5, -0.2, 0.0, 0.8, 2.0, 3.5] {
            let tail = integrate(|u| log_density_w(u, q).0.exp(), w, 80.0, 1e-14);
            assert_abs_diff_eq!(log_surv_w(w, q).exp(), tail, epsilon = 1e-11);
        }
    }
}

#[test]
fn far_tail_log_survival_is_finite() {
    // S underflows in double precision but its log stays accurate
    let ls = log_surv_w(40.0, 0.0);
    let mills = -0.5 * 1600.0 - (40.0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
    assert!((ls - mills).abs() < 1e-3);
}

#[test]
fn gengamma_at_q1_is_weibull() {
    let w = [-2.0, 1.3, 0.4, 0.0];
    let g = [2.0 / 1.3, -(1.3f64.ln()), 1.0, 0.4 / 1.3];
    for z in [0.0, 1.0] {
        for k in 1..=1000 {
            let t = k as f64 / 100.0;
            assert_abs_diff_eq!(
                gengamma_survival(&g, z, t),
                weibull_ls_survival(&w, z, t),
                epsilon = 1e-8
            );
        }
    }
}

#[test]
fn survival_near_q_zero_follows_first_order_expansion() {
    // S(w; Q) = 1 - Phi(w) - Q (w^2 + 2) phi(w) / 6 + O(Q^2)
    for w in [-2.0, -0.5, 0.0, 1.0, 2.5] {
        let q = 1e-5;
        let expected_gap = 2.0 * q * (w * w + 2.0) * norm_pdf(w) / 6.0;
        let gap = surv_w(w, -q) - surv_w(w, q);
        assert_abs_diff_eq!(gap, expected_gap, epsilon = 1e-10);
    }
    // inside the switch the log-normal limit is exact
    assert_eq!(surv_w(0.3, 5e-6), crate::numeric::norm_sf(0.3));
}

#[test]
fn weibull_null_model_gives_equal_arms() {
    let fit = AftFit {
        family: AftFamily::WeibullLs,
        params: vec![-1.0, 1.4, 0.0, 0.0],
        loglik: 0.0,
        gradient: vec![0.0; 4],
        iterations: 0,
        converged: true,
    };
    let grid = parametric_grid(10.0, 0.01);
    let a = aft_survival_curve(&fit, false, &grid).unwrap();
    let b = aft_survival_curve(&fit, true, &grid).unwrap();
    assert_eq!(a.surv(), b.surv());
}

#[test]
fn exponential_special_case() {
    let lambda: f64 = 0.3;
    let p = [lambda.ln(), 1.0, 0.0, 0.0];
    for t in [0.1, 1.0, 4.0, 9.5] {
        assert_abs_diff_eq!(weibull_ls_survival(&p, 0.0, t), (-lambda * t).exp(), epsilon = 1e-15);
    }
}

#[test]
fn log_time_identity_pins_scale_convention() {
    let p = [(0.2f64).ln(), 1.1, -0.5, 0.3];
    let n = 200_000;
    let ws = weibull_ls_sample(n, p, f64::INFINITY, 7);
    for z in [false, true] {
        let times: Vec<f64> = ws.records().iter().filter(|r| r.treatment == z).map(|r| r.time).collect();
        for t in [0.5, 1.0, 3.0, 8.0] {
            let emp = times.iter().filter(|&&x| x > t).count() as f64 / times.len() as f64;
            let s = weibull_ls_survival(&p, if z { 1.0 } else { 0.0 }, t);
            assert!((emp - s).abs() < 0.006, "z={z} t={t}: {emp} vs {s}");
        }
    }
}

#[test]
fn hazard_ratio_is_affine_in_log_time() {
    let p: [f64; 4] = [-2.0, 1.2, -0.7, 0.25];
    let (t1, t2) = (0.5f64, 4.0f64);
    let (a, b) = (weibull_ls_log_hazard_ratio(&p, t1), weibull_ls_log_hazard_ratio(&p, t2));
    let slope = (b - a) / (t2.ln() - t1.ln());
    assert_abs_diff_eq!(slope, 0.25, epsilon = 1e-12);
    for t in [0.1f64, 1.0, 7.3] {
        let h = |z: f64| {
            let shape = p[1] + p[3] * z;
            (p[0] - p[2] * z).exp() * shape * t.powf(shape - 1.0)
        };
        let direct = (h(1.0) / h(0.0)).ln();
        assert_abs_diff_eq!(direct, a + slope * (t.ln() - t1.ln()), epsilon = 1e-12);
    }
}

#[test]
fn exponential_data_recovers_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<(f64, bool, bool)> = (0..20_000)
        .map(|i| {
            let t: f64 = Exp1.sample(&mut rng);
            let t = t / 0.4;
            (t.min(6.0), t <= 6.0, i % 2 == 0)
        })
        .collect();
    let ws = cohort(rows);
    let fit = fit_weibull_ls(&ws).unwrap();
    assert!(max_abs(&fit.gradient) <= 1e-6);
    let arm0: Vec<_> = ws.records().iter().filter(|r| !r.treatment).collect();
    let d = arm0.iter().filter(|r| r.event).count() as f64;
    let total: f64 = arm0.iter().map(|r| r.time).sum();
    // shape SE for n=10000 Weibull is about 0.01
    assert!((fit.params[1] - 1.0).abs() < 0.03, "shape {}", fit.params[1]);
    let se_rate = (d.sqrt() / total) * 3.0;
    let closed = d / total;
    assert!((fit.params[0].exp() - closed).abs() < 3.0 * se_rate);
}

fn max_abs(v: &[f64]) -> f64 {
    crate::numeric::max_abs(v)
}

#[test]
fn weibull_kappa_zero_is_unbiased() {
    let p = [(0.1f64).ln(), 1.2, -0.5, 0.0];
    let kappas: Vec<f64> = (0..20)
        .map(|k| fit_weibull_ls(&weibull_ls_sample(20_000, p, 10.0, 100 + k)).unwrap().params[3])
        .collect();
    let m = kappas.iter().sum::<f64>() / 20.0;
    let sd = (kappas.iter().map(|k| (k - m).powi(2)).sum::<f64>() / 19.0).sqrt();
    assert!(m.abs() < 3.0 * sd / 20f64.sqrt() + 1e-12, "mean {m} sd {sd}");
}

#[test]
fn weibull_weights_scale_out() {
    let ws = weibull_ls_sample(500, [-2.0, 1.1, 0.3, 0.2], 10.0, 3);
    let a = fit_weibull_ls(&ws).unwrap();
    let b = fit_weibull_ls(&ws.with_weights(vec![3.0; ws.len()]).unwrap()).unwrap();
    for (x, y) in a.params.iter().zip(&b.params) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-10);
    }
}

#[test]
fn gengamma_gradient_matches_finite_differences() {
    let ws = weibull_ls_sample(400, [-2.0, 1.3, 0.4, 0.0], 3.0, 5);
    for q in [-0.6, -0.1, 0.0, 0.15, 0.8] {
        let th = [1.5, -0.2, q, 0.3];
        let base = gengamma_loglik(&ws, &th).unwrap();
        assert!(base.is_finite());
        let loglik = |x: &[f64]| gengamma_loglik(&ws, x).unwrap();
        let mut g = [0.0; 4];
        for j in 0..4 {
            let h = 1e-5;
            let mut p = th;
            let mut m = th;
            p[j] += h;
            m[j] -= h;
            g[j] = (loglik(&p) - loglik(&m)) / (2.0 * h);
        }
        let data_grad = super::gengamma::loglik_gradient(&ws, &th).unwrap();
        for j in 0..4 {
            assert!((g[j] - data_grad[j]).abs() < 1e-5 * (1.0 + g[j].abs()), "q={q} j={j}: {} vs {}", g[j], data_grad[j]);
        }
    }
}

#[test]
fn gengamma_on_weibull_data_nests() {
    let ws = weibull_ls_sample(5000, [(0.1f64).ln(), 1.2, -0.6, 0.0], 10.0, 21);
    let free = fit_gengamma(&ws).unwrap();
    assert!(max_abs(&free.gradient) <= 1e-6);
    let fixed = gengamma_loglik_fixed_q(&ws, 1.0, &free.params).unwrap();
    let lr = 2.0 * (free.loglik - fixed);
    assert!((-1e-6..=2.0 * 3.841).contains(&lr), "LR {lr}");
}

#[test]
fn gengamma_on_lognormal_data_has_q_near_zero() {
    let ws = lognormal_sample(20_000, 1.5, 0.8, 0.4, 8);
    let fit = fit_gengamma(&ws).unwrap();
    let se = super::gengamma::standard_errors(&ws, &fit.params).unwrap();
    assert!(fit.params[2].abs() < 3.0 * se[2], "Q {} se {}", fit.params[2], se[2]);
    assert!((fit.params[3] - 0.4).abs() < 3.0 * se[3]);
}

#[test]
fn gengamma_unit_weights_equal_unweighted() {
    let ws = lognormal_sample(800, 1.0, 0.9, -0.3, 2);
    let a = fit_gengamma(&ws).unwrap();
    let explicit = ws.with_weights(vec![1.0; ws.len()]).unwrap();
    let b = fit_gengamma(&explicit).unwrap();
    for (x, y) in a.params.iter().zip(&b.params) {
        assert_abs_diff_eq!(x, y, epsilon = 1e-8);
    }
}

#[test]
fn gengamma_curves_are_monotone_and_start_at_one() {
    let ws = lognormal_sample(1000, 1.0, 0.9, -0.3, 4);
    let fit = fit_gengamma(&ws).unwrap();
    let grid = parametric_grid(10.0, 0.01);
    assert_eq!(grid.len(), 1000);
    assert_eq!(grid[199], 2.0);
    for z in [false, true] {
        let c = aft_survival_curve(&fit, z, &grid).unwrap();
        assert_eq!(c.evaluate(0.0).unwrap(), 1.0);
        assert!(c.surv().windows(2).all(|w| w[1] <= w[0]));
    }
}
