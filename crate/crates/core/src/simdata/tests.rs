use super::*;
use approx::assert_abs_diff_eq;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn base_pop() -> Population {
    Population::new(&scenario_by_name("base").unwrap()).unwrap()
}

#[test]
fn exponential_draws_match_survival_curve() {
    let h = HazardModel::from_parts(1.0, 1.0, 0.0, EffectForm::LogTime { kappa: 0.0 }).unwrap();
    let mut t: Vec<f64> = exponential_draws(100_000, 3).iter().map(|&e| h.invert(e, false, 0.0)).collect();
    t.sort_by(f64::total_cmp);
    let n = t.len() as f64;
    let dev = t
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let s = (-x).exp();
            ((1.0 - i as f64 / n) - s).abs().max((1.0 - (i + 1) as f64 / n - s).abs())
        })
        .fold(0.0, f64::max);
    assert!(dev < 0.01, "max deviation {dev}");
}

#[test]
fn closed_form_matches_numeric_inversion() {
    let pop = base_pop();
    let e = exponential_draws(1000, 11);
    for (i, &e) in e.iter().enumerate() {
        let z = i % 2 == 1;
        let xp = pop.x_psi[i];
        let eta = pop.hazard.eta(z, xp);
        let a = pop.hazard.invert(e, z, eta);
        let b = pop.hazard.invert_numeric(e, z, eta).unwrap();
        assert!((a - b).abs() <= 1e-8, "subject {i}: {a} vs {b}");
        assert!((pop.hazard.cumhaz_numeric(b, z, eta) - e).abs() <= 1e-10);
    }
}

#[test]
fn piecewise_inversion_matches_numeric() {
    let h = HazardModel::from_parts(0.1, 1.2, 0.0, EffectForm::Piecewise { kappa: -0.25, cut: 2.0 }).unwrap();
    for &e in &[0.01, 0.1, 0.3, 0.5, 1.0, 3.0] {
        let a = h.invert(e, true, 0.2);
        let b = h.invert_numeric(e, true, 0.2).unwrap();
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        assert_abs_diff_eq!(h.cumhaz(a, true, 0.2), e, epsilon = 1e-12);
    }
}

#[test]
fn invalid_shape_is_rejected() {
    let err = HazardModel::from_parts(0.1, 0.2, 0.0, EffectForm::LogTime { kappa: -0.3 }).unwrap_err();
    assert!(matches!(err, Error::InvalidHazard(_)));
}

#[test]
fn piecewise_log_hazard_ratio_shifts_at_cut() {
    let h = HazardModel::from_parts(0.1, 1.2, 0.0, EffectForm::Piecewise { kappa: -0.25, cut: 2.0 }).unwrap();
    let n = 200_000;
    let e = exponential_draws(n, 5);
    let mut arms: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for (i, &e) in e.iter().enumerate() {
        let z = i % 2 == 1;
        arms[z as usize].push(h.invert(e, z, 0.0));
    }
    // Nelson-Aalen increments over [0, 2) and [2, 6)
    let na = |t: &mut Vec<f64>, a: f64, b: f64| {
        t.sort_by(f64::total_cmp);
        let m = t.len();
        t.iter()
            .enumerate()
            .filter(|(_, &x)| x >= a && x < b)
            .map(|(i, _)| 1.0 / (m - i) as f64)
            .sum::<f64>()
    };
    let mut a0 = arms[0].clone();
    let mut a1 = arms[1].clone();
    let before = (na(&mut a1, 0.0, 2.0) / na(&mut a0, 0.0, 2.0)).ln();
    let after = (na(&mut a1, 2.0, 6.0) / na(&mut a0, 2.0, 6.0)).ln();
    assert!((after - before + 0.25).abs() < 0.05, "shift {}", after - before);
}

#[test]
fn censoring_schemes() {
    let t = [12.0, 3.0];
    assert_eq!(apply_censoring(&t, &Censoring::Administrative { tau: 10.0 }, 0), vec![(10.0, false), (3.0, true)]);
    assert_eq!(apply_censoring(&t, &Censoring::None, 0), vec![(12.0, true), (3.0, true)]);

    let h = HazardModel::from_parts(1.0, 1.0, 0.0, EffectForm::LogTime { kappa: 0.0 }).unwrap();
    let times: Vec<f64> = exponential_draws(100_000, 8).iter().map(|&e| h.invert(e, false, 0.0)).collect();
    let obs = apply_censoring(&times, &Censoring::Uniform { a: 0.0, b: 20.0 }, 8);
    let events = obs.iter().filter(|o| o.1).count() as f64 / obs.len() as f64;
    let expected = integrate(|t| (1.0 - t / 20.0) * (-t).exp(), 0.0, 20.0, 1e-12);
    assert!((events - expected).abs() < 0.004, "{events} vs {expected}");
}

#[test]
fn treatment_assignment() {
    let n = 100_000;
    let x = vec![vec![1.0, 0.0]; n];
    let z = assign_treatment(&x, &[0.0, 0.0], 0.0, 1).unwrap();
    let frac = z.iter().filter(|&&z| z).count() as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.01);
    assert!(assign_treatment(&x, &[0.0], 0.0, 1).is_err());

    let pop = base_pop();
    let mean_p = pop.propensity.iter().sum::<f64>() / pop.n() as f64;
    assert_abs_diff_eq!(mean_p, 0.5, epsilon = 1e-8);
    let z = assign_treatment(&pop.covariates, &pop.spec.treatment_coeffs, pop.intercept, 2).unwrap();
    let frac = z.iter().filter(|&&z| z).count() as f64 / z.len() as f64;
    assert!((frac - 0.5).abs() < 0.03, "{frac}");

    let mags: Vec<f64> = pop.spec.treatment_coeffs.iter().map(|c| c.abs()).filter(|&c| c > 0.0).collect();
    assert_abs_diff_eq!(mags.iter().cloned().fold(0.0, f64::max), 0.8);
    assert_abs_diff_eq!(mags.iter().cloned().fold(f64::INFINITY, f64::min), 0.03);
}

#[test]
fn cohort_is_seed_deterministic() {
    let pop = base_pop();
    let a = pop.simulate_cohort(42).unwrap();
    let b = pop.simulate_cohort(42).unwrap();
    let c = pop.simulate_cohort(43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.iter().all(|r| r.time <= 10.0));
    assert!(a.iter().any(|r| !r.event));
}

#[test]
fn observed_times_are_potential_outcomes() {
    let pop = base_pop();
    let (t0, t1) = pop.potential_outcomes(9);
    let cohort = pop.simulate_cohort(9).unwrap();
    for (i, r) in cohort.iter().enumerate() {
        let t = if r.treatment { t1[i] } else { t0[i] };
        assert_eq!(r.time, t.min(10.0));
    }
}

#[test]
fn draws_are_monotone_in_uniform() {
    let pop = base_pop();
    let h = &pop.hazard;
    for i in 0..200 {
        for z in [false, true] {
            let eta = h.eta(z, pop.x_psi[i]);
            assert!(h.invert(0.3, z, eta) < h.invert(0.31, z, eta));
        }
    }
}

#[test]
fn null_scenario_has_zero_effects() {
    let pop = Population::new(&scenario_by_name("null").unwrap()).unwrap();
    let r = pop.truth(&[2.0, 5.0, 10.0], 10.0).unwrap();
    for v in r.values() {
        assert_eq!(v.unwrap(), 0.0);
    }
}

#[test]
fn exponential_rms_closed_form() {
    let (l0, l1, tau) = (0.1, 0.05, 10.0);
    let h = HazardModel::from_parts(l0, 1.0, (l1 / l0).ln(), EffectForm::LogTime { kappa: 0.0 }).unwrap();
    let r = true_estimands(&[0.0], &h, "exp", &[2.0], tau).unwrap();
    let rms = |l: f64| (1.0 - (-l * tau).exp()) / l;
    assert_abs_diff_eq!(r.values()[2].unwrap(), rms(l1) - rms(l0), epsilon = 1e-8);
    // control median is ln 2 / 0.1 = 6.93; treated median 13.9 lies beyond the horizon
    assert_abs_diff_eq!(r.median.0.unwrap(), 2f64.ln() / l0, epsilon = 1e-8);
    assert!(r.median.1.is_none());
    assert!(r.values()[1].is_none());
}

#[test]
fn truth_is_invariant_to_row_order() {
    let pop = base_pop();
    let mut shuffled = pop.x_psi.clone();
    shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
    let a = true_estimands(&pop.x_psi, &pop.hazard, "base", &[2.0, 5.0, 10.0], 10.0).unwrap();
    let b = true_estimands(&shuffled, &pop.hazard, "base", &[2.0, 5.0, 10.0], 10.0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn truth_agrees_with_potential_outcome_monte_carlo() {
    let pop = base_pop();
    let times = [2.0, 5.0, 10.0];
    let truth = pop.truth(&times, 10.0).unwrap();
    let mc = monte_carlo_truth(&pop, 200_000, 17, &times, 10.0);
    for (k, (t, (m, s))) in truth.values().iter().zip(mc.values.iter().zip(&mc.se)).enumerate() {
        let (t, m, s) = (t.unwrap(), m.unwrap(), s.unwrap());
        assert!((t - m).abs() <= 3.0 * s, "estimand {k}: truth {t} mc {m} se {s}");
    }
    for ((a0, a1), (b0, b1)) in truth.surv.iter().zip(&mc.surv) {
        assert!((a0 - b0).abs() < 0.01 && (a1 - b1).abs() < 0.01);
    }
}
