//! Weighted Kaplan-Meier curves and jackknife pseudo-observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{StepCurve, SubjectRecord, WeightedSample};

/// Weighted product-limit estimate for one arm.
pub fn weighted_km(ws: &WeightedSample, treated: bool) -> Result<StepCurve> {
    let arm = ws.arm(treated);
    if arm.is_empty() {
        return Err(Error::Data(format!(
            "arm {} has no subjects",
            if treated { 1 } else { 0 }
        )));
    }
    km_curve(arm)
}

/// Product-limit curve from `(time, event, weight)` triples. At tied times
/// deaths are counted before censorings, so censored subjects remain in the
/// risk set of the deaths they tie with.
pub fn km_curve(mut obs: Vec<(f64, bool, f64)>) -> Result<StepCurve> {
    if obs.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    obs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = obs.len();
    let mut at_risk = vec![0.0; n + 1];
    for i in (0..n).rev() {
        at_risk[i] = at_risk[i + 1] + obs[i].2;
    }
    let mut times = Vec::new();
    let mut surv = Vec::new();
    let mut s = 1.0;
    let mut i = 0;
    while i < n {
        let t = obs[i].0;
        let risk = at_risk[i];
        let mut d = 0.0;
        let mut j = i;
        while j < n && obs[j].0 == t {
            if obs[j].1 {
                d += obs[j].2;
            }
            j += 1;
        }
        if d > 0.0 {
            s = if d >= risk { 0.0 } else { (s * (1.0 - d / risk)).max(0.0) };
            times.push(t);
            surv.push(s);
        }
        i = j;
    }
    let follow_up = if s == 0.0 { f64::INFINITY } else { obs[n - 1].0 };
    StepCurve::new(times, surv, 1.0, follow_up)
}

/// One-month evaluation grid up to `horizon`, merged with `extra` times.
pub fn monthly_grid(horizon: f64, extra: &[f64]) -> Vec<f64> {
    let months = (horizon * 12.0 - 1e-9).ceil().max(0.0) as usize;
    let mut g: Vec<f64> = (1..=months).map(|k| k as f64 / 12.0).filter(|t| *t <= horizon).collect();
    g.push(horizon);
    g.extend(extra.iter().copied().filter(|t| *t > 0.0 && *t <= horizon));
    g.sort_by(f64::total_cmp);
    g.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    g
}

/// Jackknife pseudo-observations of survival at each grid time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoObservationSet {
    pub grid: Vec<f64>,
    /// `values[i][j]` is subject i's pseudo-value at `grid[j]`.
    pub values: Vec<Vec<f64>>,
    /// Last observed time in the arm (infinite if the KM curve reaches zero).
    pub follow_up: f64,
    /// Grid points past `follow_up`, where the KM curve is extrapolated flat.
    pub extrapolated: usize,
}

impl PseudoObservationSet {
    pub fn n(&self) -> usize {
        self.values.len()
    }
}

/// Product over index ranges of factors that may be exactly zero.
struct PrefixProduct {
    log: Vec<f64>,
    zeros: Vec<u32>,
}

impl PrefixProduct {
    fn new(factors: impl Iterator<Item = f64>) -> Self {
        let mut log = vec![0.0];
        let mut zeros = vec![0];
        for f in factors {
            let (l, z) = if f <= 0.0 { (0.0, 1) } else { (f.ln(), 0) };
            log.push(log.last().unwrap() + l);
            zeros.push(zeros.last().unwrap() + z);
        }
        Self { log, zeros }
    }

    /// Product of factors with index in `[a, b)`.
    #[inline]
    fn range(&self, a: usize, b: usize) -> f64 {
        if b <= a {
            1.0
        } else if self.zeros[b] > self.zeros[a] {
            0.0
        } else {
            (self.log[b] - self.log[a]).exp()
        }
    }
}

/// Pseudo-observations `n S(t) - (n-1) S^{-i}(t)` from the unweighted
/// Kaplan-Meier of one arm. Leave-one-out curves are assembled from prefix
/// products over the event times, O(n log n + n * grid).
pub fn pseudo_observations(records: &[SubjectRecord], grid: &[f64]) -> Result<PseudoObservationSet> {
    let obs: Vec<(f64, bool)> = records.iter().map(|r| (r.time, r.event)).collect();
    pseudo_observations_from(&obs, grid)
}

pub fn pseudo_observations_from(obs: &[(f64, bool)], grid: &[f64]) -> Result<PseudoObservationSet> {
    let arm = ArmTable::new(obs, grid)?;
    let nf = obs.len() as f64;
    let s_full: Vec<f64> = arm.q.iter().map(|&k| arm.full.range(0, k)).collect();
    let values = obs
        .iter()
        .map(|&(ti, di)| {
            let (before, own, after) = arm.locate(ti, di);
            arm.q
                .iter()
                .zip(&s_full)
                .map(|(&qk, &s)| {
                    let loo = if qk <= before {
                        arm.reduced.range(0, qk)
                    } else {
                        arm.reduced.range(0, before) * own * arm.full.range(after, qk)
                    };
                    nf * s - (nf - 1.0) * loo
                })
                .collect()
        })
        .collect();
    Ok(PseudoObservationSet {
        grid: grid.to_vec(),
        values,
        follow_up: arm.follow_up,
        extrapolated: arm.extrapolated(grid),
    })
}

/// Distinct event times of one arm with the full and leave-one-at-risk-out
/// product-limit factors.
struct ArmTable {
    ev_t: Vec<f64>,
    ev_d: Vec<f64>,
    ev_n: Vec<f64>,
    full: PrefixProduct,
    reduced: PrefixProduct,
    /// Number of event times at or before each grid time.
    q: Vec<usize>,
    follow_up: f64,
}

impl ArmTable {
    fn new(obs: &[(f64, bool)], grid: &[f64]) -> Result<Self> {
        let n = obs.len();
        if n < 2 {
            return Err(Error::Data("pseudo-observations need at least two subjects".into()));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("pseudo grid must be strictly increasing".into()));
        }
        let mut sorted: Vec<(f64, bool)> = obs.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut ev_t = Vec::new();
        let mut ev_d = Vec::new();
        let mut ev_n = Vec::new();
        let mut i = 0;
        while i < n {
            let t = sorted[i].0;
            let mut j = i;
            let mut d = 0usize;
            while j < n && sorted[j].0 == t {
                d += sorted[j].1 as usize;
                j += 1;
            }
            if d > 0 {
                ev_t.push(t);
                ev_d.push(d as f64);
                ev_n.push((n - i) as f64);
            }
            i = j;
        }
        let m = ev_t.len();
        let full = PrefixProduct::new((0..m).map(|k| 1.0 - ev_d[k] / ev_n[k]));
        let reduced = PrefixProduct::new((0..m).map(|k| {
            if ev_n[k] > 1.0 {
                1.0 - ev_d[k] / (ev_n[k] - 1.0)
            } else {
                1.0
            }
        }));
        let q = grid.iter().map(|&t| ev_t.partition_point(|&e| e <= t)).collect();
        let follow_up = if full.range(0, m) == 0.0 { f64::INFINITY } else { sorted[n - 1].0 };
        Ok(Self {
            ev_t,
            ev_d,
            ev_n,
            full,
            reduced,
            q,
            follow_up,
        })
    }

    fn extrapolated(&self, grid: &[f64]) -> usize {
        grid.iter().filter(|&&t| t > self.follow_up).count()
    }

    /// For subject `(ti, di)`: event times strictly before `ti`, the
    /// product-limit factor at `ti` once the subject is removed, and the
    /// index of the first event time after `ti`.
    fn locate(&self, ti: f64, di: bool) -> (usize, f64, usize) {
        let m = self.ev_t.len();
        let before = self.ev_t.partition_point(|&e| e < ti);
        let at = before < m && self.ev_t[before] == ti;
        let own = if at {
            let d = self.ev_d[before] - if di { 1.0 } else { 0.0 };
            if self.ev_n[before] > 1.0 {
                1.0 - d / (self.ev_n[before] - 1.0)
            } else {
                1.0
            }
        } else {
            1.0
        };
        (before, own, if at { before + 1 } else { before })
    }
}

/// Same result as [`pseudo_observations_from`] followed by
/// [`weighted_pseudo_mean`], without materializing the subject-by-grid
/// matrix: leave-one-out curves factor as `c_i * S(t)` past the subject's
/// own time, so the weighted sums reduce to prefix sums over event times.
pub fn weighted_pseudo_mean_from(obs: &[(f64, bool)], weights: &[f64], grid: &[f64]) -> Result<PseudoSurvival> {
    if weights.len() != obs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} subjects",
            weights.len(),
            obs.len()
        )));
    }
    let arm = ArmTable::new(obs, grid)?;
    let m = arm.ev_t.len();
    if arm.full.zeros[m] > 0 {
        // the curve reaches zero; the factorization breaks down
        let pos = pseudo_observations_from(obs, grid)?;
        return weighted_pseudo_mean(&pos, weights);
    }
    // weight and weighted c_i bucketed by the number of earlier event times
    let mut w_at = vec![0.0; m + 1];
    let mut c_at = vec![0.0; m + 1];
    for (&(ti, di), &w) in obs.iter().zip(weights) {
        let (before, own, after) = arm.locate(ti, di);
        w_at[before] += w;
        let log_c = arm.reduced.log[before] - arm.full.log[after];
        let c = if arm.reduced.zeros[before] > 0 { 0.0 } else { own * log_c.exp() };
        c_at[before] += w * c;
    }
    // w_ge[k] = sum of weights with before >= k; c_lt[k] = sum of w c with before < k
    let mut w_ge = vec![0.0; m + 2];
    for k in (0..=m).rev() {
        w_ge[k] = w_ge[k + 1] + w_at[k];
    }
    let mut c_lt = vec![0.0; m + 2];
    for k in 0..=m {
        c_lt[k + 1] = c_lt[k] + c_at[k];
    }
    let nf = obs.len() as f64;
    let total_w = w_ge[0];
    let sums: Vec<f64> = arm
        .q
        .iter()
        .map(|&qk| {
            let s = arm.full.range(0, qk);
            let loo = w_ge[qk] * arm.reduced.range(0, qk) + c_lt[qk] * s;
            nf * s * total_w - (nf - 1.0) * loo
        })
        .collect();
    finish_pseudo(grid, &sums, nf, arm.follow_up)
}

/// Weighted pseudo-observation survival curve for one arm, with diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PseudoSurvival {
    pub grid: Vec<f64>,
    /// Weighted means after clamping to [0, 1], before any monotone envelope.
    pub values: Vec<f64>,
    /// Grid points whose weighted mean fell outside [0, 1].
    pub clamped: usize,
    /// Grid points where the clamped value exceeded its predecessor.
    pub monotone_violations: usize,
    /// Largest such increase.
    pub max_violation: f64,
    /// Step curve on the supported grid points; uses the running minimum of
    /// `values` wherever a monotonicity violation was reported.
    pub curve: StepCurve,
}

/// `(1/n) sum_i w_i theta_i(t)` at each grid time. Weights must be centered
/// (mean one within 1e-9).
pub fn pseudo_survival(pos: &PseudoObservationSet, weights: &[f64]) -> Result<PseudoSurvival> {
    if weights.len() != pos.n() {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} pseudo-observation rows",
            weights.len(),
            pos.n()
        )));
    }
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    if (mean - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!(
            "pseudo-observation weights must be centered to mean 1, got mean {mean}"
        )));
    }
    weighted_pseudo_mean(pos, weights)
}

/// Like [`pseudo_survival`] but without the centering contract: divides the
/// weighted sum by the arm size whatever the weights' mean.
pub fn weighted_pseudo_mean(pos: &PseudoObservationSet, weights: &[f64]) -> Result<PseudoSurvival> {
    let g = pos.grid.len();
    let n = pos.n() as f64;
    let mut sums = vec![0.0; g];
    for (row, &w) in pos.values.iter().zip(weights) {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += w * v;
        }
    }
    finish_pseudo(&pos.grid, &sums, n, pos.follow_up)
}

fn finish_pseudo(grid: &[f64], sums: &[f64], n: f64, follow_up: f64) -> Result<PseudoSurvival> {
    let g = grid.len();
    let mut clamped = 0;
    let values: Vec<f64> = sums
        .iter()
        .map(|s| {
            let v = s / n;
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            v.clamp(0.0, 1.0)
        })
        .collect();
    let mut violations = 0;
    let mut max_violation: f64 = 0.0;
    let mut prev = 1.0;
    let mut env = Vec::with_capacity(g);
    for &v in &values {
        if v > prev {
            violations += 1;
            max_violation = max_violation.max(v - prev);
        }
        prev = prev.min(v);
        env.push(prev);
    }
    let keep = grid.iter().take_while(|&&t| t <= follow_up).count();
    let curve = StepCurve::new(
        grid[..keep].to_vec(),
        env[..keep].to_vec(),
        1.0,
        follow_up.max(grid.get(keep.wrapping_sub(1)).copied().unwrap_or(0.0)),
    )?;
    Ok(PseudoSurvival {
        grid: grid.to_vec(),
        values,
        clamped,
        monotone_violations: violations,
        max_violation,
        curve,
    })
}
