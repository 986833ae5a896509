//! Small numerical kernels: adaptive quadrature, fixed Gauss-Legendre panels,
//! bracketed root finding and a BFGS minimizer.

use crate::error::{Error, Result};

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WK[7];
    let mut g = fc * GK_WG[3];
    for j in 0..7 {
        let dx = h * GK_X[j];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[j] * s;
        if j % 2 == 1 {
            g += GK_WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integral of `f` over `[a, b]` to absolute
/// tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut stack = vec![(a, b, tol, 0u32)];
    let mut total = 0.0;
    while let Some((lo, hi, tl, depth)) = stack.pop() {
        let (val, err) = gk15(&f, lo, hi);
        if err <= tl || depth >= 48 || hi - lo < 1e-14 * (1.0 + lo.abs()) {
            total += val;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * tl, depth + 1));
            stack.push((mid, hi, 0.5 * tl, depth + 1));
        }
    }
    total
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
    0.219_086_362_515_982_1,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// Composite 10-point Gauss-Legendre rule over `panels` equal panels. Unlike
/// [`integrate`] the node set does not depend on `f`, so the result is a
/// smooth function of any parameters `f` depends on.
pub fn integrate_fixed(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        let r = 0.5 * h;
        let mut s = 0.0;
        for j in 0..5 {
            let dx = r * GL10_X[j];
            s += GL10_W[j] * (f(c - dx) + f(c + dx));
        }
        total += s * r;
    }
    total
}

/// Root of a function on a sign-changing bracket `[lo, hi]` by bisection,
/// stopping when the bracket is narrower than `xtol` or `|f| <= ftol`.
pub fn bisect(
    f: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    xtol: f64,
    ftol: f64,
) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::InvalidArgument(format!(
            "root not bracketed on [{lo}, {hi}]: f = {flo}, {fhi}"
        )));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() <= ftol || (hi - lo) <= xtol {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expands `hi` geometrically from `lo` until `f(hi)` changes sign relative to
/// `f(lo)`; returns `None` if no sign change is found within `max_doublings`.
pub fn expand_bracket(f: &impl Fn(f64) -> f64, lo: f64, mut hi: f64, max_doublings: usize) -> Option<f64> {
    let s = f(lo).signum();
    for _ in 0..max_doublings {
        if f(hi).signum() != s {
            return Some(hi);
        }
        hi = lo + 2.0 * (hi - lo);
    }
    None
}

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Convergence when the gradient max-norm falls to this value.
    pub grad_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// BFGS with Armijo backtracking. `f` returns the objective and its gradient;
/// non-finite values are treated as +inf and rejected by the line search, so
/// every accepted step strictly decreases the objective.
pub fn minimize_bfgs(
    f: impl Fn(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    inv_hessian: Option<Vec<Vec<f64>>>,
    opts: &MinimizeOptions,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut h = inv_hessian.unwrap_or_else(|| identity(n));
    let mut iterations = 0;
    if !fx.is_finite() {
        return Minimum {
            x,
            value: fx,
            grad: g,
            iterations,
            converged: false,
        };
    }
    while iterations < opts.max_iter {
        if max_abs(&g) <= opts.grad_tol {
            return Minimum {
                x,
                value: fx,
                grad: g,
                iterations,
                converged: true,
            };
        }
        iterations += 1;
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h[i], &g)).collect();
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            h = identity(n);
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let (fn_, gn) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope && gn.iter().all(|v| v.is_finite()) {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            // No descent possible from here; report the current point.
            let converged = max_abs(&g) <= opts.grad_tol;
            return Minimum {
                x,
                value: fx,
                grad: g,
                iterations,
                converged,
            };
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    let converged = max_abs(&g) <= opts.grad_tol;
    Minimum {
        x,
        value: fx,
        grad: g,
        iterations,
        converged,
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Standard normal upper tail `1 - Phi(x)`, accurate in both tails.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    norm_sf(-x)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse of the standard normal CDF.
pub fn norm_quantile(p: f64) -> f64 {
    let mut x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    if x.is_finite() {
        // two Newton polishes on the CDF
        for _ in 0..2 {
            let pdf = norm_pdf(x);
            if pdf > 0.0 {
                x -= (norm_cdf(x) - p) / pdf;
            }
        }
    }
    x
}

/// Type-1 empirical quantile: the order statistic at position `ceil(q * n)`.
/// `sorted` must be sorted ascending and non-empty.
pub fn order_stat_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // tolerate roundoff in q, e.g. 1 - 0.05 / 2
    let k = ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn adaptive_quadrature_polynomial_and_singular() {
        assert_abs_diff_eq!(integrate(|x| x * x, 0.0, 3.0, 1e-12), 9.0, epsilon = 1e-12);
        // integrable endpoint singularity of the derivative
        let v = integrate(|x: f64| x.powf(0.2), 0.0, 2.0, 1e-13);
        assert_abs_diff_eq!(v, 2f64.powf(1.2) / 1.2, epsilon = 1e-11);
    }

    #[test]
    fn fixed_quadrature_exponential() {
        let v = integrate_fixed(|x: f64| (-x).exp(), 0.0, 5.0, 8);
        assert_abs_diff_eq!(v, 1.0 - (-5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14, 0.0).unwrap();
        assert_abs_diff_eq!(r, 2f64.sqrt(), epsilon = 1e-13);
        assert!(bisect(|x| x * x + 1.0, 0.0, 2.0, 1e-14, 0.0).is_err());
    }

    #[test]
    fn bfgs_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let m = minimize_bfgs(f, &[-1.2, 1.0], None, &MinimizeOptions { max_iter: 1000, grad_tol: 1e-9 });
        assert!(m.converged);
        assert_abs_diff_eq!(m.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(m.x[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn normal_helpers() {
        assert_abs_diff_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(norm_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-12);
        assert_abs_diff_eq!(norm_cdf(norm_quantile(0.2)), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn order_statistic_rule() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(order_stat_quantile(&v, 0.025), 1.0);
        assert_eq!(order_stat_quantile(&v, 0.5), 2.0);
        assert_eq!(order_stat_quantile(&v, 0.975), 4.0);
    }
}
