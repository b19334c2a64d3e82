//! Scalar special functions: the standard normal CDF and quantile, and the
//! chi-squared CDF and quantile built on the regularized incomplete gamma
//! function.
//!
//! Everything here is dependency-free and pure. The normal CDF is computed
//! from `erfc` (power series near the origin, Lentz continued fraction in the
//! tails) so that lower-tail probabilities keep full relative precision; the
//! quantized-bit probabilities of the uniform scheme live deep in those tails.

use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 1000;
/// Switch point between the erf power series and the erfc continued fraction.
const ERFC_SWITCH: f64 = 1.5;
/// Root-finding tolerance in probability space.
const QUANTILE_P_TOL: f64 = 1e-12;
const QUANTILE_MAX_ITER: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{function}: argument {value} is outside the domain")]
    Domain { function: &'static str, value: f64 },
    #[error("{function}: no convergence after {iterations} iterations")]
    NoConvergence {
        function: &'static str,
        iterations: usize,
    },
}

fn domain(function: &'static str, value: f64) -> NumericsError {
    NumericsError::Domain { function, value }
}

/// A real number in `[0, 1]`.
///
/// The complement `1 - p` is stored alongside the value. CDFs fill it in from
/// the opposite tail, so probabilities within a few ulps of one keep their
/// full information and the quantile functions can invert them exactly.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability {
    p: f64,
    q: f64,
}

impl Probability {
    pub const ZERO: Probability = Probability { p: 0.0, q: 1.0 };
    pub const ONE: Probability = Probability { p: 1.0, q: 0.0 };

    pub fn new(value: f64) -> Result<Self, NumericsError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability {
                p: value,
                q: 1.0 - value,
            })
        } else {
            Err(domain("Probability::new", value))
        }
    }

    /// Clamps `value` into `[0, 1]`. NaN maps to zero.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            Probability::ZERO
        } else {
            let p = value.clamp(0.0, 1.0);
            Probability { p, q: 1.0 - p }
        }
    }

    /// Builds a probability from separately computed tails `p` and `1 - p`.
    pub(crate) fn from_tails(p: f64, q: f64) -> Self {
        let p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        let q = if q.is_nan() { 1.0 - p } else { q.clamp(0.0, 1.0) };
        Probability { p, q }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.p
    }

    /// `1 - value`, accurate even when `value` is close to one.
    #[inline]
    pub fn complement_value(self) -> f64 {
        self.q
    }

    #[inline]
    pub fn complement(self) -> Probability {
        Probability {
            p: self.q,
            q: self.p,
        }
    }
}

impl TryFrom<f64> for Probability {
    type Error = NumericsError;
    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.p
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.p, f)
    }
}

// ---------------------------------------------------------------------------
// Normal distribution
// ---------------------------------------------------------------------------

/// Complementary error function with ~1e-15 relative accuracy on the real line.
pub(crate) fn erfc(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z < 0.0 {
        return 2.0 - erfc(-z);
    }
    if z < ERFC_SWITCH {
        1.0 - erf_series(z)
    } else {
        erfc_continued_fraction(z)
    }
}

/// erf(z) = 2/sqrt(pi) * exp(-z^2) * sum_n (2z^2)^n z / (1*3*...*(2n+1)).
/// All terms are positive, so there is no cancellation.
fn erf_series(z: f64) -> f64 {
    let two_z2 = 2.0 * z * z;
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    while term > sum * EPS * 0.1 {
        n += 1.0;
        term *= two_z2 / (2.0 * n + 1.0);
        sum += term;
    }
    FRAC_2_SQRT_PI * (-z * z).exp() * sum
}

/// erfc(z) = exp(-z^2)/sqrt(pi) / (z + (1/2)/(z + 1/(z + (3/2)/(z + ...)))),
/// evaluated with the modified Lentz algorithm.
fn erfc_continued_fraction(z: f64) -> f64 {
    if z > 27.3 {
        return 0.0;
    }
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..=MAX_ITER {
        let a = 0.5 * k as f64;
        d = z + a * d;
        c = z + a / c;
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-z * z).exp() / (PI.sqrt() * f)
}

/// Φ(x) without domain checks; NaN propagates.
#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

#[inline]
fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF Φ(x).
pub fn std_normal_cdf(x: f64) -> Result<Probability, NumericsError> {
    if !x.is_finite() {
        return Err(domain("std_normal_cdf", x));
    }
    Ok(Probability::from_tails(phi(x), phi(-x)))
}

/// Standard normal quantile Φ⁻¹(p) for `0 < p < 1`.
///
/// Acklam's rational approximation followed by Halley refinement against
/// [`std_normal_cdf`]. The lower tail is solved directly; the upper tail by
/// reflection on the stored complement, so that `Φ(x) - p` is always formed
/// on the accurate side.
pub fn std_normal_quantile(p: Probability) -> Result<f64, NumericsError> {
    let (lower, upper) = (p.value(), p.complement_value());
    if !(lower > 0.0 && upper > 0.0) {
        return Err(domain("std_normal_quantile", lower));
    }
    if lower == 0.5 {
        return Ok(0.0);
    }
    if lower > 0.5 {
        return Ok(-lower_normal_quantile(upper));
    }
    Ok(lower_normal_quantile(lower))
}

fn lower_normal_quantile(p: f64) -> f64 {
    let mut x = acklam(p);
    for _ in 0..3 {
        let err = phi(x) - p;
        let pdf = normal_pdf(x);
        if pdf == 0.0 {
            break;
        }
        let u = err / pdf;
        let step = u / (1.0 + 0.5 * x * u);
        x -= step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

// ---------------------------------------------------------------------------
// Gamma family
// ---------------------------------------------------------------------------

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete gamma functions `(P(s, x), Q(s, x))`.
///
/// Series for `x < s + 1`, continued fraction otherwise; the smaller of the
/// two is always the one computed directly.
pub(crate) fn regularized_gamma(s: f64, x: f64) -> Result<(f64, f64), NumericsError> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(domain("regularized_gamma", s));
    }
    if !(x >= 0.0) {
        return Err(domain("regularized_gamma", x));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let log_prefactor = -x + s * x.ln() - ln_gamma(s);
    if x < s + 1.0 {
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut denom = s;
        let mut converged = false;
        for _ in 0..MAX_ITER {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(NumericsError::NoConvergence {
                function: "regularized_gamma (series)",
                iterations: MAX_ITER,
            });
        }
        let p = (sum.ln() + log_prefactor).exp().min(1.0);
        Ok((p, 1.0 - p))
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        let mut converged = false;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(NumericsError::NoConvergence {
                function: "regularized_gamma (continued fraction)",
                iterations: MAX_ITER,
            });
        }
        let q = (h.ln() + log_prefactor).exp().min(1.0);
        Ok((1.0 - q, q))
    }
}

fn check_dof(function: &'static str, k: u32) -> Result<f64, NumericsError> {
    if k == 0 {
        return Err(domain(function, 0.0));
    }
    Ok(f64::from(k))
}

/// Chi-squared CDF ξ_k(x) = P(k/2, x/2).
pub fn chi_squared_cdf(k: u32, x: f64) -> Result<Probability, NumericsError> {
    let dof = check_dof("chi_squared_cdf", k)?;
    if !(x >= 0.0) {
        return Err(domain("chi_squared_cdf", x));
    }
    let (p, q) = regularized_gamma(0.5 * dof, 0.5 * x)?;
    Ok(Probability::from_tails(p, q))
}

/// Chi-squared survival function 1 - ξ_k(x), accurate in the upper tail.
pub(crate) fn chi_squared_sf(k: u32, x: f64) -> Result<Probability, NumericsError> {
    let dof = check_dof("chi_squared_sf", k)?;
    if !(x >= 0.0) {
        return Err(domain("chi_squared_sf", x));
    }
    let (p, q) = regularized_gamma(0.5 * dof, 0.5 * x)?;
    Ok(Probability::from_tails(q, p))
}

fn chi_squared_pdf(dof: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let s = 0.5 * dof;
    ((s - 1.0) * x.ln() - 0.5 * x - s * 2f64.ln() - ln_gamma(s)).exp()
}

/// Chi-squared quantile ξ_k⁻¹(p) for `0 < p < 1`.
///
/// Wilson–Hilferty starting point, then Newton steps safeguarded by a
/// bisection bracket.
pub fn chi_squared_quantile(k: u32, prob: Probability) -> Result<f64, NumericsError> {
    let dof = check_dof("chi_squared_quantile", k)?;
    let (p, p_upper) = (prob.value(), prob.complement_value());
    if !(p > 0.0 && p_upper > 0.0) {
        return Err(domain("chi_squared_quantile", p));
    }

    // Work on whichever tail keeps the residual well conditioned.
    let upper = p > 0.5;
    let residual = |x: f64| -> Result<f64, NumericsError> {
        let (lo, hi) = regularized_gamma(0.5 * dof, 0.5 * x)?;
        Ok(if upper { p_upper - hi } else { lo - p })
    };

    // Bracket [lo, hi] with residual(lo) < 0 < residual(hi).
    let mut lo = 0.0_f64;
    let mut hi = dof.max(1.0);
    while residual(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return Err(NumericsError::NoConvergence {
                function: "chi_squared_quantile (bracket)",
                iterations: QUANTILE_MAX_ITER,
            });
        }
    }

    let z = std_normal_quantile(prob)?;
    let c = 2.0 / (9.0 * dof);
    let wh = dof * (1.0 - c + z * c.sqrt()).powi(3);
    let mut x = if wh > lo && wh < hi { wh } else { 0.5 * (lo + hi) };

    for _ in 0..QUANTILE_MAX_ITER {
        let r = residual(x)?;
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi_squared_pdf(dof, x);
        let mut next = if pdf > 0.0 { x - r / pdf } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if (r.abs() <= QUANTILE_P_TOL && step <= 1e-14 * x.max(1e-300))
            || hi - lo <= 1e-15 * x
        {
            return Ok(x);
        }
    }
    Err(NumericsError::NoConvergence {
        function: "chi_squared_quantile",
        iterations: QUANTILE_MAX_ITER,
    })
}
