//! Normal and chi-square distribution functions.

use std::f64::consts::{FRAC_2_SQRT_PI, LN_2, PI, SQRT_2};

use crate::error::{Error, Result};

/// Switch point between the erf power series and the erfc continued fraction.
const ERFC_CF_THRESHOLD: f64 = 2.5;
/// Poisson mass allowed outside the summed window of the noncentral mixture.
const POISSON_TAIL: f64 = 1e-14;

/// Complementary error function, relative accuracy near machine precision.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < ERFC_CF_THRESHOLD {
        1.0 - erf_series(x)
    } else {
        erfc_continued_fraction(x)
    }
}

pub fn erf(x: f64) -> f64 {
    if x.abs() < ERFC_CF_THRESHOLD {
        if x < 0.0 {
            -erf_series(-x)
        } else {
            erf_series(x)
        }
    } else {
        1.0 - erfc(x)
    }
}

// erf(x) = 2/sqrt(pi) e^{-x^2} sum_n (2x^2)^n x / (1*3*...*(2n+1)); all terms positive.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut k = 1.0;
    loop {
        k += 2.0;
        term *= 2.0 * x2 / k;
        sum += term;
        if term <= sum * f64::EPSILON * 0.25 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-x2).exp() * sum
}

// erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), modified Lentz.
fn erfc_continued_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for n in 1..10_000 {
        let a = n as f64 * 0.5;
        d = x + a * d;
        if d == 0.0 {
            d = TINY;
        }
        c = x + a / c;
        if c == 0.0 {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * PI.sqrt())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-lower_quantile(1.0 - p));
    }
    Ok(lower_quantile(p))
}

// Solves Phi(x) = p for p < 0.5 by Halley steps from a rational starting value.
fn lower_quantile(p: f64) -> f64 {
    let t = (-2.0 * p.ln()).sqrt();
    let mut x = -(t
        - (2.515517 + 0.802853 * t + 0.010328 * t * t)
            / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t));
    for _ in 0..50 {
        let e = normal_cdf(x) - p;
        let u = e / normal_pdf(x);
        let step = u / (1.0 + 0.5 * x * u);
        let next = if step.is_finite() { x - step } else { x };
        // keep the iterate on the lower half-line
        let next = if next >= 0.0 { 0.5 * x } else { next };
        let done = (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0);
        x = next;
        if done {
            break;
        }
    }
    x
}

/// Natural log of the gamma function for positive arguments (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_prefactor(a: f64, x: f64) -> f64 {
    (a * x.ln() - x - ln_gamma(a)).exp()
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..100_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    sum * gamma_prefactor(a, x)
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..100_000 {
        let an = -(i as f64) * (i as f64 - a);
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
        if (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    gamma_prefactor(a, x) * h
}

pub fn chisq_cdf(x: f64, df: u32) -> f64 {
    gamma_p(0.5 * df as f64, 0.5 * x)
}

pub fn chisq_sf(x: f64, df: u32) -> f64 {
    gamma_q(0.5 * df as f64, 0.5 * x)
}

fn chisq_pdf(x: f64, df: u32) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * df as f64;
    ((k - 1.0) * x.ln() - 0.5 * x - k * LN_2 - ln_gamma(k)).exp()
}

/// Chi-square quantile: bracketed Newton with bisection fallback.
pub fn chisq_quantile(p: f64, df: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "chi-square quantile needs p in (0, 1), got {p}"
        )));
    }
    if df == 0 {
        return Err(Error::Domain("chi-square needs df >= 1".into()));
    }
    let upper = p > 0.5;
    // residual on the side of the distribution that keeps precision
    let resid = |x: f64| {
        if upper {
            (1.0 - p) - chisq_sf(x, df)
        } else {
            chisq_cdf(x, df) - p
        }
    };
    let mut lo = 0.0;
    let mut hi = (df as f64).max(1.0);
    while resid(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..400 {
        let r = resid(x);
        if r == 0.0 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - r / chisq_pdf(x, df);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.max(f64::MIN_POSITIVE)
            || hi - lo <= 4.0 * f64::EPSILON * hi
        {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Noncentral chi-square with `df` degrees of freedom and noncentrality `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoncentralChiSq {
    pub df: u32,
    pub lambda: f64,
}

impl NoncentralChiSq {
    pub fn new(df: u32, lambda: f64) -> Result<Self> {
        if df == 0 || !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!(
                "noncentral chi-square needs df >= 1 and finite lambda >= 0, got ({df}, {lambda})"
            )));
        }
        Ok(Self { df, lambda })
    }

    pub fn sf(&self, x: f64) -> f64 {
        noncentral_chisq_sf(x, self.df, self.lambda)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        1.0 - self.sf(x)
    }
}

/// Upper tail of the noncentral chi-square as a Poisson mixture of central
/// tails, summed outward from the Poisson mode.
pub fn noncentral_chisq_sf(x: f64, df: u32, lambda: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if lambda <= 0.0 {
        return chisq_sf(x, df);
    }
    let mu = 0.5 * lambda;
    let mode = mu.floor();
    let log_w = |j: f64| -mu + j * mu.ln() - ln_gamma(j + 1.0);
    let term = |j: f64| chisq_sf(x, df + 2 * j as u32);

    let w0 = log_w(mode).exp();
    let mut total = w0 * term(mode);

    // forward: the remaining mass after j is at most w_j * r / (1 - r), r = mu / (j + 1)
    let mut w = w0;
    let mut j = mode;
    loop {
        let r = mu / (j + 1.0);
        if r < 1.0 && w * r / (1.0 - r) < POISSON_TAIL {
            break;
        }
        j += 1.0;
        w *= mu / j;
        total += w * term(j);
    }

    // backward: the remaining mass below j is at most w_j * s / (1 - s), s = j / mu
    let mut w = w0;
    let mut j = mode;
    while j > 0.0 {
        let s = j / mu;
        if s < 1.0 && w * s / (1.0 - s) < POISSON_TAIL {
            break;
        }
        w *= j / mu;
        j -= 1.0;
        total += w * term(j);
    }
    total.clamp(0.0, 1.0)
}
