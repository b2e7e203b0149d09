//! Standard normal density, distribution and tail-stable ratios.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TAIL_SWITCH: f64 = -6.0;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Log of the standard normal density.
pub fn log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal distribution function.
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Mills ratio Φ(−t)/φ(t) for large positive t, by continued fraction.
fn mills_ratio(t: f64) -> f64 {
    let mut acc = t;
    for k in (1..=60).rev() {
        acc = t + k as f64 / acc;
    }
    1.0 / acc
}

/// log Φ(x), accurate deep into the lower tail.
pub fn log_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x < TAIL_SWITCH {
        log_pdf(x) + mills_ratio(-x).ln()
    } else if x > 6.0 {
        // Φ(x) = 1 − Φ(−x); ln(1 − ε) without cancellation.
        (-cdf(-x)).ln_1p()
    } else {
        cdf(x).ln()
    }
}

/// The inverse Mills ratio φ(x)/Φ(x).
pub fn inv_mills(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 0.0;
    }
    if x < TAIL_SWITCH {
        1.0 / mills_ratio(-x)
    } else {
        pdf(x) / cdf(x)
    }
}

/// Moments of N(mean, var) truncated to values ≥ 0: (mean, variance).
pub fn truncated_below_zero(mean: f64, var: f64) -> (f64, f64) {
    let sd = var.sqrt();
    let a = mean / sd;
    let lam = inv_mills(a);
    (mean + sd * lam, var * (1.0 - lam * (lam + a)))
}
