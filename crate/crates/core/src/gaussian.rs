//! Per-dimension Gaussian terms shared by SPN leaves and the GMM baseline.
//!
//! A diagonal Gaussian factorises over dimensions, so every evidence state
//! reduces to a scalar term: the log-pdf for an observed value, the log-CDF for
//! an upper bound, and zero for a missing value (the integral over the whole
//! real line is one).

use std::f64::consts::FRAC_1_SQRT_2;

use crate::spn::EvidenceState;

/// `ln(2π) / 2`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Standardised bound below which `ln Φ` switches to the asymptotic series.
const ASYMPTOTIC_BELOW: f64 = -8.0;

#[inline]
pub fn log_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -HALF_LN_2PI - 0.5 * variance.ln() - 0.5 * d * d / variance
}

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

/// `ln Φ(z)` for the standard normal CDF, accurate across the whole real line.
pub fn log_std_normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == f64::INFINITY {
        return 0.0;
    }
    if z == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if z > 0.0 {
        // Φ(z) = 1 - Φ(-z); log1p keeps the tiny upper tail.
        (-0.5 * libm::erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else if z >= ASYMPTOTIC_BELOW {
        (0.5 * libm::erfc(-z * FRAC_1_SQRT_2)).ln()
    } else {
        log_cdf_lower_tail(z)
    }
}

/// Asymptotic expansion of the Mills ratio:
/// `Φ(z) ≈ φ(z)/(-z) · Σ (-1)^n (2n-1)!! / z^{2n}` for `z ≪ 0`.
fn log_cdf_lower_tail(z: f64) -> f64 {
    let inv_z2 = 1.0 / (z * z);
    let mut term = 1.0;
    let mut sum = 1.0;
    for n in 1..64 {
        let next = -term * (2 * n - 1) as f64 * inv_z2;
        if next.abs() >= term.abs() || next.abs() < 1e-18 {
            break;
        }
        term = next;
        sum += term;
    }
    -0.5 * z * z - (-z).ln() - HALF_LN_2PI + sum.ln()
}

/// `ln P(X ≤ upper)` for `X ~ N(mean, variance)`.
#[inline]
pub fn log_cdf(upper: f64, mean: f64, variance: f64) -> f64 {
    log_std_normal_cdf((upper - mean) / variance.sqrt())
}

/// Log contribution of one dimension under the given evidence state.
#[inline]
pub fn dimension_log_term(state: EvidenceState, mean: f64, variance: f64) -> f64 {
    match state {
        EvidenceState::Observed(x) => log_pdf(x, mean, variance),
        EvidenceState::UpperBounded(u) => log_cdf(u, mean, variance),
        EvidenceState::Missing => 0.0,
    }
}

/// Numerically stable `ln Σ exp(v_i)`; returns `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = values.into_iter().map(|v| (v - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_ln_2pi_constant() {
        let expected = (2.0 * std::f64::consts::PI).sqrt().ln();
        assert!((HALF_LN_2PI - expected).abs() < 1e-15);
    }

    #[test]
    fn standard_normal_at_mode() {
        assert!((log_pdf(0.0, 0.0, 1.0) + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn cdf_symmetry_and_tails() {
        assert!((log_std_normal_cdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        // Φ(-1) = 0.15865525393145707
        assert!((log_std_normal_cdf(-1.0) - 0.158_655_253_931_457_07f64.ln()).abs() < 1e-14);
        // Φ(3) = 0.9986501019683699
        assert!((log_std_normal_cdf(3.0) - 0.998_650_101_968_369_9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn asymptotic_branch_is_continuous_with_erfc_branch() {
        let a = (0.5 * libm::erfc(8.0 * FRAC_1_SQRT_2)).ln();
        let b = log_cdf_lower_tail(-8.0);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        let a = (0.5 * libm::erfc(12.0 * FRAC_1_SQRT_2)).ln();
        let b = log_cdf_lower_tail(-12.0);
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn far_tail_is_finite() {
        let v = log_std_normal_cdf(-60.0);
        assert!(v.is_finite() && v < -1700.0);
        assert_eq!(log_std_normal_cdf(f64::NEG_INFINITY), f64::NEG_INFINITY);
    }

    #[test]
    fn log_sum_exp_basics() {
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
        assert!((log_sum_exp(vec![0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(vec![-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(vec![f64::NEG_INFINITY, 1.0]), 1.0);
    }
}
