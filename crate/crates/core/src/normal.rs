//! Standard normal distribution helpers.
//!
//! Every probability in the toolkit (model preferences, human labels, case
//! thresholds) goes through [`cdf`], so model- and label-side probabilities
//! are computed by the same routine.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal CDF, `0.5 * erfc(-x / sqrt(2))`.
///
/// The complementary form keeps full relative accuracy in the lower tail.
pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values from a 30-digit mpmath evaluation of ncdf.
    const PHI_1: f64 = 0.841_344_746_068_542_948_6;
    const PHI_M2: f64 = 0.022_750_131_948_179_207_2;

    #[test]
    fn cdf_matches_high_precision_values() {
        assert!((cdf(1.0) - PHI_1).abs() < 1e-15);
        assert!((cdf(-2.0) - PHI_M2).abs() < 1e-16);
        assert_eq!(cdf(0.0), 0.5);
    }

    #[test]
    fn cdf_is_symmetric() {
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            assert!((cdf(x) + cdf(-x) - 1.0).abs() < 1e-15, "x = {x}");
        }
    }

    #[test]
    fn pdf_is_derivative_of_cdf() {
        for i in -30..=30 {
            let x = i as f64 * 0.2;
            let h = 1e-5;
            let fd = (cdf(x + h) - cdf(x - h)) / (2.0 * h);
            assert!((fd - pdf(x)).abs() < 1e-9);
        }
    }
}
