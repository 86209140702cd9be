use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::normal;

/// Clamp applied to model probabilities inside logs and square roots.
pub const PROB_EPS: f64 = 1e-7;

/// Thurstone Case V preference probability `Phi((fx - fy) / sqrt(2))`.
pub fn thurstone_prob(fx: f64, fy: f64) -> Result<f64> {
    if !fx.is_finite() || !fy.is_finite() {
        return Err(Error::NonFinite("thurstone score"));
    }
    Ok(preference(fx - fy))
}

/// Preference probability as a function of the score difference.
pub(crate) fn preference(diff: f64) -> f64 {
    normal::cdf(diff / SQRT_2)
}

/// `d preference / d diff`.
pub(crate) fn preference_slope(diff: f64) -> f64 {
    normal::pdf(diff / SQRT_2) / SQRT_2
}

fn check_prob(name: &'static str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Fidelity loss between the two-outcome distributions `(p, 1-p)` and
/// `(pw, 1-pw)`.
pub fn fidelity_loss(p: f64, pw: f64) -> Result<f64> {
    check_prob("label probability", p)?;
    check_prob("model probability", pw)?;
    Ok(fidelity_unchecked(p, pw))
}

pub(crate) fn fidelity_unchecked(p: f64, pw: f64) -> f64 {
    (1.0 - (p * pw).sqrt() - ((1.0 - p) * (1.0 - pw)).sqrt()).max(0.0)
}

/// `d fidelity_loss / d pw`, with `pw` clamped to `[eps, 1 - eps]` first.
pub fn fidelity_grad(p: f64, pw: f64) -> f64 {
    let pw = pw.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -0.5 * ((p / pw).sqrt() - ((1.0 - p) / (1.0 - pw)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // 30-digit references (mpmath).
    const PHI_1: f64 = 0.841_344_746_068_542_948_6;
    const ONE_MINUS_SQRT_HALF: f64 = 0.292_893_218_813_452_475_6;

    #[test]
    fn thurstone_examples() {
        assert_eq!(thurstone_prob(1.3, 1.3).unwrap(), 0.5);
        assert!((thurstone_prob(SQRT_2, 0.0).unwrap() - PHI_1).abs() < 1e-12);
        assert!(thurstone_prob(f64::NAN, 0.0).is_err());
        assert!(thurstone_prob(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn thurstone_strictly_increasing_on_grid() {
        let mut prev = thurstone_prob(-8.0, 0.0).unwrap();
        for i in 1..=160 {
            let cur = thurstone_prob(-8.0 + i as f64 * 0.1, 0.0).unwrap();
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn fidelity_examples() {
        assert!(fidelity_loss(0.3, 0.3).unwrap().abs() < 1e-15);
        assert_eq!(fidelity_loss(1.0, 0.0).unwrap(), 1.0);
        assert!((fidelity_loss(1.0, 0.5).unwrap() - ONE_MINUS_SQRT_HALF).abs() < 1e-15);
        assert!(fidelity_loss(1.2, 0.5).is_err());
        assert!(fidelity_loss(0.5, -0.1).is_err());
    }

    #[test]
    fn fidelity_grad_examples() {
        assert!(fidelity_grad(0.4, 0.4).abs() < 1e-15);
        assert!((fidelity_grad(1.0, 0.5) + 0.5 * SQRT_2).abs() < 1e-12);
        assert!(fidelity_grad(1.0, 0.0).is_finite());
        assert!(fidelity_grad(0.0, 1.0).is_finite());
    }

    #[test]
    fn fidelity_grad_matches_central_differences() {
        let h = 1e-5;
        for i in 1..20 {
            for j in 1..20 {
                let p = i as f64 / 20.0;
                let pw = j as f64 / 20.0;
                let fd = (fidelity_unchecked(p, pw + h) - fidelity_unchecked(p, pw - h)) / (2.0 * h);
                let g = fidelity_grad(p, pw);
                // At p == pw the gradient vanishes and the O(h^2) truncation
                // term of the difference quotient dominates.
                let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
                assert!(rel < 1e-5 || (p == pw && (fd - g).abs() < 1e-8), "p={p} pw={pw}");
            }
        }
    }

    proptest! {
        #[test]
        fn fidelity_symmetries(p in 0.0f64..=1.0, pw in 0.0f64..=1.0) {
            let l = fidelity_loss(p, pw).unwrap();
            prop_assert!((0.0..=1.0).contains(&l));
            prop_assert!((l - fidelity_loss(pw, p).unwrap()).abs() < 1e-12);
            prop_assert!((l - fidelity_loss(1.0 - p, 1.0 - pw).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn thurstone_complement(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let s = thurstone_prob(a, b).unwrap() + thurstone_prob(b, a).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
