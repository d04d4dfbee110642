//! Digamma, trigamma and log-gamma on the positive real axis.
//!
//! All three kernels shift the argument upward with the standard recurrences
//! until it reaches the asymptotic region, then evaluate a Bernoulli-number
//! series. Only `x > 0` is supported; Dirichlet parameters are always `>= 1`.

use crate::error::{Error, Result};

/// Below this the asymptotic series is not accurate to double precision.
const ASYMPTOTIC_MIN: f64 = 6.0;
const LGAMMA_ASYMPTOTIC_MIN: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// B_{2k} / (2k) for k = 1..7.
const DIGAMMA_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
];

/// B_{2k} for k = 1..7, the coefficients of x^{-(2k+1)} in the trigamma series.
const TRIGAMMA_SERIES: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// B_{2k} / (2k (2k - 1)) for k = 1..7 (Stirling series).
const STIRLING_SERIES: [f64; 7] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
];

fn check_domain(function: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { function, x })
    }
}

/// ψ(x), the logarithmic derivative of the gamma function.
pub fn digamma(x: f64) -> Result<f64> {
    check_domain("digamma", x)?;
    Ok(digamma_unchecked(x))
}

/// ψ′(x).
pub fn trigamma(x: f64) -> Result<f64> {
    check_domain("trigamma", x)?;
    Ok(trigamma_unchecked(x))
}

/// ln Γ(x).
pub fn lgamma(x: f64) -> Result<f64> {
    check_domain("lgamma", x)?;
    Ok(lgamma_unchecked(x))
}

/// Hot-path variant used by the loss kernels, where `x >= 1` is an
/// invariant of the Dirichlet parameters.
pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < ASYMPTOTIC_MIN {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    let mut series = 0.0;
    let mut power = inv2;
    for c in DIGAMMA_SERIES {
        series += c * power;
        power *= inv2;
    }
    acc + x.ln() - 0.5 / x - series
}

pub(crate) fn trigamma_unchecked(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut acc = 0.0;
    while x < ASYMPTOTIC_MIN {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv2 * inv;
    for c in TRIGAMMA_SERIES {
        series += c * power;
        power *= inv2;
    }
    acc + inv + 0.5 * inv2 + series
}

pub(crate) fn lgamma_unchecked(mut x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let mut shift = 1.0;
    while x < LGAMMA_ASYMPTOTIC_MIN {
        shift *= x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv;
    for c in STIRLING_SERIES {
        series += c * power;
        power *= inv2;
    }
    (x - 0.5) * x.ln() - x + HALF_LN_2PI + series - shift.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_at_one_is_minus_euler_gamma() {
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-10);
    }

    #[test]
    fn digamma_unit_step() {
        let d = digamma(2.0).unwrap() - digamma(1.0).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn digamma_matches_lgamma_central_difference() {
        let h = 1e-5;
        for x in [0.5, 1.7, 13.2] {
            let fd = (lgamma(x + h).unwrap() - lgamma(x - h).unwrap()) / (2.0 * h);
            assert!((digamma(x).unwrap() - fd).abs() < 1e-6, "x = {x}");
        }
    }

    #[test]
    fn digamma_known_values() {
        // ψ(1/2) = -γ - 2 ln 2
        let half = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5).unwrap() - half).abs() < 1e-12);
        // ψ(1e-3) from the series ψ(x) = -1/x - γ + ζ(2) x - ...
        let x = 1e-3;
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        let approx = -1.0 / x - EULER_GAMMA + pi2_6 * x - 1.202_056_903_159_594 * x * x
            + 1.082_323_233_711_138 * x.powi(3);
        assert!((digamma(x).unwrap() - approx).abs() < 1e-9);
    }

    #[test]
    fn lgamma_identities() {
        assert!(lgamma(1.0).unwrap().abs() < 1e-14);
        assert!(lgamma(2.0).unwrap().abs() < 1e-14);
        assert!((lgamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-12);
        // Γ(1/2) = √π
        let half = 0.5 * std::f64::consts::PI.ln();
        assert!((lgamma(0.5).unwrap() - half).abs() < 1e-13);
    }

    #[test]
    fn lgamma_large_argument_relative_accuracy() {
        // ln(170!) summed directly as an independent check.
        let direct: f64 = (1..=170).map(|k| (k as f64).ln()).sum();
        let got = lgamma(171.0).unwrap();
        assert!((got - direct).abs() / direct < 1e-14);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0).unwrap() - pi2_6).abs() < 1e-8);
        // ψ′(1/2) = π²/2
        let half = std::f64::consts::PI.powi(2) / 2.0;
        assert!((trigamma(0.5).unwrap() - half).abs() < 1e-8);
    }

    #[test]
    fn trigamma_matches_digamma_central_difference() {
        let h = 1e-5;
        for x in [0.8, 3.3] {
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            assert!((trigamma(x).unwrap() - fd).abs() < 1e-5, "x = {x}");
        }
    }

    #[test]
    fn domain_errors() {
        for x in [0.0, -1.0, -0.5, f64::NAN, f64::INFINITY] {
            assert!(digamma(x).is_err());
            assert!(trigamma(x).is_err());
            assert!(lgamma(x).is_err());
        }
    }

    #[test]
    fn monotone_on_grid() {
        let grid: Vec<f64> = (1..2000).map(|i| i as f64 * 0.05).collect();
        for w in grid.windows(2) {
            assert!(digamma(w[1]).unwrap() > digamma(w[0]).unwrap());
            assert!(trigamma(w[0]).unwrap() > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn recurrences_hold(x in 0.01f64..100.0) {
            let d = digamma(x + 1.0).unwrap() - digamma(x).unwrap() - 1.0 / x;
            prop_assert!(d.abs() < 1e-10 * (1.0 + 1.0 / x));
            let t = trigamma(x + 1.0).unwrap() - trigamma(x).unwrap() + 1.0 / (x * x);
            prop_assert!(t.abs() < 1e-8 * (1.0 + 1.0 / (x * x)));
            let l = lgamma(x + 1.0).unwrap() - lgamma(x).unwrap() - x.ln();
            prop_assert!(l.abs() < 1e-12);
        }
    }
}
