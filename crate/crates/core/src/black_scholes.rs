//! Closed-form Black-Scholes European put price and Delta.
//!
//! Used as the benchmark hedging strategy and as a pricing oracle for the
//! American pricers (an American put is worth at least its European
//! counterpart).

use crate::math::norm_cdf;
use crate::{Error, Result};

/// Inputs to the Black-Scholes formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsInputs {
    /// Spot price.
    pub s: f64,
    /// Strike.
    pub k: f64,
    /// Continuously compounded risk-free rate (1/year).
    pub r: f64,
    /// Volatility (1/sqrt(year)).
    pub sigma: f64,
    /// Time to maturity (years).
    pub tau: f64,
}

impl BsInputs {
    pub fn new(s: f64, k: f64, r: f64, sigma: f64, tau: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::param(format!("spot must be positive, got {s}")));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::param(format!("strike must be positive, got {k}")));
        }
        if tau > 0.0 && !(sigma > 0.0) {
            return Err(Error::param(format!(
                "sigma must be positive when tau > 0, got {sigma}"
            )));
        }
        Ok(BsInputs { s, k, r, sigma, tau })
    }

    fn d1(&self) -> f64 {
        ((self.s / self.k).ln() + (self.r + 0.5 * self.sigma * self.sigma) * self.tau)
            / (self.sigma * self.tau.sqrt())
    }
}

/// Black-Scholes Delta of a European put: `N(d1) - 1`, in [-1, 0].
///
/// At `tau <= 0` the limit convention is -1 in the money, 0 out of the
/// money, and -0.5 at the strike, so the final rebalance of an evaluation
/// grid can still query a Delta.
pub fn put_delta(inputs: &BsInputs) -> f64 {
    if inputs.tau <= 0.0 || inputs.sigma <= 0.0 {
        // sigma == 0 with tau > 0 is the same deterministic limit on the
        // forward.
        let fwd = inputs.s * (inputs.r * inputs.tau.max(0.0)).exp();
        return if fwd < inputs.k {
            -1.0
        } else if fwd > inputs.k {
            0.0
        } else {
            -0.5
        };
    }
    norm_cdf(inputs.d1()) - 1.0
}

/// Black-Scholes price of a European put; intrinsic value at `tau = 0`.
pub fn put_price(inputs: &BsInputs) -> f64 {
    if inputs.tau <= 0.0 {
        return (inputs.k - inputs.s).max(0.0);
    }
    if inputs.sigma <= 0.0 {
        return (inputs.k * (-inputs.r * inputs.tau).exp() - inputs.s).max(0.0);
    }
    let d1 = inputs.d1();
    let d2 = d1 - inputs.sigma * inputs.tau.sqrt();
    inputs.k * (-inputs.r * inputs.tau).exp() * norm_cdf(-d2) - inputs.s * norm_cdf(-d1)
}

/// Black-Scholes price of a European call. Companion to [`put_price`];
/// exists mainly so put-call parity can be asserted.
pub fn call_price(inputs: &BsInputs) -> f64 {
    if inputs.tau <= 0.0 {
        return (inputs.s - inputs.k).max(0.0);
    }
    if inputs.sigma <= 0.0 {
        return (inputs.s - inputs.k * (-inputs.r * inputs.tau).exp()).max(0.0);
    }
    let d1 = inputs.d1();
    let d2 = d1 - inputs.sigma * inputs.tau.sqrt();
    inputs.s * norm_cdf(d1) - inputs.k * (-inputs.r * inputs.tau).exp() * norm_cdf(d2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn atm() -> BsInputs {
        BsInputs::new(100.0, 100.0, 0.05, 0.2, 1.0).unwrap()
    }

    #[test]
    fn put_delta_at_the_money() {
        // N(0.35) - 1 against the frozen CDF oracle value.
        assert_abs_diff_eq!(put_delta(&atm()), -0.363_169_348_824_380_9, epsilon = 1e-12);
    }

    #[test]
    fn put_delta_deep_limits() {
        let itm = BsInputs::new(1.0, 100.0, 0.05, 0.2, 0.01).unwrap();
        assert_abs_diff_eq!(put_delta(&itm), -1.0, epsilon = 1e-9);
        let otm = BsInputs::new(10_000.0, 100.0, 0.05, 0.2, 0.01).unwrap();
        assert_abs_diff_eq!(put_delta(&otm), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn put_delta_expiry_convention() {
        let mk = |s: f64| BsInputs { s, k: 100.0, r: 0.05, sigma: 0.2, tau: 0.0 };
        assert_eq!(put_delta(&mk(90.0)), -1.0);
        assert_eq!(put_delta(&mk(110.0)), 0.0);
        assert_eq!(put_delta(&mk(100.0)), -0.5);
    }

    #[test]
    fn put_price_reference_value() {
        assert_abs_diff_eq!(put_price(&atm()), 5.573_526_022_256_971, epsilon = 1e-10);
    }

    #[test]
    fn put_price_intrinsic_at_expiry() {
        let expiring = BsInputs { s: 90.0, k: 100.0, r: 0.05, sigma: 0.2, tau: 0.0 };
        assert_eq!(put_price(&expiring), 10.0);
    }

    #[test]
    fn put_price_zero_vol_limit() {
        let frozen = BsInputs { s: 100.0, k: 100.0, r: 0.05, sigma: 0.0, tau: 1.0 };
        assert_eq!(put_price(&frozen), 0.0);
        let itm = BsInputs { s: 80.0, k: 100.0, r: 0.05, sigma: 0.0, tau: 1.0 };
        assert_abs_diff_eq!(
            itm.k * (-0.05f64).exp() - 80.0,
            put_price(&itm),
            epsilon = 1e-12
        );
    }

    #[test]
    fn delta_matches_finite_difference_of_price() {
        for &s in &[70.0, 90.0, 100.0, 115.0, 140.0] {
            for &tau in &[0.05, 0.25, 1.0, 2.0] {
                let h = 1e-4 * s;
                let up = put_price(&BsInputs::new(s + h, 100.0, 0.05, 0.2, tau).unwrap());
                let dn = put_price(&BsInputs::new(s - h, 100.0, 0.05, 0.2, tau).unwrap());
                let fd = (up - dn) / (2.0 * h);
                let delta = put_delta(&BsInputs::new(s, 100.0, 0.05, 0.2, tau).unwrap());
                let rel = (fd - delta).abs() / delta.abs().max(1e-6);
                assert!(rel < 1e-4, "s={s} tau={tau}: fd={fd} delta={delta}");
            }
        }
    }

    #[test]
    fn delta_is_monotone_in_spot_and_bounded() {
        let mut prev = -2.0;
        for i in 0..200 {
            let s = 20.0 + i as f64;
            let d = put_delta(&BsInputs::new(s, 100.0, 0.05, 0.2, 0.7).unwrap());
            assert!((-1.0..=0.0).contains(&d));
            assert!(d >= prev - 1e-12);
            prev = d;
        }
    }

    #[test]
    fn put_call_parity() {
        for &s in &[60.0, 95.0, 100.0, 130.0] {
            let inp = BsInputs::new(s, 100.0, 0.05, 0.2, 1.0).unwrap();
            let residual =
                call_price(&inp) - put_price(&inp) - s + 100.0 * (-0.05f64).exp();
            assert!(residual.abs() < 1e-10, "s={s}: residual {residual}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BsInputs::new(-1.0, 100.0, 0.05, 0.2, 1.0).is_err());
        assert!(BsInputs::new(100.0, 0.0, 0.05, 0.2, 1.0).is_err());
        assert!(BsInputs::new(100.0, 100.0, 0.05, 0.0, 1.0).is_err());
        // sigma = 0 is fine once tau = 0.
        assert!(BsInputs::new(100.0, 100.0, 0.05, 0.0, 0.0).is_ok());
    }
}
