//! Black–Scholes call in log variables and its x-derivatives.
//!
//! With zero rates the call price is `p = e^x N(d+) - e^k N(d-)`. Its
//! derivatives follow from the kernel
//!
//! ```text
//! g := (d_xx - d_x) p = e^x phi(d+) / w = e^k phi(d-) / w,   w = sigma0 sqrt(T - t)
//! ```
//!
//! so that `d_x^n p = d_x^{n-1} p + d_x^{n-2} g` and
//! `d_x^m g = e^k phi(d-) (-1)^m He_m(d-) / w^{m+1}` with `He_m` the
//! probabilists' Hermite polynomials.

use serde::{Deserialize, Serialize};

use crate::error::{finite, invalid, IsrError, Result};

/// Highest supported x-derivative order.
pub const MAX_DX_ORDER: usize = 6;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function via the complementary error function.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Probabilists' Hermite polynomial `He_n(z)`.
pub fn hermite_he(n: usize, z: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, z);
    match n {
        0 => h0,
        _ => {
            for k in 1..n {
                let h2 = z * h1 - k as f64 * h0;
                h0 = h1;
                h1 = h2;
            }
            h1
        }
    }
}

/// Inputs of the Black–Scholes kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BsInputs {
    pub t: f64,
    pub maturity: f64,
    pub x: f64,
    pub k: f64,
    pub sigma0: f64,
}

impl BsInputs {
    /// # Errors
    ///
    /// Returns an error unless `maturity > t` and `sigma0 > 0`.
    pub fn new(t: f64, maturity: f64, x: f64, k: f64, sigma0: f64) -> Result<Self> {
        let inputs = BsInputs {
            t,
            maturity,
            x,
            k,
            sigma0,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.maturity > self.t) {
            return Err(invalid("maturity", self.maturity, "must exceed the valuation time"));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(invalid("sigma0", self.sigma0, "must be positive"));
        }
        finite(self.x, "log spot")?;
        finite(self.k, "log strike")?;
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.maturity - self.t
    }

    /// Total standard deviation `sigma0 sqrt(T - t)`.
    pub fn total_vol(&self) -> f64 {
        self.sigma0 * self.tau().sqrt()
    }

    pub fn d_plus(&self) -> f64 {
        let w = self.total_vol();
        (self.x - self.k) / w + 0.5 * w
    }

    pub fn d_minus(&self) -> f64 {
        let w = self.total_vol();
        (self.x - self.k) / w - 0.5 * w
    }

    /// Same inputs at another log spot.
    pub fn at_x(&self, x: f64) -> Self {
        BsInputs { x, ..*self }
    }
}

/// Call price `e^x N(d+) - e^k N(d-)`.
///
/// # Errors
///
/// Returns an error when the inputs are invalid.
pub fn bs_price(inputs: &BsInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(price_unchecked(inputs))
}

fn price_unchecked(inputs: &BsInputs) -> f64 {
    inputs.x.exp() * norm_cdf(inputs.d_plus()) - inputs.k.exp() * norm_cdf(inputs.d_minus())
}

/// The kernel `(d_xx - d_x) p = e^x phi(d+) / (sigma0 sqrt(T - t))`.
///
/// # Errors
///
/// Returns an error when the inputs are invalid.
pub fn gamma_kernel(inputs: &BsInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(inputs.x.exp() * norm_pdf(inputs.d_plus()) / inputs.total_vol())
}

/// `d_x^m g` for `m = 0..=max_order`, using the representation in `d-`.
fn kernel_derivatives(inputs: &BsInputs, max_order: usize) -> Vec<f64> {
    let w = inputs.total_vol();
    let dm = inputs.d_minus();
    let base = inputs.k.exp() * norm_pdf(dm);
    (0..=max_order)
        .map(|m| {
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            sign * base * hermite_he(m, dm) / w.powi(m as i32 + 1)
        })
        .collect()
}

/// All derivatives `d_x^n p` for `n = 0..=max_order`.
///
/// # Errors
///
/// Returns an error for invalid inputs or `max_order > 6`.
pub fn bs_derivatives(inputs: &BsInputs, max_order: usize) -> Result<Vec<f64>> {
    inputs.validate()?;
    if max_order > MAX_DX_ORDER {
        return Err(IsrError::OperatorBound {
            what: "x-derivative order",
            got: max_order as u32,
            max: MAX_DX_ORDER as u32,
        });
    }
    let mut out = Vec::with_capacity(max_order + 1);
    out.push(price_unchecked(inputs));
    if max_order >= 1 {
        out.push(inputs.x.exp() * norm_cdf(inputs.d_plus()));
    }
    if max_order >= 2 {
        let g = kernel_derivatives(inputs, max_order - 2);
        for n in 2..=max_order {
            out.push(out[n - 1] + g[n - 2]);
        }
    }
    for v in &out {
        finite(*v, "Black-Scholes derivative")?;
    }
    Ok(out)
}

/// The `n`-th x-derivative of the call price.
///
/// # Errors
///
/// Returns an error for invalid inputs or `n > 6`.
pub fn bs_dx(inputs: &BsInputs, n: usize) -> Result<f64> {
    Ok(bs_derivatives(inputs, n)?[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use gauss_quad::GaussHermite;
    use proptest::prelude::*;
    use std::num::NonZeroUsize;

    fn atm() -> BsInputs {
        BsInputs::new(0.0, 6.0 / 52.0, 100f64.ln(), 100f64.ln(), 0.2).unwrap()
    }

    /// Lognormal expectation of the payoff by Gauss–Hermite quadrature,
    /// split at the strike so both pieces are smooth.
    fn lognormal_call(inp: &BsInputs) -> f64 {
        let w = inp.total_vol();
        let m = inp.x - 0.5 * w * w;
        let z_k = (inp.k - m) / w;
        // E[(e^{m + w Z} - e^k) 1{Z > z_k}] with Z standard normal, computed
        // by mapping (z_k, inf) through z = z_k + s, s >= 0, and Gauss-Legendre
        // on a truncated range.
        let rule = gauss_quad::GaussLegendre::new(NonZeroUsize::new(200).unwrap());
        let hi = z_k.max(0.0) + 12.0;
        let mut total = 0.0;
        let panels = 20;
        for p in 0..panels {
            let a = z_k + (hi - z_k) * p as f64 / panels as f64;
            let b = z_k + (hi - z_k) * (p + 1) as f64 / panels as f64;
            total += rule.integrate(a, b, |z| {
                ((m + w * z).exp() - inp.k.exp()) * norm_pdf(z)
            });
        }
        total
    }

    #[test]
    fn atm_price_matches_lognormal_integral() {
        let p = bs_price(&atm()).unwrap();
        assert_relative_eq!(p, lognormal_call(&atm()), max_relative = 1e-12);
        // frozen from the quadrature oracle
        assert!((p - 2.709_757_974_965_754).abs() < 1e-10, "{p}");
    }

    #[test]
    fn cdf_tails_are_accurate() {
        assert_relative_eq!(norm_cdf(-10.0), 7.619853024160527e-24, max_relative = 1e-12);
        assert_relative_eq!(norm_cdf(0.0), 0.5);
        let rule = GaussHermite::new(NonZeroUsize::new(40).unwrap());
        // E[N(Z)] = 1/2 for Z standard normal
        let e = rule.integrate(|s| norm_cdf(s * std::f64::consts::SQRT_2))
            / std::f64::consts::PI.sqrt();
        assert_relative_eq!(e, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn zero_variance_limit() {
        let mut inp = atm();
        inp.maturity = 1e-14;
        assert!(bs_price(&inp).unwrap().abs() < 1e-4);
    }

    #[test]
    fn deep_in_the_money_asymptote() {
        let inp = atm().at_x(100f64.ln() + 15.0 * atm().total_vol());
        let p = bs_price(&inp).unwrap();
        assert_relative_eq!(p, inp.x.exp() - inp.k.exp(), max_relative = 1e-14);
        let inp = atm().at_x(100f64.ln() + 10.0 * atm().total_vol());
        assert_relative_eq!(bs_dx(&inp, 1).unwrap(), inp.x.exp(), max_relative = 1e-12);
    }

    #[test]
    fn kernel_identity_on_grid() {
        for tau in [6.0, 9.0, 12.0].map(|w| w / 52.0) {
            for i in 0..=20 {
                let m = -0.5 + 0.05 * i as f64;
                let inp = BsInputs::new(0.0, tau, 100f64.ln() + m, 100f64.ln(), 0.2).unwrap();
                let d = bs_derivatives(&inp, 2).unwrap();
                let g = gamma_kernel(&inp).unwrap();
                assert!((d[2] - d[1] - g).abs() <= 1e-12 * g.max(1.0), "{m} {tau}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-4;
        for m in [-0.3, -0.05, 0.0, 0.1, 0.4] {
            let inp = atm().at_x(atm().x + m);
            let d = bs_derivatives(&inp, MAX_DX_ORDER).unwrap();
            for n in 1..=MAX_DX_ORDER {
                let up = bs_dx(&inp.at_x(inp.x + h), n - 1).unwrap();
                let dn = bs_dx(&inp.at_x(inp.x - h), n - 1).unwrap();
                let fd = (up - dn) / (2.0 * h);
                let scale = d[n].abs().max(d[n - 1].abs() * 1e-3);
                assert!((fd - d[n]).abs() <= 1e-5 * scale, "n={n} m={m}: {fd} vs {}", d[n]);
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        assert!(BsInputs::new(1.0, 1.0, 0.0, 0.0, 0.2).is_err());
        assert!(BsInputs::new(0.0, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(bs_dx(&atm(), 7).is_err());
    }

    #[test]
    fn hermite_polynomials() {
        assert_eq!(hermite_he(2, 3.0), 8.0);
        assert_eq!(hermite_he(3, 2.0), 2.0);
        assert_eq!(hermite_he(4, 1.0), -2.0);
    }

    proptest! {
        #[test]
        fn price_monotone(m in -0.5f64..0.5, dm in 0.001f64..0.1, s in 0.05f64..0.6) {
            let base = BsInputs::new(0.0, 0.25, 4.6 + m, 4.6, s).unwrap();
            let p = bs_price(&base).unwrap();
            prop_assert!(bs_price(&base.at_x(base.x + dm)).unwrap() > p);
            let moved = BsInputs { k: base.k + dm, ..base };
            prop_assert!(bs_price(&moved).unwrap() < p);
            let wider = BsInputs { sigma0: s + dm, ..base };
            // vega underflows deep in the money, so allow rounding
            prop_assert!(bs_price(&wider).unwrap() >= p * (1.0 - 1e-14));
        }
    }
}
