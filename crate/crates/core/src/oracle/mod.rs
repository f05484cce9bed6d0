//! Independent references for the series: a finite-difference solver for the
//! `psi` and pricing equations, a Monte Carlo pricer, Gaussian convolution by
//! Gauss–Hermite quadrature, and the direct extraction of the implied Sharpe
//! ratio from `psi` and `p`.

mod banded;
pub mod mc;
pub mod pde;

pub use mc::{mc_price, McConfig, McResult, McScheme};
pub use pde::{certify_refinement, solve_price_pde, solve_psi_pde, Grid2D, PdeSolution, Refinement};

use crate::error::{IsrError, Result};
use crate::model::{CoefficientTable, Family};
use crate::quad::normal_hermite;
use crate::sharpe::Scenario;

/// `E[f(X1, Y1)]` for `(X1, Y1)` Gaussian with mean
/// `(x - a s, y + b s)` and covariance `s [[2a, r], [r, 2q]]`, `s = t1 - t`,
/// by tensor Gauss–Hermite quadrature with `nodes` points per axis.
///
/// This is the frozen-coefficient semigroup applied to `f` and evaluated at
/// `(x, y)`. When the y-variance vanishes the y-axis collapses to one node.
///
/// # Errors
///
/// Returns an error when `t1 < t`, the covariance is not positive
/// semi-definite or `nodes == 0`.
#[allow(clippy::too_many_arguments)]
pub fn gaussian_convolution(
    f: &dyn Fn(f64, f64) -> f64,
    table: &CoefficientTable,
    t: f64,
    t1: f64,
    x: f64,
    y: f64,
    nodes: usize,
    hatted: bool,
) -> Result<f64> {
    if t1 < t {
        return Err(IsrError::Oracle("convolution time runs backwards".into()));
    }
    let s = t1 - t;
    let a = table.get(Family::HalfSigmaSq).c00;
    let q = table.get(Family::HalfBetaSq).c00;
    let r = table.get(Family::Cross).c00;
    let b = table
        .get(if hatted { Family::HattedDrift } else { Family::Drift })
        .c00;
    let (mx, my) = (x - a * s, y + b * s);
    if s == 0.0 {
        return Ok(f(mx, my));
    }
    let vxx = 2.0 * a * s;
    let vyy = 2.0 * q * s;
    let vxy = r * s;
    if vxx < 0.0 || vyy < 0.0 {
        return Err(IsrError::Oracle("negative variance in the convolution kernel".into()));
    }
    let l11 = vxx.sqrt();
    let l21 = if l11 > 0.0 { vxy / l11 } else { 0.0 };
    let rem = vyy - l21 * l21;
    if rem < -1e-12 * vyy.max(vxx) || (l11 == 0.0 && vxy != 0.0) {
        return Err(IsrError::Oracle("convolution covariance is not positive semi-definite".into()));
    }
    let l22 = rem.max(0.0).sqrt();
    let rule = normal_hermite(nodes)?;
    let mut total = 0.0;
    for (zi, wi) in rule.nodes.iter().zip(&rule.weights) {
        let x1 = mx + l11 * zi;
        let yc = my + l21 * zi;
        if l22 == 0.0 {
            total += wi * f(x1, yc);
        } else {
            let mut inner = 0.0;
            for (zj, wj) in rule.nodes.iter().zip(&rule.weights) {
                inner += wj * f(x1, yc + l22 * zj);
            }
            total += wi * inner;
        }
    }
    Ok(total)
}

/// The implied Sharpe ratio `sqrt(-2 (g nu p + psi) / (T - t))` from a value
/// of `psi` and a price.
///
/// # Errors
///
/// Returns an error when `g nu p + psi > 0` (the option position destroys
/// the value) or the scenario is invalid.
pub fn implied_sharpe_reference(psi: f64, price: f64, sc: &Scenario) -> Result<f64> {
    sc.validate()?;
    let q = sc.gamma * sc.nu * price + psi;
    if !q.is_finite() {
        return Err(IsrError::NonFinite {
            context: "reference radicand".into(),
        });
    }
    if q > 0.0 {
        return Err(IsrError::Radicand {
            value: -2.0 * q / sc.tau(),
            context: "value dominance violated",
        });
    }
    Ok((-2.0 * q / sc.tau()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{taylor_coeffs, DerivativeMode, ExpansionPoint, HestonParams, ModelSpec};
    use crate::opalg::{semigroup_poly, Poly};
    use approx::assert_relative_eq;

    fn table() -> CoefficientTable {
        let m = ModelSpec::heston(HestonParams::standard()).unwrap();
        taylor_coeffs(&m, ExpansionPoint::new(100f64.ln(), 0.04), DerivativeMode::Analytic).unwrap()
    }

    #[test]
    fn normalisation_and_moments() {
        let t = table();
        let (x, y) = (t.point.x_bar + 0.02, t.point.y_bar - 0.01);
        let (xb, yb) = (t.point.x_bar, t.point.y_bar);
        let one = gaussian_convolution(&|_, _| 1.0, &t, 0.0, 0.3, x, y, 64, false).unwrap();
        assert_relative_eq!(one, 1.0, max_relative = 1e-13);
        for (p, q) in [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (2, 1), (0, 3)] {
            let f = Poly::monomial(1.0, p, q);
            let exact = semigroup_poly(&t, 0.0, 0.3, false, &f).unwrap().eval(x - xb, y - yb);
            let conv = gaussian_convolution(
                &|x1, y1| (x1 - xb).powi(p as i32) * (y1 - yb).powi(q as i32),
                &t,
                0.0,
                0.3,
                x,
                y,
                64,
                false,
            )
            .unwrap();
            assert!((exact - conv).abs() <= 1e-10 * exact.abs().max(1e-3), "{p}{q}: {exact} {conv}");
        }
    }

    #[test]
    fn reference_ratio() {
        let sc = Scenario::at_state(0.0, 0.5, 0.0, 0.04, 0.0, 0.0, 1.0);
        let lam: f64 = 0.3;
        assert_relative_eq!(implied_sharpe_reference(-0.5 * lam * lam * 0.5, 1.0, &sc).unwrap(), lam, max_relative = 1e-15);
        assert!(implied_sharpe_reference(0.1, 1.0, &sc).is_err());
        assert!(gaussian_convolution(&|_, _| 1.0, &table(), 0.2, 0.1, 0.0, 0.0, 8, false).is_err());
    }
}
