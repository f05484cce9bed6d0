//! Implied Sharpe ratio, Merton value function and the candidate strategy.
//!
//! The implied Sharpe ratio `L` solves `g nu p + psi = -(T - t) L^2 / 2`.
//! Inserting the series for `p` and `psi` and collecting orders gives
//!
//! ```text
//! L_0 = sqrt((g nu p_0 + psi_0) / (-(T - t)/2))
//! L_1 = -(g nu p_1 + psi_1) / ((T - t) L_0)
//! L_2 = -(g nu p_2 + psi_2 + (T - t) L_1^2 / 2) / ((T - t) L_0)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{finite, invalid, IsrError, Result};
use crate::expansion::{ExpTermSource, ExpansionAt, ExpansionConfig, PriceTerms, PsiTerms};
use crate::model::{taylor_coeffs, DerivativeMode, ExpansionPoint, ModelSpec};

/// Radicands within this distance of zero count as zero.
pub const RADICAND_TOL: f64 = 1e-12;

/// One evaluation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub t: f64,
    pub maturity: f64,
    /// Log spot.
    pub x: f64,
    /// Volatility factor.
    pub y: f64,
    /// Log strike.
    pub k: f64,
    /// Number of calls held (negative for short positions).
    pub nu: f64,
    /// Risk aversion.
    pub gamma: f64,
    /// Initial wealth; only enters value-function outputs.
    pub wealth: f64,
    pub anchor: ExpansionPoint,
}

impl Scenario {
    /// A scenario anchored at its own state.
    pub fn at_state(t: f64, maturity: f64, x: f64, y: f64, k: f64, nu: f64, gamma: f64) -> Self {
        Scenario {
            t,
            maturity,
            x,
            y,
            k,
            nu,
            gamma,
            wealth: 0.0,
            anchor: ExpansionPoint::new(x, y),
        }
    }

    /// # Errors
    ///
    /// Returns an error unless `T > t`, `gamma > 0` and all fields are finite.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t", self.t),
            ("maturity", self.maturity),
            ("x", self.x),
            ("y", self.y),
            ("k", self.k),
            ("nu", self.nu),
            ("wealth", self.wealth),
            ("x_bar", self.anchor.x_bar),
            ("y_bar", self.anchor.y_bar),
        ] {
            if !v.is_finite() {
                return Err(invalid(name, v, "must be finite"));
            }
        }
        if !(self.maturity > self.t) {
            return Err(invalid("maturity", self.maturity, "must exceed the valuation time"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("gamma", self.gamma, "must be positive"));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.maturity - self.t
    }

    /// `(x - x_bar, y - y_bar)`.
    pub fn centred(&self) -> (f64, f64) {
        (self.x - self.anchor.x_bar, self.y - self.anchor.y_bar)
    }
}

/// How the corrections are assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// From the price and `psi` series under any pricing measure.
    General,
    /// From the `lambda^2/2` integrals and the bracket directly; valid only
    /// when the pricing measure is the minimal martingale measure.
    MmmRemark,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::General => "general",
            Method::MmmRemark => "mmm_remark",
        })
    }
}

/// Truncated implied Sharpe ratio with the series it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpeApproximation {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Sum of the terms up to `order`.
    pub total: f64,
    pub order: u8,
    pub psi: PsiTerms,
    pub price: PriceTerms,
    /// `(g nu p_0 + psi_0) / (-(T - t)/2)`.
    pub radicand: f64,
    pub method: Method,
    pub exp_term_source: ExpTermSource,
}

/// Implied Sharpe ratio of a scenario under a model, using analytic Taylor
/// coefficients where the model provides them.
///
/// `method = None` picks the minimal-measure shortcut when the pricing drift equals
/// the investment drift and the general path otherwise.
///
/// # Errors
///
/// Returns an error for invalid scenarios, a state outside the model domain,
/// a negative radicand, or `L_0 = 0` with `order >= 1`.
pub fn implied_sharpe(
    sc: &Scenario,
    model: &ModelSpec,
    order: u8,
    method: Option<Method>,
    cfg: &ExpansionConfig,
) -> Result<SharpeApproximation> {
    sc.validate()?;
    model.check_domain(sc.x, sc.y)?;
    let table = taylor_coeffs(model, sc.anchor, DerivativeMode::Analytic)?;
    let exp = ExpansionAt::new(&table, sc.t, sc.maturity, *cfg)?;
    implied_sharpe_at(&exp, sc, order, method)
}

/// As [`implied_sharpe`] with prepared operator integrals.
///
/// # Errors
///
/// As [`implied_sharpe`].
pub fn implied_sharpe_at(
    exp: &ExpansionAt,
    sc: &Scenario,
    order: u8,
    method: Option<Method>,
) -> Result<SharpeApproximation> {
    sc.validate()?;
    if order > 2 {
        return Err(IsrError::Unsupported(format!("order {order}")));
    }
    let hatted = exp.table().hatted_differs();
    let method = method.unwrap_or(if hatted { Method::General } else { Method::MmmRemark });
    if method == Method::MmmRemark && hatted {
        return Err(IsrError::Unsupported(
            "the shortcut needs the minimal martingale measure".into(),
        ));
    }
    let psi = exp.psi(sc)?;
    let price = exp.price(sc)?;
    assemble(sc, psi, price, order, method)
}

fn assemble(sc: &Scenario, psi: PsiTerms, price: PriceTerms, order: u8, method: Method) -> Result<SharpeApproximation> {
    let tau = sc.tau();
    let gn = sc.gamma * sc.nu;
    // the option parts cancel exactly, leaving -(lambda^2/2)_0 tau
    let q0 = (gn * price.p0 + psi.option[0]) + psi.lambda[0];
    let radicand = finite(q0 / (-0.5 * tau), "radicand")?;
    if radicand < -RADICAND_TOL {
        return Err(IsrError::Radicand {
            value: radicand,
            context: "value dominance violated",
        });
    }
    let lambda0 = if radicand <= RADICAND_TOL { 0.0 } else { radicand.sqrt() };
    let (mut lambda1, mut lambda2) = (0.0, 0.0);
    if order >= 1 {
        if lambda0 == 0.0 {
            return Err(IsrError::Radicand {
                value: radicand,
                context: "degenerate anchor: zero-order ratio vanishes",
            });
        }
        let denom = tau * lambda0;
        match method {
            Method::General => {
                lambda1 = -(gn * price.p1 + psi.psi1) / denom;
                if order >= 2 {
                    lambda2 = -(gn * price.p2 + psi.psi2 + tau * lambda1 * lambda1 / 2.0) / denom;
                }
            }
            Method::MmmRemark => {
                lambda1 = -psi.lambda[1] / denom;
                if order >= 2 {
                    lambda2 = (-psi.lambda[2] - psi.bracket.total() - tau * lambda1 * lambda1 / 2.0) / denom;
                }
            }
        }
    }
    let total = lambda0 + lambda1 + lambda2;
    finite(total, "implied Sharpe ratio")?;
    Ok(SharpeApproximation {
        lambda0,
        lambda1,
        lambda2,
        total,
        order,
        psi,
        price,
        radicand,
        method,
        exp_term_source: psi.bracket.exp_term.source,
    })
}

/// Merton value `-(1/g) exp(-g w - (T - t) lambda^2 / 2)`.
pub fn merton_value(t: f64, w: f64, lambda: f64, gamma: f64, maturity: f64) -> f64 {
    -(1.0 / gamma) * (-gamma * w - (maturity - t) * 0.5 * lambda * lambda).exp()
}

/// Candidate optimal holding `(mu + rho beta sigma psi_y + sigma^2 psi_x) / (sigma^2 g)`
/// at the scenario state.
///
/// # Errors
///
/// Returns an error when `sigma` vanishes at the state.
pub fn optimal_strategy(sc: &Scenario, model: &ModelSpec, psi_gradients: (f64, f64)) -> Result<f64> {
    let (x, y) = (sc.x, sc.y);
    let sigma = model.sigma(x, y);
    if !(sigma.abs() > 0.0) {
        return Err(IsrError::Domain {
            x,
            y,
            reason: "degenerate market: sigma vanishes",
        });
    }
    let (px, py) = psi_gradients;
    let num = model.mu(x, y) + model.rho() * model.beta(x, y) * sigma * py + sigma * sigma * px;
    finite(num / (sigma * sigma * sc.gamma), "optimal strategy")
}

/// Central differences of the second-order `psi` series in `x` and `y`,
/// step `1e-5`, with the anchor held fixed.
///
/// # Errors
///
/// Returns an error when a shifted series evaluation fails.
pub fn psi_gradients(exp: &ExpansionAt, sc: &Scenario) -> Result<(f64, f64)> {
    let h = 1e-5;
    let psi = |dx: f64, dy: f64| -> Result<f64> {
        let s = Scenario {
            x: sc.x + dx,
            y: sc.y + dy,
            ..*sc
        };
        let p = exp.psi(&s)?;
        Ok(p.psi0 + p.psi1 + p.psi2)
    };
    let px = (psi(h, 0.0)? - psi(-h, 0.0)?) / (2.0 * h);
    let py = (psi(0.0, h)? - psi(0.0, -h)?) / (2.0 * h);
    Ok((px, py))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bskernel::{bs_dx, BsInputs};
    use crate::model::{HestonParams, ReciprocalHestonParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn heston() -> ModelSpec {
        ModelSpec::heston(HestonParams::standard()).unwrap()
    }

    fn heston_atm(gamma: f64, nu: f64) -> Scenario {
        let x = 100f64.ln();
        Scenario::at_state(0.0, 6.0 / 52.0, x, 0.04, x, nu, gamma)
    }

    #[test]
    fn black_scholes_is_exact() {
        let m = ModelSpec::black_scholes(0.08, 0.25).unwrap();
        for nu in [-2.0, 0.0, 3.0] {
            let sc = Scenario::at_state(0.0, 0.5, 4.6, 0.0, 4.7, nu, 1.5);
            let s = implied_sharpe(&sc, &m, 2, None, &ExpansionConfig::fast()).unwrap();
            assert_relative_eq!(s.total, 0.08 / 0.25, max_relative = 1e-12);
            assert_eq!((s.lambda1, s.lambda2), (0.0, 0.0));
        }
    }

    #[test]
    fn zero_order_is_the_anchor_sharpe_ratio() {
        for nu in [-4.0, 0.0, 2.5] {
            let s = implied_sharpe(&heston_atm(0.7, nu), &heston(), 0, None, &ExpansionConfig::fast()).unwrap();
            let lam = heston().lambda(0.0, 0.04);
            assert!((s.radicand - lam * lam).abs() <= 1e-14 * lam * lam);
            assert_relative_eq!(s.lambda0, lam.abs(), max_relative = 1e-14);
        }
    }

    #[test]
    fn general_and_shortcut_agree() {
        for m in [heston(), ModelSpec::reciprocal_heston(ReciprocalHestonParams::standard()).unwrap()] {
            for nu in [-2.0, 1.0] {
                let mut sc = heston_atm(1.3, nu);
                sc.x += 0.03;
                sc.y += 0.005;
                let g = implied_sharpe(&sc, &m, 2, Some(Method::General), &ExpansionConfig::fast()).unwrap();
                let r = implied_sharpe(&sc, &m, 2, Some(Method::MmmRemark), &ExpansionConfig::fast()).unwrap();
                assert!((g.lambda1 - r.lambda1).abs() < 1e-10);
                assert!((g.lambda2 - r.lambda2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shortcut_needs_the_minimal_martingale_measure() {
        let m = heston().with_omega(std::sync::Arc::new(|_, _| 0.1));
        let sc = heston_atm(1.0, 1.0);
        assert!(implied_sharpe(&sc, &m, 2, Some(Method::MmmRemark), &ExpansionConfig::fast()).is_err());
        let s = implied_sharpe(&sc, &m, 2, None, &ExpansionConfig::fast()).unwrap();
        assert_eq!(s.method, Method::General);
    }

    #[test]
    fn zero_ratio_rejects_corrections() {
        let m = ModelSpec::black_scholes(0.0, 0.2).unwrap();
        let sc = Scenario::at_state(0.0, 0.5, 4.6, 0.0, 4.6, 1.0, 1.0);
        assert_eq!(implied_sharpe(&sc, &m, 0, None, &ExpansionConfig::fast()).unwrap().total, 0.0);
        assert!(implied_sharpe(&sc, &m, 1, None, &ExpansionConfig::fast()).is_err());
    }

    #[test]
    fn merton_terminal_value_and_monotonicity() {
        assert_relative_eq!(merton_value(1.0, 2.0, 0.3, 0.5, 1.0), -2.0 * (-1.0f64).exp());
        assert!(merton_value(0.0, 1.0, 0.2, 2.0, 1.0) > merton_value(0.0, 1.0, 0.1, 2.0, 1.0));
    }

    proptest! {
        #[test]
        fn merton_increasing_in_abs_lambda(l in 0.0f64..2.0, dl in 1e-3f64..1.0, g in 0.1f64..5.0, tau in 0.01f64..2.0) {
            prop_assert!(merton_value(0.0, 0.3, l + dl, g, tau) > merton_value(0.0, 0.3, l, g, tau));
            prop_assert!(merton_value(0.0, 0.3, -(l + dl), g, tau) > merton_value(0.0, 0.3, -l, g, tau));
        }
    }

    #[test]
    fn merton_strategy_for_constant_coefficients() {
        let m = ModelSpec::black_scholes(0.05, 0.2).unwrap();
        let sc = Scenario::at_state(0.0, 0.5, 4.6, 0.0, 4.6, 0.0, 2.0);
        let table = taylor_coeffs(&m, sc.anchor, DerivativeMode::Analytic).unwrap();
        let exp = ExpansionAt::new(&table, 0.0, 0.5, ExpansionConfig::fast()).unwrap();
        let grads = psi_gradients(&exp, &sc).unwrap();
        assert!(grads.0.abs() < 1e-9 && grads.1.abs() < 1e-9);
        assert_relative_eq!(optimal_strategy(&sc, &m, grads).unwrap(), 0.05 / (0.04 * 2.0), max_relative = 1e-9);
    }

    #[test]
    fn strategy_hedges_the_option_for_large_risk_aversion() {
        // psi gradients that depend on gamma only through -g nu p^BS
        let m = heston();
        let base = heston_atm(1.0, 0.0);
        let table = taylor_coeffs(&m, base.anchor, DerivativeMode::Analytic).unwrap();
        let exp = ExpansionAt::new(&table, base.t, base.maturity, ExpansionConfig::fast()).unwrap();
        let (gx, gy) = psi_gradients(&exp, &base).unwrap();
        let delta = bs_dx(&BsInputs::new(0.0, base.maturity, base.x, base.k, 0.2).unwrap(), 1).unwrap();
        for nu in [-2.0, 1.0] {
            let gaps: Vec<f64> = [1.0, 10.0, 100.0]
                .iter()
                .map(|&gamma| {
                    let sc = heston_atm(gamma, nu);
                    optimal_strategy(&sc, &m, (gx - gamma * nu * delta, gy)).unwrap() + nu * delta
                })
                .collect();
            assert!(gaps[1].abs() < gaps[0].abs() && gaps[2].abs() < gaps[1].abs(), "{gaps:?}");
            assert_relative_eq!(gaps[0], 10.0 * gaps[1], max_relative = 1e-9);
        }
    }

    #[test]
    fn short_calls_raise_the_stock_position() {
        let m = heston();
        let pos = |nu: f64| {
            let sc = heston_atm(1.0, nu);
            let table = taylor_coeffs(&m, sc.anchor, DerivativeMode::Analytic).unwrap();
            let exp = ExpansionAt::new(&table, sc.t, sc.maturity, ExpansionConfig::fast()).unwrap();
            optimal_strategy(&sc, &m, psi_gradients(&exp, &sc).unwrap()).unwrap()
        };
        assert!(pos(-5.0) > pos(0.0));
        assert!(pos(0.0) > pos(5.0));
    }

    #[test]
    fn invalid_scenarios() {
        let mut sc = heston_atm(1.0, 1.0);
        sc.gamma = 0.0;
        assert!(implied_sharpe(&sc, &heston(), 2, None, &ExpansionConfig::fast()).is_err());
        let mut sc = heston_atm(1.0, 1.0);
        sc.y = -0.01;
        assert!(implied_sharpe(&sc, &heston(), 2, None, &ExpansionConfig::fast()).is_err());
    }
}
