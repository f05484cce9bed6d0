//! Second-order series for the distortion function `psi` and the option price.
//!
//! Both series are built from the Black–Scholes price with volatility
//! `sigma0 = sqrt(2 (sigma^2/2)_0)` and from time integrals of the operators
//! `G_1`, `G_2` of [`crate::opalg`]:
//!
//! ```text
//! psi_0 = -(lambda^2/2)_0 tau - g nu p_BS
//! psi_1 = -g nu  int G_1 p_BS - int (lambda^2/2)_1(X, Y)
//! psi_2 = -g nu (int int G_1 G_1 + int G_2) p_BS
//!         - int (lambda^2/2)_2(X, Y) - int G_1 int (lambda^2/2)_1(X, Y)
//!         + (1 - rho^2)(beta^2/2)_0 [ lambda-square + cross + exponential ]
//! ```
//!
//! with `g = gamma`. The price series uses the same operators built with the
//! pricing drift. In the double integral both factors start at the valuation
//! time, `G_1(t, t1) G_1(t, t2)` with `t <= t1 <= t2 <= T`.

use serde::{Deserialize, Serialize};

use crate::bskernel::{bs_derivatives, norm_pdf, BsInputs};
use crate::error::{finite, invalid, IsrError, Result};
use crate::model::{CoefficientTable, Family, ModelKind};
use crate::opalg::{build_g_from_pair, build_xy, semigroup_poly, DiffOperator, Poly};
use crate::oracle::gaussian_convolution;
use crate::quad::{legendre, Rule};
use crate::sharpe::Scenario;

/// Maturities shorter than this are treated as expired.
pub const DEGENERATE_TAU: f64 = 1e-10;

/// Which evaluation of the exponential term in `psi_2` feeds the series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExpTermSource {
    /// The closed-form time integrand.
    #[default]
    Printed,
    /// Gauss–Hermite convolution of the squared gradient.
    Convolution,
}

impl std::fmt::Display for ExpTermSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExpTermSource::Printed => "printed",
            ExpTermSource::Convolution => "convolution",
        })
    }
}

/// Numerical settings of the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Gauss–Legendre order per time axis.
    pub quad_order: usize,
    /// Gauss–Hermite nodes per axis for the convolution reference.
    pub hermite_nodes: usize,
    pub exp_term_source: ExpTermSource,
    /// Compute the convolution reference even when it does not feed the series.
    pub with_reference: bool,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            quad_order: 32,
            hermite_nodes: 64,
            exp_term_source: ExpTermSource::Printed,
            with_reference: true,
        }
    }
}

impl ExpansionConfig {
    /// Defaults without the convolution reference, for tight loops.
    pub fn fast() -> Self {
        ExpansionConfig {
            with_reference: false,
            ..Default::default()
        }
    }
}

/// Both evaluations of the exponential term (without the `gamma^2 nu^2`
/// factor and the `(1 - rho^2)(beta^2/2)_0` prefactor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub printed: f64,
    pub convolution: Option<f64>,
    pub source: ExpTermSource,
}

impl ExpTerm {
    /// The value selected by `source`.
    pub fn value(&self) -> f64 {
        match (self.source, self.convolution) {
            (ExpTermSource::Convolution, Some(c)) => c,
            _ => self.printed,
        }
    }

    /// Relative gap between the two evaluations, when both exist.
    pub fn discrepancy(&self) -> Option<f64> {
        self.convolution
            .map(|c| (self.printed - c).abs() / c.abs().max(f64::MIN_POSITIVE))
    }
}

/// The bracket multiplying `(1 - rho^2)(beta^2/2)_0` in `psi_2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psi2Bracket {
    /// `(1 - rho^2)(beta^2/2)_0`.
    pub prefactor: f64,
    /// `(lambda^2/2)_{01}^2 tau^3 / 3`.
    pub lambda_sq: f64,
    /// `2 g nu` times the `d_y` term.
    pub cross: f64,
    /// `g^2 nu^2` times the exponential term.
    pub exponential: f64,
    pub exp_term: ExpTerm,
}

impl Psi2Bracket {
    pub fn total(&self) -> f64 {
        self.prefactor * (self.lambda_sq + self.cross + self.exponential)
    }
}

/// Series terms of `psi` at the scenario point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiTerms {
    pub psi0: f64,
    pub psi1: f64,
    pub psi2: f64,
    /// The `-gamma nu` operator parts of each order.
    pub option: [f64; 3],
    /// The `lambda^2/2` integrals of each order, with their minus sign.
    pub lambda: [f64; 3],
    pub bracket: Psi2Bracket,
}

/// Series terms of the option price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceTerms {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub total: f64,
}

/// Time-integrated operators for one `(t, T)` and one drift choice.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorIntegrals {
    /// `int_t^T G_1(t, t1) dt1`.
    pub first: DiffOperator,
    /// `int_t^T G_2(t, t1) dt1`.
    pub second_g2: DiffOperator,
    /// `int_t^T dt1 int_t1^T dt2 G_1(t, t1) G_1(t, t2)`.
    pub second_g1g1: DiffOperator,
}

impl OperatorIntegrals {
    /// # Errors
    ///
    /// Returns an error for `T <= t`, a quadrature order below 2 or an
    /// operator cap violation.
    pub fn build(table: &CoefficientTable, t: f64, maturity: f64, hatted: bool, order: usize) -> Result<Self> {
        if !(maturity > t) {
            return Err(invalid("maturity", maturity, "must exceed the valuation time"));
        }
        let rule = legendre(order)?;
        let g1 = |t1: f64| -> Result<DiffOperator> {
            build_g_from_pair(1, table, &build_xy(table, t, t1, hatted)?, hatted)
        };
        let mut first = DiffOperator::zero();
        let mut second_g2 = DiffOperator::zero();
        let mut second_g1g1 = DiffOperator::zero();
        for (t1, w1) in rule.mapped(t, maturity) {
            let pair = build_xy(table, t, t1, hatted)?;
            let g1_t1 = build_g_from_pair(1, table, &pair, hatted)?;
            first.add_assign_scaled(&g1_t1, w1);
            second_g2.add_assign_scaled(&build_g_from_pair(2, table, &pair, hatted)?, w1);
            if g1_t1.is_zero() {
                continue;
            }
            let mut inner = DiffOperator::zero();
            for (t2, w2) in rule.mapped(t1, maturity) {
                inner.add_assign_scaled(&g1(t2)?, w2);
            }
            second_g1g1.add_assign_scaled(&g1_t1.compose(&inner)?, w1);
        }
        Ok(OperatorIntegrals {
            first,
            second_g2,
            second_g1g1,
        })
    }

    /// The full second-order operator.
    pub fn second(&self) -> DiffOperator {
        self.second_g2.add(&self.second_g1g1)
    }
}

/// Everything of the series that depends only on the table and `(t, T)`.
///
/// Building it once and evaluating many scenarios is what makes sweeps over
/// `gamma`, `nu`, spot and strike cheap.
#[derive(Debug, Clone)]
pub struct ExpansionAt {
    table: CoefficientTable,
    t: f64,
    maturity: f64,
    cfg: ExpansionConfig,
    tilde: Option<(DiffOperator, DiffOperator)>,
    hat: Option<(DiffOperator, DiffOperator)>,
}

impl ExpansionAt {
    /// # Errors
    ///
    /// Returns an error for invalid times, a quadrature order below 2 or a
    /// non-positive `sigma0`.
    pub fn new(table: &CoefficientTable, t: f64, maturity: f64, cfg: ExpansionConfig) -> Result<Self> {
        legendre(cfg.quad_order)?;
        if !(table.sigma0() > 0.0) {
            return Err(invalid("sigma0", table.sigma0(), "must be positive"));
        }
        if !(maturity > t) {
            return Err(invalid("maturity", maturity, "must exceed the valuation time"));
        }
        let degenerate = maturity - t < DEGENERATE_TAU;
        let (tilde, hat) = if degenerate {
            (None, None)
        } else {
            let ops = |hatted| -> Result<(DiffOperator, DiffOperator)> {
                let oi = OperatorIntegrals::build(table, t, maturity, hatted, cfg.quad_order)?;
                Ok((oi.first.clone(), oi.second()))
            };
            let tilde = ops(false)?;
            let hat = if table.hatted_differs() { ops(true)? } else { tilde.clone() };
            (Some(tilde), Some(hat))
        };
        Ok(ExpansionAt {
            table: *table,
            t,
            maturity,
            cfg,
            tilde,
            hat,
        })
    }

    pub fn table(&self) -> &CoefficientTable {
        &self.table
    }

    pub fn tau(&self) -> f64 {
        self.maturity - self.t
    }

    fn check(&self, sc: &Scenario) -> Result<()> {
        if sc.t != self.t || sc.maturity != self.maturity {
            return Err(IsrError::Unsupported(
                "scenario times differ from the prepared expansion".into(),
            ));
        }
        if sc.anchor != self.table.point {
            return Err(IsrError::Unsupported(
                "scenario anchor differs from the table's expansion point".into(),
            ));
        }
        Ok(())
    }

    fn bs(&self, sc: &Scenario) -> Result<BsInputs> {
        BsInputs::new(sc.t, sc.maturity, sc.x, sc.k, self.table.sigma0())
    }

    /// The price series.
    ///
    /// # Errors
    ///
    /// Returns an error when the scenario does not match the prepared times
    /// and anchor, or a value is non-finite.
    pub fn price(&self, sc: &Scenario) -> Result<PriceTerms> {
        self.check(sc)?;
        let Some((first, second)) = &self.hat else {
            let p0 = payoff(sc.x, sc.k);
            return Ok(PriceTerms { p0, p1: 0.0, p2: 0.0, total: p0 });
        };
        let bs = self.bs(sc)?;
        let (u, v) = sc.centred();
        let d = bs_derivatives(&bs, first.max_x_order().max(second.max_x_order()) as usize)?;
        let p0 = d[0];
        let p1 = first.apply_to_derivatives(&d, u, v);
        let p2 = second.apply_to_derivatives(&d, u, v);
        finite(p1, "p1")?;
        finite(p2, "p2")?;
        Ok(PriceTerms {
            p0,
            p1,
            p2,
            total: p0 + p1 + p2,
        })
    }

    /// The `psi` series.
    ///
    /// # Errors
    ///
    /// As [`ExpansionAt::price`], plus failures of the convolution reference.
    pub fn psi(&self, sc: &Scenario) -> Result<PsiTerms> {
        self.check(sc)?;
        let gn = sc.gamma * sc.nu;
        let lam0 = self.table.get(Family::HalfLambdaSq).c00;
        let Some((first, second)) = &self.tilde else {
            let option0 = -(gn * payoff(sc.x, sc.k));
            return Ok(PsiTerms {
                psi0: option0,
                psi1: 0.0,
                psi2: 0.0,
                option: [option0, 0.0, 0.0],
                lambda: [0.0; 3],
                bracket: Psi2Bracket {
                    prefactor: 0.0,
                    lambda_sq: 0.0,
                    cross: 0.0,
                    exponential: 0.0,
                    exp_term: ExpTerm {
                        printed: 0.0,
                        convolution: None,
                        source: self.cfg.exp_term_source,
                    },
                },
            });
        };
        let tau = self.tau();
        let bs = self.bs(sc)?;
        let (u, v) = sc.centred();
        let d = bs_derivatives(&bs, first.max_x_order().max(second.max_x_order()) as usize)?;
        // keep -(g nu p) as the exact negation of g nu p so that the two cancel
        let option = [
            -(gn * d[0]),
            -gn * first.apply_to_derivatives(&d, u, v),
            -gn * second.apply_to_derivatives(&d, u, v),
        ];
        let lambda = [
            -(lam0 * tau),
            -first_order_closed(&self.table, tau, u, v),
            -lambda2_closed(&self.table, tau, u, v) - cross_closed(&self.table, tau, u, v),
        ];
        let rho = self.table.rho;
        let prefactor = (1.0 - rho * rho) * self.table.get(Family::HalfBetaSq).c00;
        let l01 = self.table.get(Family::HalfLambdaSq).c01;
        let exp_term = if gn == 0.0 && !self.cfg.with_reference {
            ExpTerm {
                printed: 0.0,
                convolution: None,
                source: self.cfg.exp_term_source,
            }
        } else {
            exp_term(&self.table, sc, &self.cfg)?
        };
        let bracket = Psi2Bracket {
            prefactor,
            lambda_sq: l01 * l01 * tau.powi(3) / 3.0,
            cross: 2.0 * gn * dy_closed(&self.table, &bs),
            exponential: gn * gn * exp_term.value(),
            exp_term,
        };
        let psi0 = option[0] + lambda[0];
        let psi1 = option[1] + lambda[1];
        let psi2 = option[2] + lambda[2] + bracket.total();
        for (v, c) in [(psi1, "psi1"), (psi2, "psi2")] {
            finite(v, c)?;
        }
        Ok(PsiTerms {
            psi0,
            psi1,
            psi2,
            option,
            lambda,
            bracket,
        })
    }
}

/// Call payoff `(e^x - e^k)^+`.
pub fn payoff(x: f64, k: f64) -> f64 {
    (x.exp() - k.exp()).max(0.0)
}

/// The `psi` series at a scenario.
///
/// # Errors
///
/// Returns an error for invalid times, quadrature orders below 2 or
/// non-finite results.
pub fn psi_terms(sc: &Scenario, table: &CoefficientTable, cfg: &ExpansionConfig) -> Result<PsiTerms> {
    ExpansionAt::new(table, sc.t, sc.maturity, *cfg)?.psi(sc)
}

/// The price series at a scenario.
///
/// # Errors
///
/// As [`psi_terms`].
pub fn price_terms(sc: &Scenario, table: &CoefficientTable, cfg: &ExpansionConfig) -> Result<PriceTerms> {
    ExpansionAt::new(table, sc.t, sc.maturity, *cfg)?.price(sc)
}

fn moments(table: &CoefficientTable) -> (f64, f64, f64, f64) {
    (
        table.get(Family::HalfSigmaSq).c00,
        table.get(Family::Drift).c00,
        table.get(Family::HalfBetaSq).c00,
        table.get(Family::Cross).c00,
    )
}

/// `int_t^T (lambda^2/2)_1(X, Y) 1 dt1` in closed form.
pub fn first_order_closed(table: &CoefficientTable, tau: f64, u: f64, v: f64) -> f64 {
    let (a, b, _, _) = moments(table);
    let l = table.get(Family::HalfLambdaSq);
    l.c10 * (u * tau - a * tau * tau / 2.0) + l.c01 * (v * tau + b * tau * tau / 2.0)
}

/// `int_t^T (lambda^2/2)_2(X, Y) 1 dt1` in closed form, over all three
/// second-order coefficients. Besides the squared means, each coefficient
/// picks up the matching entry of the covariance `s [[2a, r], [r, 2q]]`.
pub fn lambda2_closed(table: &CoefficientTable, tau: f64, u: f64, v: f64) -> f64 {
    let (a, b, q, r) = moments(table);
    let l = table.get(Family::HalfLambdaSq);
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let xx = u * u * tau - u * a * t2 + a * a * t3 / 3.0 + a * t2;
    let xy = u * v * tau + (u * b - v * a) * t2 / 2.0 - a * b * t3 / 3.0 + r * t2 / 2.0;
    let yy = v * v * tau + v * b * t2 + b * b * t3 / 3.0 + q * t2;
    l.c20 * xx + l.c11 * xy + l.c02 * yy
}

/// `int_t^T dt1 G_1(t, t1) int_t1^T dt2 (lambda^2/2)_1(X(t, t2), Y(t, t2)) 1`
/// in closed form.
pub fn cross_closed(table: &CoefficientTable, tau: f64, u: f64, v: f64) -> f64 {
    let (a, b, _, _) = moments(table);
    let l = table.get(Family::HalfLambdaSq);
    let s = table.get(Family::HalfSigmaSq);
    let c = table.get(Family::Drift);
    let half = tau * tau / 2.0;
    -l.c10 * half * ((s.c10 * u + s.c01 * v) + tau / 3.0 * (-s.c10 * a + s.c01 * b))
        + l.c01 * half * ((c.c10 * u + c.c01 * v) + tau / 3.0 * (-c.c10 * a + c.c01 * b))
}

/// `int_t^T dt1 (lambda^2/2)_{01} (T - t1) d_y(int_t1^T G_1(t, t2) dt2) p_BS(t)`
/// in closed form.
fn dy_closed(table: &CoefficientTable, bs: &BsInputs) -> f64 {
    let tau = bs.tau();
    let g = bs.x.exp() * norm_pdf(bs.d_plus()) / bs.total_vol();
    table.get(Family::HalfLambdaSq).c01 * table.get(Family::HalfSigmaSq).c01 * g * tau.powi(3) / 3.0
}

/// Which closed form [`closed_lambda2_second`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda2Kind {
    Heston,
    ReciprocalHeston,
    /// Quadrature of the substituted polynomial.
    Generic,
}

impl From<ModelKind> for Lambda2Kind {
    fn from(k: ModelKind) -> Self {
        match k {
            ModelKind::Heston => Lambda2Kind::Heston,
            ModelKind::ReciprocalHeston => Lambda2Kind::ReciprocalHeston,
            _ => Lambda2Kind::Generic,
        }
    }
}

fn tau_uv(sc: &Scenario) -> Result<(f64, f64, f64)> {
    sc.validate()?;
    let (u, v) = sc.centred();
    Ok((sc.tau(), u, v))
}

/// First-order `lambda^2/2` time integral (closed form).
///
/// # Errors
///
/// Returns an error for an invalid scenario.
pub fn closed_first_order(table: &CoefficientTable, sc: &Scenario) -> Result<f64> {
    let (tau, u, v) = tau_uv(sc)?;
    finite(first_order_closed(table, tau, u, v), "first-order integral")
}

/// The nested `G_1` / first-order `lambda^2/2` integral (closed form).
///
/// # Errors
///
/// Returns an error for an invalid scenario.
pub fn closed_second_order_cross(table: &CoefficientTable, sc: &Scenario) -> Result<f64> {
    let (tau, u, v) = tau_uv(sc)?;
    finite(cross_closed(table, tau, u, v), "second-order cross integral")
}

/// Second-order `lambda^2/2` time integral. The two preset kinds share the
/// closed form over `(20, 11, 02)`; `Generic` integrates by quadrature.
///
/// # Errors
///
/// Returns an error for an invalid scenario.
pub fn closed_lambda2_second(table: &CoefficientTable, sc: &Scenario, kind: Lambda2Kind) -> Result<f64> {
    let (tau, u, v) = tau_uv(sc)?;
    match kind {
        Lambda2Kind::Heston | Lambda2Kind::ReciprocalHeston => {
            finite(lambda2_closed(table, tau, u, v), "second-order integral")
        }
        Lambda2Kind::Generic => quadrature::lambda_order(table, sc, 2, 32),
    }
}

/// The `d_y` term of the bracket (closed form).
///
/// # Errors
///
/// Returns an error for an invalid scenario or `sigma0 <= 0`.
pub fn closed_dy_term(table: &CoefficientTable, sc: &Scenario) -> Result<f64> {
    sc.validate()?;
    let bs = BsInputs::new(sc.t, sc.maturity, sc.x, sc.k, table.sigma0())?;
    finite(dy_closed(table, &bs), "d_y term")
}

/// The exponential term, by the closed-form integrand and by convolution.
///
/// # Errors
///
/// Returns an error for an invalid scenario or a failed convolution.
pub fn psi2_exp_term(table: &CoefficientTable, sc: &Scenario, cfg: &ExpansionConfig) -> Result<ExpTerm> {
    sc.validate()?;
    let cfg = ExpansionConfig {
        with_reference: true,
        ..*cfg
    };
    exp_term(table, sc, &cfg)
}

fn exp_term(table: &CoefficientTable, sc: &Scenario, cfg: &ExpansionConfig) -> Result<ExpTerm> {
    let rule = legendre(cfg.quad_order)?;
    let printed = exp_term_printed(table, sc, &rule);
    let convolution = if cfg.with_reference || cfg.exp_term_source == ExpTermSource::Convolution {
        Some(exp_term_convolution(table, sc, &rule, cfg.hermite_nodes)?)
    } else {
        None
    };
    Ok(ExpTerm {
        printed: finite(printed, "exponential term")?,
        convolution,
        source: cfg.exp_term_source,
    })
}

/// Time integrals use `t1 = T - r^2`, which removes the square-root endpoint
/// behaviour at `t1 = T`.
fn exp_term_printed(table: &CoefficientTable, sc: &Scenario, rule: &Rule) -> f64 {
    let tau = sc.tau();
    let s01 = table.get(Family::HalfSigmaSq).c01;
    let sig2 = table.sigma0().powi(2);
    let shift = sc.k - sc.x + 0.5 * sig2 * tau;
    let integral = rule.integrate(0.0, tau.sqrt(), |r| {
        let r2 = r * r;
        let span = 2.0 * tau - r2;
        2.0 * r2 * r2 / span.sqrt() * (2.0 * sc.k - shift * shift / (sig2 * span)).exp()
    });
    s01 * s01 / (2.0 * std::f64::consts::PI * sig2) * integral
}

fn exp_term_convolution(table: &CoefficientTable, sc: &Scenario, rule: &Rule, nodes: usize) -> Result<f64> {
    let tau = sc.tau();
    let s01 = table.get(Family::HalfSigmaSq).c01;
    let sigma0 = table.sigma0();
    let mut total = 0.0;
    for (r, w) in rule.mapped(0.0, tau.sqrt()) {
        let tau1 = r * r;
        let t1 = sc.maturity - tau1;
        let vol = sigma0 * tau1.sqrt();
        // (d_y zeta(t1))^2 = ((T - t1) (sigma^2/2)_{01} g(t1, x1))^2
        let f = |x1: f64, _y1: f64| {
            let dp = (x1 - sc.k) / vol + 0.5 * vol;
            let g = x1.exp() * norm_pdf(dp) / vol;
            let z = tau1 * s01 * g;
            z * z
        };
        let conv = gaussian_convolution(&f, table, sc.t, t1, sc.x, sc.y, nodes, false)?;
        total += w * 2.0 * r * conv;
    }
    Ok(total)
}

/// Quadrature counterparts of the closed forms, used for verification.
pub mod quadrature {
    use super::*;

    fn lambda_poly(table: &CoefficientTable, n: usize) -> Poly {
        Poly::family_order(table, Family::HalfLambdaSq, n)
    }

    /// `int_t^T (lambda^2/2)_n(X, Y) 1 dt1` by Gauss–Legendre.
    ///
    /// # Errors
    ///
    /// Returns an error for an invalid scenario or order.
    pub fn lambda_order(table: &CoefficientTable, sc: &Scenario, n: usize, order: usize) -> Result<f64> {
        let (_, u, v) = tau_uv(sc)?;
        let rule = legendre(order)?;
        let f = lambda_poly(table, n);
        let mut total = 0.0;
        for (t1, w) in rule.mapped(sc.t, sc.maturity) {
            total += w * semigroup_poly(table, sc.t, t1, false, &f)?.eval(u, v);
        }
        Ok(total)
    }

    /// Nested quadrature of the `G_1` / first-order `lambda^2/2` integral.
    ///
    /// # Errors
    ///
    /// Returns an error for an invalid scenario or order.
    pub fn second_order_cross(table: &CoefficientTable, sc: &Scenario, order: usize) -> Result<f64> {
        let (_, u, v) = tau_uv(sc)?;
        let rule = legendre(order)?;
        let f = lambda_poly(table, 1);
        let mut total = 0.0;
        for (t1, w1) in rule.mapped(sc.t, sc.maturity) {
            let mut inner = Poly::zero();
            for (t2, w2) in rule.mapped(t1, sc.maturity) {
                inner.add_assign_scaled(&semigroup_poly(table, sc.t, t2, false, &f)?, w2);
            }
            let g1 = build_g_from_pair(1, table, &build_xy(table, sc.t, t1, false)?, false)?;
            total += w1 * g1.apply_to_poly(&inner).eval(u, v);
        }
        Ok(total)
    }

    /// Nested quadrature of the `d_y` term built from the operator algebra.
    ///
    /// # Errors
    ///
    /// Returns an error for an invalid scenario or order.
    pub fn dy_term(table: &CoefficientTable, sc: &Scenario, order: usize) -> Result<f64> {
        let (_, u, v) = tau_uv(sc)?;
        let rule = legendre(order)?;
        let bs = BsInputs::new(sc.t, sc.maturity, sc.x, sc.k, table.sigma0())?;
        let dy = DiffOperator::derivative(0, 1)?;
        let l01 = table.get(Family::HalfLambdaSq).c01;
        let mut total = 0.0;
        for (t1, w1) in rule.mapped(sc.t, sc.maturity) {
            let mut inner = DiffOperator::zero();
            for (t2, w2) in rule.mapped(t1, sc.maturity) {
                let g1 = build_g_from_pair(1, table, &build_xy(table, sc.t, t2, false)?, false)?;
                inner.add_assign_scaled(&g1, w2);
            }
            let op = dy.compose(&inner)?;
            total += w1 * l01 * (sc.maturity - t1) * op.apply_to_pbs(&bs, u, v)?;
        }
        Ok(total)
    }
}

/// One closed form next to its quadrature counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCheck {
    pub name: &'static str,
    pub closed: f64,
    pub quadrature: f64,
}

impl ClosedFormCheck {
    /// `|closed - quadrature| / max(|closed|, |quadrature|)`, or the absolute
    /// gap when both are below `abs_floor`.
    pub fn relative_gap(&self, abs_floor: f64) -> f64 {
        let scale = self.closed.abs().max(self.quadrature.abs());
        let gap = (self.closed - self.quadrature).abs();
        if scale < abs_floor {
            gap
        } else {
            gap / scale
        }
    }
}

/// All five closed forms against quadrature at one scenario.
///
/// # Errors
///
/// Returns an error for an invalid scenario or order.
pub fn closed_form_checks(table: &CoefficientTable, sc: &Scenario, order: usize) -> Result<Vec<ClosedFormCheck>> {
    let l2q = quadrature::lambda_order(table, sc, 2, order)?;
    Ok(vec![
        ClosedFormCheck {
            name: "first_order",
            closed: closed_first_order(table, sc)?,
            quadrature: quadrature::lambda_order(table, sc, 1, order)?,
        },
        ClosedFormCheck {
            name: "second_order_cross",
            closed: closed_second_order_cross(table, sc)?,
            quadrature: quadrature::second_order_cross(table, sc, order)?,
        },
        ClosedFormCheck {
            name: "lambda2_heston",
            closed: closed_lambda2_second(table, sc, Lambda2Kind::Heston)?,
            quadrature: l2q,
        },
        ClosedFormCheck {
            name: "lambda2_reciprocal_heston",
            closed: closed_lambda2_second(table, sc, Lambda2Kind::ReciprocalHeston)?,
            quadrature: l2q,
        },
        ClosedFormCheck {
            name: "dy_term",
            closed: closed_dy_term(table, sc)?,
            quadrature: quadrature::dy_term(table, sc, order)?,
        },
    ])
}

const D1: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
const D2: [f64; 5] = [-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];

/// Eighth-order central first derivative.
fn stencil_d1(f: impl Fn(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (m, c) in D1.iter().enumerate() {
        let k = (m + 1) as f64;
        acc += c * (f(k * h)? - f(-k * h)?);
    }
    Ok(acc / h)
}

/// Eighth-order central second derivative.
fn stencil_d2(f: impl Fn(f64) -> Result<f64>, h: f64, f0: f64) -> Result<f64> {
    let mut acc = D2[0] * f0;
    for (m, c) in D2.iter().enumerate().skip(1) {
        let k = m as f64;
        acc += c * (f(k * h)? + f(-k * h)?);
    }
    Ok(acc / (h * h))
}

/// Residual of the truncated series in the `eps`-scaled `psi` equation.
///
/// Order-1 Taylor coefficients are multiplied by `eps` and order-2 ones by
/// `eps^2`; the coefficients are the truncated Taylor polynomials. The series
/// `psi_0 + eps psi_1 + eps^2 psi_2` is inserted and the residual is formed
/// with finite differences of `psi_1`, `psi_2`; the `psi_0` part is exact.
/// Returns, for every `eps`, the largest absolute residual over the points
/// `(x_bar + du, y_bar + dv)`.
///
/// # Errors
///
/// Returns an error for an invalid scenario or a failed series evaluation.
pub fn epsilon_residual(
    table: &CoefficientTable,
    sc: &Scenario,
    eps: &[f64],
    offsets: &[(f64, f64)],
    cfg: &ExpansionConfig,
) -> Result<Vec<f64>> {
    sc.validate()?;
    let cfg = ExpansionConfig {
        with_reference: false,
        ..*cfg
    };
    let tau = sc.tau();
    let ht = tau / 64.0;
    let hx = 0.05 * table.sigma0() * tau.sqrt();
    let hy = 0.01 * table.point.y_bar.abs().max(0.01);
    // expansions at the time stencil, index 0..=8 <-> t + (i - 4) ht
    let times: Vec<f64> = (0..9).map(|i| sc.t + (i as f64 - 4.0) * ht).collect();
    let exps: Vec<ExpansionAt> = times
        .iter()
        .map(|&t| ExpansionAt::new(table, t, sc.maturity, cfg))
        .collect::<Result<_>>()?;
    let gn = sc.gamma * sc.nu;
    let rho = table.rho;
    let fam = |f: Family| table.get(f);
    let mut worst = vec![0.0f64; eps.len()];
    for &(du, dv) in offsets {
        let base = Scenario {
            x: table.point.x_bar + du,
            y: table.point.y_bar + dv,
            ..*sc
        };
        let eval = |it: usize, dx: f64, dy: f64| -> Result<(f64, f64)> {
            let s = Scenario {
                t: times[it],
                x: base.x + dx,
                y: base.y + dy,
                ..base
            };
            let p = exps[it].psi(&s)?;
            Ok((p.psi1, p.psi2))
        };
        let pick = |m: usize, r: (f64, f64)| if m == 1 { r.0 } else { r.1 };
        let (u, v) = (du, dv);
        let bs = BsInputs::new(sc.t, sc.maturity, base.x, sc.k, table.sigma0())?;
        let g = bs.x.exp() * norm_pdf(bs.d_plus()) / bs.total_vol();
        let center = eval(4, 0.0, 0.0)?;
        // derivatives of psi_m, m = 1, 2: [t, x, xx, y, yy, xy]
        let mut der = [[0.0; 6]; 2];
        for m in 1..=2 {
            let c = pick(m, center);
            let d = &mut der[m - 1];
            d[0] = stencil_d1(
                |h| {
                    let i = (4.0 + h / ht).round() as usize;
                    Ok(pick(m, eval(i, 0.0, 0.0)?))
                },
                ht,
            )?;
            d[1] = stencil_d1(|h| Ok(pick(m, eval(4, h, 0.0)?)), hx)?;
            d[2] = stencil_d2(|h| Ok(pick(m, eval(4, h, 0.0)?)), hx, c)?;
            // psi_m is a polynomial of degree <= 2 in y, so three points suffice
            let (yp, ym) = (pick(m, eval(4, 0.0, hy)?), pick(m, eval(4, 0.0, -hy)?));
            d[3] = (yp - ym) / (2.0 * hy);
            d[4] = (yp - 2.0 * c + ym) / (hy * hy);
            d[5] = stencil_d1(
                |h| {
                    let up = pick(m, eval(4, h, hy)?);
                    let dn = pick(m, eval(4, h, -hy)?);
                    Ok((up - dn) / (2.0 * hy))
                },
                hx,
            )?;
        }
        for (slot, &e) in worst.iter_mut().zip(eps) {
            let sc_fam = |f: Family| fam(f).eval_scaled(e, u, v);
            let (a, b, r, q) = (
                sc_fam(Family::HalfSigmaSq),
                sc_fam(Family::Drift),
                sc_fam(Family::Cross),
                sc_fam(Family::HalfBetaSq),
            );
            let s = fam(Family::HalfSigmaSq);
            let l = fam(Family::HalfLambdaSq);
            // psi_0 is y-free: the higher-order generator acts through g only
            let mut res = e * (s.eval_order(1, u, v) * (-gn * g) - l.eval_order(1, u, v))
                + e * e * (s.eval_order(2, u, v) * (-gn * g) - l.eval_order(2, u, v));
            let mut dy_total = 0.0;
            for m in 1..=2 {
                let d = der[m - 1];
                let w = e.powi(m as i32);
                res += w * (d[0] + a * (d[2] - d[1]) + b * d[3] + r * d[5] + q * d[4]);
                dy_total += w * d[3];
            }
            res += (1.0 - rho * rho) * q * dy_total * dy_total;
            *slot = slot.max(res.abs());
        }
    }
    Ok(worst)
}
