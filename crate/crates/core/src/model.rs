//! Local stochastic volatility models and their Taylor coefficient tables.
//!
//! A model is the tuple `(mu, sigma, c, beta, rho, omega)` of functions of the
//! log price `x` and the volatility factor `y`:
//!
//! ```text
//! dX = (mu - sigma^2 / 2) dt + sigma dW^X
//! dY = c dt + beta dW^Y,    d<W^X, W^Y> = rho dt
//! ```
//!
//! Everything downstream only sees the six coefficient families listed in
//! [`Family`], expanded to second order around an [`ExpansionPoint`].

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{finite, invalid, IsrError, Result};

/// A coefficient function of `(x, y)`.
pub type CoefFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Hand-derived partials of a family at `(x, y)`, or `None` to fall back to
/// finite differences.
pub type DerivFn = Arc<dyn Fn(Family, f64, f64) -> Option<Partials> + Send + Sync>;

/// The coefficient families that enter the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    /// `sigma^2 / 2`, multiplies `d_xx - d_x`.
    HalfSigmaSq,
    /// `c - rho beta lambda`, the y-drift under the optimal-investment measure.
    Drift,
    /// `rho sigma beta`, multiplies `d_x d_y`.
    Cross,
    /// `beta^2 / 2`, multiplies `d_yy`.
    HalfBetaSq,
    /// `lambda^2 / 2`, the source term.
    HalfLambdaSq,
    /// `c - rho beta lambda - sqrt(1 - rho^2) beta omega`, the pricing y-drift.
    HattedDrift,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::HalfSigmaSq,
        Family::Drift,
        Family::Cross,
        Family::HalfBetaSq,
        Family::HalfLambdaSq,
        Family::HattedDrift,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::HalfSigmaSq => "half_sigma_sq",
            Family::Drift => "drift",
            Family::Cross => "cross",
            Family::HalfBetaSq => "half_beta_sq",
            Family::HalfLambdaSq => "half_lambda_sq",
            Family::HattedDrift => "hatted_drift",
        };
        f.write_str(s)
    }
}

/// Value and partial derivatives up to second order of a function of `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Partials {
    pub f: f64,
    pub fx: f64,
    pub fy: f64,
    pub fxx: f64,
    pub fxy: f64,
    pub fyy: f64,
}

impl Partials {
    /// Partials of a function of `y` alone.
    pub fn of_y(f: f64, fy: f64, fyy: f64) -> Self {
        Partials {
            f,
            fy,
            fyy,
            ..Default::default()
        }
    }

    /// Partials of a constant.
    pub fn constant(f: f64) -> Self {
        Partials {
            f,
            ..Default::default()
        }
    }
}

/// The anchor `(x_bar, y_bar)` of the Taylor expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPoint {
    pub x_bar: f64,
    pub y_bar: f64,
}

impl ExpansionPoint {
    pub fn new(x_bar: f64, y_bar: f64) -> Self {
        ExpansionPoint { x_bar, y_bar }
    }
}

/// How [`taylor_coeffs`] obtains partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Hand-derived partials where the model provides them, finite
    /// differences otherwise.
    #[default]
    Analytic,
    /// Central differences for every family.
    FiniteDifference,
}

/// Which preset (if any) a [`ModelSpec`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BlackScholes,
    Heston,
    ReciprocalHeston,
    Custom,
}

/// Heston parameters with the market-price-of-risk choice used in the
/// numerical examples: `lambda(y) = -sqrt(y)/2 + sqrt(theta)/3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub delta: f64,
    pub rho: f64,
}

impl HestonParams {
    /// The standard Heston parameter set.
    pub fn standard() -> Self {
        HestonParams {
            kappa: 1.15,
            theta: 0.04,
            delta: 0.2,
            rho: -0.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("delta", self.delta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, v, "must be positive"));
            }
        }
        check_rho(self.rho)
    }
}

/// Reciprocal Heston parameters: `1/Y` is a CIR process and `mu` is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReciprocalHestonParams {
    pub mu: f64,
    pub a: f64,
    pub b: f64,
    pub kappa: f64,
    pub rho: f64,
    /// Use `1 - rho^2` instead of `(1 - rho)^2` in the drift denominator.
    #[serde(default)]
    pub recip_heston_rho_sq: bool,
}

impl ReciprocalHestonParams {
    /// The standard reciprocal Heston parameter set.
    pub fn standard() -> Self {
        ReciprocalHestonParams {
            mu: 0.05,
            a: 5.0,
            b: 0.04,
            kappa: 0.01,
            rho: 0.2,
            recip_heston_rho_sq: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("a", self.a), ("b", self.b), ("kappa", self.kappa)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, v, "must be positive"));
            }
        }
        check_rho(self.rho)?;
        if 2.0 * self.a * self.kappa < self.b * self.b {
            return Err(invalid("b", self.b, "Feller condition 2 a kappa >= b^2 fails"));
        }
        Ok(())
    }

    /// Whether `2 a kappa >= b^2`.
    pub fn feller(&self) -> bool {
        2.0 * self.a * self.kappa >= self.b * self.b
    }

    fn drift_denominator(&self) -> f64 {
        if self.recip_heston_rho_sq {
            1.0 - self.rho * self.rho
        } else {
            (1.0 - self.rho) * (1.0 - self.rho)
        }
    }

    /// Coefficient `A` in `c(y) = a y + A y^2`.
    pub fn quadratic_drift(&self) -> f64 {
        2.0 * (self.b * self.b - self.a * self.kappa)
            / (self.mu * self.mu * self.drift_denominator())
    }

    /// Coefficient `B` in `beta(y) = -B y^{3/2}`.
    pub fn vol_scale(&self) -> f64 {
        (2.0 / (1.0 - self.rho * self.rho)).sqrt() * self.b / self.mu
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(invalid("rho", rho, "correlation must satisfy |rho| < 1"))
    }
}

/// A local stochastic volatility model.
///
/// Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct ModelSpec {
    kind: ModelKind,
    mu: CoefFn,
    sigma: CoefFn,
    c: CoefFn,
    beta: CoefFn,
    rho: f64,
    omega: Option<CoefFn>,
    partials: Option<DerivFn>,
    positive_y: bool,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("kind", &self.kind)
            .field("rho", &self.rho)
            .field("omega", &self.omega.is_some())
            .field("analytic", &self.partials.is_some())
            .finish()
    }
}

impl ModelSpec {
    /// A user-defined model. All derivatives are taken by finite differences.
    ///
    /// # Errors
    ///
    /// Returns an error when `|rho| >= 1`.
    pub fn custom(mu: CoefFn, sigma: CoefFn, c: CoefFn, beta: CoefFn, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        Ok(ModelSpec {
            kind: ModelKind::Custom,
            mu,
            sigma,
            c,
            beta,
            rho,
            omega: None,
            partials: None,
            positive_y: false,
        })
    }

    /// Constant drift and volatility; the volatility factor is inert.
    ///
    /// # Errors
    ///
    /// Returns an error when `sigma <= 0`.
    pub fn black_scholes(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", sigma, "must be positive"));
        }
        finite(mu, "black_scholes mu")?;
        let lambda = mu / sigma;
        let partials: DerivFn = Arc::new(move |fam, _, _| {
            Some(Partials::constant(match fam {
                Family::HalfSigmaSq => 0.5 * sigma * sigma,
                Family::HalfLambdaSq => 0.5 * lambda * lambda,
                _ => 0.0,
            }))
        });
        Ok(ModelSpec {
            kind: ModelKind::BlackScholes,
            mu: Arc::new(move |_, _| mu),
            sigma: Arc::new(move |_, _| sigma),
            c: Arc::new(|_, _| 0.0),
            beta: Arc::new(|_, _| 0.0),
            rho: 0.0,
            omega: None,
            partials: Some(partials),
            positive_y: false,
        })
    }

    /// The Heston model with `lambda(y) = -sqrt(y)/2 + sqrt(theta)/3`.
    ///
    /// # Errors
    ///
    /// Returns an error when a parameter is out of range.
    pub fn heston(p: HestonParams) -> Result<Self> {
        p.validate()?;
        let HestonParams {
            kappa,
            theta,
            delta,
            rho,
        } = p;
        let lam = move |y: f64| -y.sqrt() / 2.0 + theta.sqrt() / 3.0;
        let partials: DerivFn = Arc::new(move |fam, _, y| {
            let l = lam(y);
            let l1 = -0.25 / y.sqrt();
            let l2 = 0.125 / (y * y.sqrt());
            match fam {
                Family::HalfSigmaSq => Some(Partials::of_y(0.5 * y, 0.5, 0.0)),
                Family::Drift | Family::HattedDrift => {
                    Some(Partials::of_y(kappa * (theta - y), -kappa, 0.0))
                }
                Family::Cross => Some(Partials::of_y(rho * delta * y, rho * delta, 0.0)),
                Family::HalfBetaSq => {
                    Some(Partials::of_y(0.5 * delta * delta * y, 0.5 * delta * delta, 0.0))
                }
                Family::HalfLambdaSq => Some(Partials::of_y(0.5 * l * l, l * l1, l1 * l1 + l * l2)),
            }
        });
        Ok(ModelSpec {
            kind: ModelKind::Heston,
            mu: Arc::new(move |_, y| lam(y) * y.sqrt()),
            sigma: Arc::new(|_, y| y.sqrt()),
            c: Arc::new(move |_, y| kappa * (theta - y) + rho * delta * lam(y) * y.sqrt()),
            beta: Arc::new(move |_, y| delta * y.sqrt()),
            rho,
            omega: None,
            partials: Some(partials),
            positive_y: true,
        })
    }

    /// The reciprocal Heston model: `sigma = sqrt(y)`, constant `mu`,
    /// `c = a y + A y^2`, `beta = -B y^{3/2}`.
    ///
    /// # Errors
    ///
    /// Returns an error when a parameter is out of range or the Feller
    /// condition fails.
    pub fn reciprocal_heston(p: ReciprocalHestonParams) -> Result<Self> {
        p.validate()?;
        let ReciprocalHestonParams { mu, a, rho, .. } = p;
        let qa = p.quadratic_drift();
        let vb = p.vol_scale();
        let partials: DerivFn = Arc::new(move |fam, _, y| {
            Some(match fam {
                Family::HalfSigmaSq => Partials::of_y(0.5 * y, 0.5, 0.0),
                // c - rho beta lambda = a y + A y^2 + rho B mu y
                Family::Drift | Family::HattedDrift => {
                    let lin = a + rho * vb * mu;
                    Partials::of_y(lin * y + qa * y * y, lin + 2.0 * qa * y, 2.0 * qa)
                }
                Family::Cross => {
                    Partials::of_y(-rho * vb * y * y, -2.0 * rho * vb * y, -2.0 * rho * vb)
                }
                Family::HalfBetaSq => {
                    let b2 = vb * vb;
                    Partials::of_y(0.5 * b2 * y * y * y, 1.5 * b2 * y * y, 3.0 * b2 * y)
                }
                Family::HalfLambdaSq => {
                    let m2 = mu * mu;
                    Partials::of_y(0.5 * m2 / y, -0.5 * m2 / (y * y), m2 / (y * y * y))
                }
            })
        });
        Ok(ModelSpec {
            kind: ModelKind::ReciprocalHeston,
            mu: Arc::new(move |_, _| mu),
            sigma: Arc::new(|_, y| y.sqrt()),
            c: Arc::new(move |_, y| a * y + qa * y * y),
            beta: Arc::new(move |_, y| -vb * y * y.sqrt()),
            rho,
            omega: None,
            partials: Some(partials),
            positive_y: true,
        })
    }

    /// Replaces the market price of volatility risk (default zero).
    ///
    /// Hand-derived partials of the hatted drift are dropped, so that family
    /// falls back to finite differences.
    pub fn with_omega(mut self, omega: CoefFn) -> Self {
        self.omega = Some(omega);
        if let Some(p) = self.partials.take() {
            self.partials = Some(Arc::new(move |fam, x, y| {
                if fam == Family::HattedDrift {
                    None
                } else {
                    p(fam, x, y)
                }
            }));
        }
        self
    }

    /// Requires `y > 0` wherever the model is evaluated.
    pub fn with_positive_y(mut self, positive: bool) -> Self {
        self.positive_y = positive;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn has_omega(&self) -> bool {
        self.omega.is_some()
    }

    /// Whether the state domain is `y > 0`.
    pub fn positive_y(&self) -> bool {
        self.positive_y
    }

    pub fn mu(&self, x: f64, y: f64) -> f64 {
        (self.mu)(x, y)
    }

    pub fn sigma(&self, x: f64, y: f64) -> f64 {
        (self.sigma)(x, y)
    }

    pub fn c(&self, x: f64, y: f64) -> f64 {
        (self.c)(x, y)
    }

    pub fn beta(&self, x: f64, y: f64) -> f64 {
        (self.beta)(x, y)
    }

    pub fn omega(&self, x: f64, y: f64) -> f64 {
        self.omega.as_ref().map_or(0.0, |o| o(x, y))
    }

    /// The instantaneous Sharpe ratio `mu / sigma`.
    pub fn lambda(&self, x: f64, y: f64) -> f64 {
        self.mu(x, y) / self.sigma(x, y)
    }

    /// Checks that `(x, y)` lies in the model domain.
    ///
    /// # Errors
    ///
    /// Returns a domain error for `y <= 0` on square-root models.
    pub fn check_domain(&self, x: f64, y: f64) -> Result<()> {
        if !x.is_finite() || !y.is_finite() {
            return Err(IsrError::Domain {
                x,
                y,
                reason: "state is not finite",
            });
        }
        if self.positive_y && y <= 0.0 {
            return Err(IsrError::Domain {
                x,
                y,
                reason: "the volatility factor must be positive",
            });
        }
        Ok(())
    }

    /// Evaluates a coefficient family at `(x, y)`.
    pub fn family(&self, fam: Family, x: f64, y: f64) -> f64 {
        match fam {
            Family::HalfSigmaSq => {
                let s = self.sigma(x, y);
                0.5 * s * s
            }
            Family::Drift => self.c(x, y) - self.rho * self.beta(x, y) * self.lambda(x, y),
            Family::Cross => self.rho * self.sigma(x, y) * self.beta(x, y),
            Family::HalfBetaSq => {
                let b = self.beta(x, y);
                0.5 * b * b
            }
            Family::HalfLambdaSq => {
                let l = self.lambda(x, y);
                0.5 * l * l
            }
            Family::HattedDrift => match &self.omega {
                None => self.family(Family::Drift, x, y),
                Some(o) => {
                    self.family(Family::Drift, x, y)
                        - (1.0 - self.rho * self.rho).sqrt() * self.beta(x, y) * o(x, y)
                }
            },
        }
    }

    fn fd_partials(&self, fam: Family, x: f64, y: f64) -> Partials {
        let hx = fd_step(x);
        let hy = fd_step(y);
        let f = |dx: f64, dy: f64| self.family(fam, x + dx, y + dy);
        let f0 = f(0.0, 0.0);
        let (fxp, fxm) = (f(hx, 0.0), f(-hx, 0.0));
        let (fyp, fym) = (f(0.0, hy), f(0.0, -hy));
        Partials {
            f: f0,
            fx: (fxp - fxm) / (2.0 * hx),
            fy: (fyp - fym) / (2.0 * hy),
            fxx: (fxp - 2.0 * f0 + fxm) / (hx * hx),
            fyy: (fyp - 2.0 * f0 + fym) / (hy * hy),
            fxy: (f(hx, hy) - f(hx, -hy) - f(-hx, hy) + f(-hx, -hy)) / (4.0 * hx * hy),
        }
    }
}

/// Finite-difference step `max(1e-5, 1e-5 |anchor|)`.
pub fn fd_step(anchor: f64) -> f64 {
    (1e-5 * anchor.abs()).max(1e-5)
}

/// The six Taylor coefficients `chi_{n-k,k}` of one family, `n <= 2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Coeffs {
    pub c00: f64,
    pub c10: f64,
    pub c01: f64,
    pub c20: f64,
    pub c11: f64,
    pub c02: f64,
}

impl Coeffs {
    fn from_partials(p: Partials) -> Self {
        Coeffs {
            c00: p.f,
            c10: p.fx,
            c01: p.fy,
            c20: 0.5 * p.fxx,
            c11: p.fxy,
            c02: 0.5 * p.fyy,
        }
    }

    /// Coefficients of the homogeneous order-`n` part as `(i, j, value)` with
    /// `i + j = n`.
    pub fn order(&self, n: usize) -> Vec<(u8, u8, f64)> {
        match n {
            0 => vec![(0, 0, self.c00)],
            1 => vec![(1, 0, self.c10), (0, 1, self.c01)],
            2 => vec![(2, 0, self.c20), (1, 1, self.c11), (0, 2, self.c02)],
            _ => Vec::new(),
        }
    }

    /// The order-`n` part evaluated at centred coordinates `(u, v)`.
    pub fn eval_order(&self, n: usize, u: f64, v: f64) -> f64 {
        self.order(n)
            .into_iter()
            .map(|(i, j, c)| c * u.powi(i as i32) * v.powi(j as i32))
            .sum()
    }

    /// The second-order Taylor polynomial at `(u, v)` with order `n` scaled by
    /// `eps^n`.
    pub fn eval_scaled(&self, eps: f64, u: f64, v: f64) -> f64 {
        self.eval_order(0, u, v)
            + eps * self.eval_order(1, u, v)
            + eps * eps * self.eval_order(2, u, v)
    }

    fn as_array(&self) -> [f64; 6] {
        [self.c00, self.c10, self.c01, self.c20, self.c11, self.c02]
    }
}

/// Taylor coefficients of every family at an expansion point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub point: ExpansionPoint,
    pub rho: f64,
    families: [Coeffs; 6],
}

impl CoefficientTable {
    /// Builds a table directly from coefficients, in [`Family::ALL`] order.
    pub fn from_coeffs(point: ExpansionPoint, rho: f64, families: [Coeffs; 6]) -> Self {
        CoefficientTable {
            point,
            rho,
            families,
        }
    }

    pub fn get(&self, fam: Family) -> &Coeffs {
        &self.families[fam.index()]
    }

    /// Black–Scholes volatility `sqrt(2 (sigma^2/2)_{00})`.
    pub fn sigma0(&self) -> f64 {
        (2.0 * self.get(Family::HalfSigmaSq).c00).sqrt()
    }

    /// Whether the pricing drift differs from the investment drift.
    pub fn hatted_differs(&self) -> bool {
        self.get(Family::HattedDrift) != self.get(Family::Drift)
    }

    /// Largest coefficient magnitude over all families and orders.
    pub fn max_abs(&self) -> f64 {
        self.families
            .iter()
            .flat_map(|c| c.as_array())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Computes the Taylor table of `model` at `point`.
///
/// # Errors
///
/// Returns a domain error when the anchor (or a finite-difference stencil
/// point) leaves the model domain, and a non-finite error when a coefficient
/// evaluates to NaN or infinity.
pub fn taylor_coeffs(
    model: &ModelSpec,
    point: ExpansionPoint,
    mode: DerivativeMode,
) -> Result<CoefficientTable> {
    let ExpansionPoint { x_bar, y_bar } = point;
    model.check_domain(x_bar, y_bar)?;
    if mode == DerivativeMode::FiniteDifference {
        model.check_domain(x_bar, y_bar - fd_step(y_bar))?;
    }
    let sigma = model.sigma(x_bar, y_bar);
    if !(sigma > 0.0) {
        return Err(IsrError::Domain {
            x: x_bar,
            y: y_bar,
            reason: "sigma must be positive at the expansion point",
        });
    }
    let mut families = [Coeffs::default(); 6];
    for fam in Family::ALL {
        let analytic = match (mode, &model.partials) {
            (DerivativeMode::Analytic, Some(p)) => p(fam, x_bar, y_bar),
            _ => None,
        };
        let partials = match analytic {
            Some(p) => p,
            None => {
                if matches!(mode, DerivativeMode::Analytic) {
                    model.check_domain(x_bar, y_bar - fd_step(y_bar))?;
                }
                model.fd_partials(fam, x_bar, y_bar)
            }
        };
        let coeffs = Coeffs::from_partials(partials);
        for v in coeffs.as_array() {
            finite(v, &format!("taylor coefficient of {fam}"))?;
        }
        families[fam.index()] = coeffs;
    }
    if model.omega.is_none() {
        families[Family::HattedDrift.index()] = families[Family::Drift.index()];
    }
    Ok(CoefficientTable {
        point,
        rho: model.rho,
        families,
    })
}
