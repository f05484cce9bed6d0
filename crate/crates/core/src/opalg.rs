//! Normal-ordered differential operators with polynomial coefficients.
//!
//! An operator is a finite sum of terms `c u^i v^j d_u^a d_v^b` in the centred
//! variables `u = x - x_bar`, `v = y - y_bar`, with monomials always written to
//! the left of derivatives. Products are brought back to this form with the
//! Leibniz rule
//!
//! ```text
//! d_u^a u^i = sum_k C(a, k) i!/(i-k)! u^{i-k} d_u^{a-k}
//! ```
//!
//! The frozen-coefficient semigroup acts on polynomials through the operators
//!
//! ```text
//! X(t, t1) = x + s (-a + 2a d_x + r d_y)
//! Y(t, t1) = y + s (b + 2q d_y + r d_x),      s = t1 - t
//! ```
//!
//! with `a = (sigma^2/2)_0`, `q = (beta^2/2)_0`, `r = (rho sigma beta)_0` and
//! `b` the zeroth-order y-drift, via `P0(t, t1) f = f(X, Y) 1`.

use std::collections::BTreeMap;
use std::fmt;

use crate::bskernel::{bs_derivatives, BsInputs, MAX_DX_ORDER};
use crate::error::{invalid, IsrError, Result};
use crate::model::{CoefficientTable, Family};

/// Largest total monomial degree `i + j` an operator may carry.
pub const MAX_MONOMIAL_DEGREE: u32 = 4;
/// Largest total derivative order `a + b` an operator may carry.
pub const MAX_DERIVATIVE_ORDER: u32 = 6;

/// One term `coeff u^i v^j d_u^a d_v^b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpTerm {
    pub coeff: f64,
    pub i: u8,
    pub j: u8,
    pub a: u8,
    pub b: u8,
}

impl OpTerm {
    pub fn new(coeff: f64, i: u8, j: u8, a: u8, b: u8) -> Self {
        OpTerm { coeff, i, j, a, b }
    }
}

type Key = (u8, u8, u8, u8);

/// A sum of normal-ordered terms with merged keys and no zero coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiffOperator {
    terms: BTreeMap<Key, f64>,
}

fn check_bounds(i: u8, j: u8, a: u8, b: u8) -> Result<()> {
    let deg = i as u32 + j as u32;
    if deg > MAX_MONOMIAL_DEGREE {
        return Err(IsrError::OperatorBound {
            what: "monomial degree",
            got: deg,
            max: MAX_MONOMIAL_DEGREE,
        });
    }
    let ord = a as u32 + b as u32;
    if ord > MAX_DERIVATIVE_ORDER {
        return Err(IsrError::OperatorBound {
            what: "derivative order",
            got: ord,
            max: MAX_DERIVATIVE_ORDER,
        });
    }
    Ok(())
}

/// Falling factorial `n (n-1) ... (n-k+1)`.
fn falling(n: impl Into<u16>, k: impl Into<u16>) -> f64 {
    let n = n.into();
    (0..k.into()).map(|m| (n - m) as f64).product()
}

fn binomial(n: u8, k: u8) -> f64 {
    falling(n, k) / falling(k, k)
}

impl DiffOperator {
    pub fn zero() -> Self {
        DiffOperator::default()
    }

    pub fn identity() -> Self {
        DiffOperator::constant(1.0)
    }

    pub fn constant(c: f64) -> Self {
        let mut op = DiffOperator::zero();
        op.push(c, 0, 0, 0, 0);
        op
    }

    /// Multiplication by `c u^i v^j`.
    ///
    /// # Errors
    ///
    /// Returns an error when the degree exceeds the cap.
    pub fn monomial(c: f64, i: u8, j: u8) -> Result<Self> {
        Self::from_terms([OpTerm::new(c, i, j, 0, 0)])
    }

    /// The derivative `d_u^a d_v^b`.
    ///
    /// # Errors
    ///
    /// Returns an error when the order exceeds the cap.
    pub fn derivative(a: u8, b: u8) -> Result<Self> {
        Self::from_terms([OpTerm::new(1.0, 0, 0, a, b)])
    }

    /// Builds an operator from terms in any order, merging equal keys.
    ///
    /// # Errors
    ///
    /// Returns an error when a term exceeds the degree or order caps.
    pub fn from_terms(terms: impl IntoIterator<Item = OpTerm>) -> Result<Self> {
        let mut op = DiffOperator::zero();
        for t in terms {
            check_bounds(t.i, t.j, t.a, t.b)?;
            op.push(t.coeff, t.i, t.j, t.a, t.b);
        }
        Ok(op)
    }

    fn push(&mut self, c: f64, i: u8, j: u8, a: u8, b: u8) {
        if c == 0.0 {
            return;
        }
        let key = (i, j, a, b);
        let entry = self.terms.entry(key).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&key);
        }
    }

    /// Terms in canonical order.
    pub fn terms(&self) -> Vec<OpTerm> {
        self.terms
            .iter()
            .map(|(&(i, j, a, b), &c)| OpTerm::new(c, i, j, a, b))
            .collect()
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of `u^i v^j d_u^a d_v^b`.
    pub fn coeff(&self, i: u8, j: u8, a: u8, b: u8) -> f64 {
        self.terms.get(&(i, j, a, b)).copied().unwrap_or(0.0)
    }

    pub fn max_derivative_order(&self) -> u32 {
        self.terms
            .keys()
            .map(|&(_, _, a, b)| a as u32 + b as u32)
            .max()
            .unwrap_or(0)
    }

    /// Largest pure x-derivative order present in any term.
    pub fn max_x_order(&self) -> u8 {
        self.terms.keys().map(|k| k.2).max().unwrap_or(0)
    }

    pub fn add(&self, other: &DiffOperator) -> DiffOperator {
        let mut out = self.clone();
        out.add_assign_scaled(other, 1.0);
        out
    }

    pub fn sub(&self, other: &DiffOperator) -> DiffOperator {
        let mut out = self.clone();
        out.add_assign_scaled(other, -1.0);
        out
    }

    pub fn scale(&self, c: f64) -> DiffOperator {
        let mut out = DiffOperator::zero();
        out.add_assign_scaled(self, c);
        out
    }

    /// `self += c * other`.
    pub fn add_assign_scaled(&mut self, other: &DiffOperator, c: f64) {
        for (&(i, j, a, b), &v) in &other.terms {
            self.push(c * v, i, j, a, b);
        }
    }

    /// The normal-ordered product `self ∘ other`.
    ///
    /// # Errors
    ///
    /// Returns an error when the product exceeds the degree or order caps.
    pub fn compose(&self, other: &DiffOperator) -> Result<DiffOperator> {
        let mut out = DiffOperator::zero();
        for (&(i1, j1, a1, b1), &c1) in &self.terms {
            for (&(i2, j2, a2, b2), &c2) in &other.terms {
                for k in 0..=a1.min(i2) {
                    let ck = binomial(a1, k) * falling(i2, k);
                    for l in 0..=b1.min(j2) {
                        let cl = binomial(b1, l) * falling(j2, l);
                        let (i, j) = (i1 + i2 - k, j1 + j2 - l);
                        let (a, b) = (a1 + a2 - k, b1 + b2 - l);
                        check_bounds(i, j, a, b)?;
                        out.push(c1 * c2 * ck * cl, i, j, a, b);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `self^n` under composition.
    ///
    /// # Errors
    ///
    /// Returns an error when a power exceeds the caps.
    pub fn pow(&self, n: u32) -> Result<DiffOperator> {
        let mut out = DiffOperator::identity();
        for _ in 0..n {
            out = out.compose(self)?;
        }
        Ok(out)
    }

    /// `self(f)` for a polynomial `f` in the centred variables.
    pub fn apply_to_poly(&self, f: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (&(i, j, a, b), &c) in &self.terms {
            for (&(p, q), &fc) in &f.terms {
                if u16::from(a) > p || u16::from(b) > q {
                    continue;
                }
                let v = c * fc * falling(p, a) * falling(q, b);
                out.push(v, i as u16 + p - a as u16, j as u16 + q - b as u16);
            }
        }
        out
    }

    /// `self(p^BS)` at the log spot of `bs`, where `u`, `v` are the centred
    /// coordinates of that point. Terms with a y-derivative vanish.
    ///
    /// # Errors
    ///
    /// Returns an error for invalid inputs or an x-derivative order above 6.
    pub fn apply_to_pbs(&self, bs: &BsInputs, u: f64, v: f64) -> Result<f64> {
        if self.is_zero() {
            return Ok(0.0);
        }
        let max_a = self.max_x_order() as usize;
        if max_a > MAX_DX_ORDER {
            return Err(IsrError::OperatorBound {
                what: "x-derivative order",
                got: max_a as u32,
                max: MAX_DX_ORDER as u32,
            });
        }
        let d = bs_derivatives(bs, max_a)?;
        Ok(self.apply_to_derivatives(&d, u, v))
    }

    /// Applies the operator to a y-free function whose x-derivatives at the
    /// evaluation point are `dx[0], dx[1], ...`.
    pub fn apply_to_derivatives(&self, dx: &[f64], u: f64, v: f64) -> f64 {
        self.terms
            .iter()
            .filter(|(k, _)| k.3 == 0)
            .map(|(&(i, j, a, _), &c)| c * u.powi(i as i32) * v.powi(j as i32) * dx[a as usize])
            .sum()
    }

    /// Sums the coefficients of each derivative at the point `(u, v)`.
    pub fn collapse(&self, u: f64, v: f64) -> BTreeMap<(u8, u8), f64> {
        let mut out = BTreeMap::new();
        for (&(i, j, a, b), &c) in &self.terms {
            *out.entry((a, b)).or_insert(0.0) += c * u.powi(i as i32) * v.powi(j as i32);
        }
        out
    }
}

impl fmt::Display for DiffOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(&(i, j, a, b), c)| format!("{c:e}*u^{i}v^{j}Dx^{a}Dy^{b}"))
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

/// A polynomial in the centred variables `u = x - x_bar`, `v = y - y_bar`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    terms: BTreeMap<(u16, u16), f64>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn one() -> Self {
        Poly::monomial(1.0, 0, 0)
    }

    pub fn monomial(c: f64, p: u16, q: u16) -> Self {
        let mut out = Poly::zero();
        out.push(c, p, q);
        out
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (f64, u16, u16)>) -> Self {
        let mut out = Poly::zero();
        for (c, p, q) in terms {
            out.push(c, p, q);
        }
        out
    }

    fn push(&mut self, c: f64, p: u16, q: u16) {
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry((p, q)).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&(p, q));
        }
    }

    /// `(coeff, p, q)` for each monomial `coeff u^p v^q`.
    pub fn terms(&self) -> Vec<(f64, u16, u16)> {
        self.terms.iter().map(|(&(p, q), &c)| (c, p, q)).collect()
    }

    pub fn coeff(&self, p: u16, q: u16) -> f64 {
        self.terms.get(&(p, q)).copied().unwrap_or(0.0)
    }

    pub fn degree(&self) -> u16 {
        self.terms.keys().map(|&(p, q)| p + q).max().unwrap_or(0)
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&(p, q), &c)| c * u.powi(p as i32) * v.powi(q as i32))
            .sum()
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        out.add_assign_scaled(other, 1.0);
        out
    }

    pub fn add_assign_scaled(&mut self, other: &Poly, c: f64) {
        for (&(p, q), &v) in &other.terms {
            self.push(c * v, p, q);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The order-`n` Taylor part of a coefficient family as a polynomial.
    pub fn family_order(table: &CoefficientTable, fam: Family, n: usize) -> Poly {
        Poly::from_terms(
            table
                .get(fam)
                .order(n)
                .into_iter()
                .map(|(i, j, c)| (c, i as u16, j as u16)),
        )
    }
}

/// The operator pair `(X - x_bar, Y - y_bar)` at elapsed time `s = t1 - t`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorPair {
    pub x_centered: DiffOperator,
    pub y_centered: DiffOperator,
    pub x_bar: f64,
    pub y_bar: f64,
}

impl OperatorPair {
    /// `X` as an operator on functions of the absolute coordinates.
    pub fn x_op(&self) -> DiffOperator {
        self.x_centered.add(&DiffOperator::constant(self.x_bar))
    }

    /// `Y` as an operator on functions of the absolute coordinates.
    pub fn y_op(&self) -> DiffOperator {
        self.y_centered.add(&DiffOperator::constant(self.y_bar))
    }

    /// `(X - x_bar)^p (Y - y_bar)^q`; the two factors commute.
    ///
    /// # Errors
    ///
    /// Returns an error when the caps are exceeded.
    pub fn monomial(&self, p: u32, q: u32) -> Result<DiffOperator> {
        self.x_centered.pow(p)?.compose(&self.y_centered.pow(q)?)
    }

    /// `f(X, Y)` for a centred polynomial `f`.
    ///
    /// # Errors
    ///
    /// Returns an error when the caps are exceeded.
    pub fn substitute(&self, f: &Poly) -> Result<DiffOperator> {
        let mut out = DiffOperator::zero();
        for (c, p, q) in f.terms() {
            out.add_assign_scaled(&self.monomial(p as u32, q as u32)?, c);
        }
        Ok(out)
    }
}

fn elapsed(t: f64, t1: f64) -> Result<f64> {
    if t1 < t {
        return Err(invalid("t1", t1, "must not precede t"));
    }
    Ok(t1 - t)
}

fn y_drift_family(hatted: bool) -> Family {
    if hatted {
        Family::HattedDrift
    } else {
        Family::Drift
    }
}

/// Builds `X(t, t1) - x_bar` and `Y(t, t1) - y_bar`.
///
/// # Errors
///
/// Returns an error when `t1 < t`.
pub fn build_xy(table: &CoefficientTable, t: f64, t1: f64, hatted: bool) -> Result<OperatorPair> {
    let s = elapsed(t, t1)?;
    let a = table.get(Family::HalfSigmaSq).c00;
    let q = table.get(Family::HalfBetaSq).c00;
    let r = table.get(Family::Cross).c00;
    let b = table.get(y_drift_family(hatted)).c00;
    let x_centered = DiffOperator::from_terms([
        OpTerm::new(1.0, 1, 0, 0, 0),
        OpTerm::new(-s * a, 0, 0, 0, 0),
        OpTerm::new(2.0 * s * a, 0, 0, 1, 0),
        OpTerm::new(s * r, 0, 0, 0, 1),
    ])?;
    let y_centered = DiffOperator::from_terms([
        OpTerm::new(1.0, 0, 1, 0, 0),
        OpTerm::new(s * b, 0, 0, 0, 0),
        OpTerm::new(2.0 * s * q, 0, 0, 0, 1),
        OpTerm::new(s * r, 0, 0, 1, 0),
    ])?;
    Ok(OperatorPair {
        x_centered,
        y_centered,
        x_bar: table.point.x_bar,
        y_bar: table.point.y_bar,
    })
}

/// The differential operator each family multiplies in the generator.
fn family_derivative(fam: Family) -> Option<DiffOperator> {
    let terms: Vec<OpTerm> = match fam {
        Family::HalfSigmaSq => vec![OpTerm::new(1.0, 0, 0, 2, 0), OpTerm::new(-1.0, 0, 0, 1, 0)],
        Family::Drift | Family::HattedDrift => vec![OpTerm::new(1.0, 0, 0, 0, 1)],
        Family::Cross => vec![OpTerm::new(1.0, 0, 0, 1, 1)],
        Family::HalfBetaSq => vec![OpTerm::new(1.0, 0, 0, 0, 2)],
        Family::HalfLambdaSq => return None,
    };
    Some(DiffOperator::from_terms(terms).expect("within caps"))
}

/// Families of the generator, with the y-drift chosen by `hatted`.
fn generator_families(hatted: bool) -> [Family; 4] {
    [
        Family::HalfSigmaSq,
        y_drift_family(hatted),
        Family::Cross,
        Family::HalfBetaSq,
    ]
}

/// The order-`n` generator `A_n` with coefficients frozen as polynomials in
/// `(u, v)`: `sum_fam chi_n(u, v) D_fam`.
///
/// # Errors
///
/// Returns an error for `n > 2`.
pub fn build_a(n: usize, table: &CoefficientTable, hatted: bool) -> Result<DiffOperator> {
    if n > 2 {
        return Err(IsrError::Unsupported(format!("generator order {n}")));
    }
    let mut out = DiffOperator::zero();
    for fam in generator_families(hatted) {
        let d = family_derivative(fam).expect("generator family");
        for (i, j, c) in table.get(fam).order(n) {
            out.add_assign_scaled(&DiffOperator::monomial(1.0, i, j)?.compose(&d)?, c);
        }
    }
    Ok(out)
}

/// `G_n(t, t1) = A_n(X(t, t1), Y(t, t1))`, with every monomial
/// `(x - x_bar)^{n-k} (y - y_bar)^k` replaced by its operator counterpart.
///
/// # Errors
///
/// Returns an error for `n` outside `{1, 2}` or `t1 < t`.
pub fn build_g(n: usize, table: &CoefficientTable, t: f64, t1: f64, hatted: bool) -> Result<DiffOperator> {
    if !(1..=2).contains(&n) {
        return Err(IsrError::Unsupported(format!("operator G_{n}")));
    }
    let pair = build_xy(table, t, t1, hatted)?;
    build_g_from_pair(n, table, &pair, hatted)
}

pub(crate) fn build_g_from_pair(
    n: usize,
    table: &CoefficientTable,
    pair: &OperatorPair,
    hatted: bool,
) -> Result<DiffOperator> {
    let mut out = DiffOperator::zero();
    for fam in generator_families(hatted) {
        let d = family_derivative(fam).expect("generator family");
        for (i, j, c) in table.get(fam).order(n) {
            if c == 0.0 {
                continue;
            }
            let m = pair.monomial(i as u32, j as u32)?;
            out.add_assign_scaled(&m.compose(&d)?, c);
        }
    }
    Ok(out)
}

/// `P0(t, t1) f = f(X(t, t1), Y(t, t1)) 1` for a centred polynomial `f`.
///
/// # Errors
///
/// Returns an error when `t1 < t` or the caps are exceeded.
pub fn semigroup_poly(table: &CoefficientTable, t: f64, t1: f64, hatted: bool, f: &Poly) -> Result<Poly> {
    let pair = build_xy(table, t, t1, hatted)?;
    Ok(pair.substitute(f)?.apply_to_poly(&Poly::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bskernel::gamma_kernel;
    use crate::model::{taylor_coeffs, DerivativeMode, ExpansionPoint, HestonParams, ModelSpec};
    use crate::oracle::gaussian_convolution;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn heston_table() -> CoefficientTable {
        let m = ModelSpec::heston(HestonParams::standard()).unwrap();
        taylor_coeffs(&m, ExpansionPoint::new(100f64.ln(), 0.04), DerivativeMode::Analytic).unwrap()
    }

    fn monomials(max_deg: u16) -> Vec<Poly> {
        let mut out = Vec::new();
        for p in 0..=max_deg {
            for q in 0..=(max_deg - p) {
                out.push(Poly::monomial(1.0, p, q));
            }
        }
        out
    }

    fn close(a: &Poly, b: &Poly, tol: f64) -> bool {
        let mut keys: Vec<(u16, u16)> = a.terms().iter().map(|t| (t.1, t.2)).collect();
        keys.extend(b.terms().iter().map(|t| (t.1, t.2)));
        keys.iter().all(|&(p, q)| {
            let (x, y) = (a.coeff(p, q), b.coeff(p, q));
            (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
        })
    }

    #[test]
    fn canonical_commutator() {
        let d = DiffOperator::derivative(1, 0).unwrap();
        let u = DiffOperator::monomial(1.0, 1, 0).unwrap();
        let expected = DiffOperator::from_terms([OpTerm::new(1.0, 1, 0, 1, 0), OpTerm::new(1.0, 0, 0, 0, 0)]).unwrap();
        assert_eq!(d.compose(&u).unwrap(), expected);
        let g = build_g(1, &heston_table(), 0.0, 0.05, false).unwrap();
        assert_eq!(g.compose(&DiffOperator::identity()).unwrap(), g);
        assert_eq!(DiffOperator::identity().compose(&g).unwrap(), g);
    }

    #[test]
    fn caps_are_enforced() {
        assert!(DiffOperator::monomial(1.0, 3, 2).is_err());
        assert!(DiffOperator::derivative(4, 3).is_err());
        let d = DiffOperator::derivative(4, 0).unwrap();
        assert!(d.compose(&d).is_err());
    }

    #[test]
    fn zero_elapsed_time_gives_multiplication() {
        let pair = build_xy(&heston_table(), 0.3, 0.3, false).unwrap();
        assert_eq!(pair.x_centered, DiffOperator::monomial(1.0, 1, 0).unwrap());
        assert_eq!(pair.y_centered, DiffOperator::monomial(1.0, 0, 1).unwrap());
        assert!(build_xy(&heston_table(), 0.3, 0.2, false).is_err());
    }

    #[test]
    fn x_operator_on_one() {
        let table = heston_table();
        let pair = build_xy(&table, 0.0, 0.1, false).unwrap();
        let p = pair.x_op().apply_to_poly(&Poly::one());
        assert_eq!(p.coeff(0, 0), table.point.x_bar - 0.02 * 0.1);
        assert_eq!(p.coeff(1, 0), 1.0);
        // Y maps y to y + b0 s
        let img = semigroup_poly(&table, 0.0, 0.1, false, &Poly::monomial(1.0, 0, 1)).unwrap();
        assert_eq!(img, Poly::from_terms([(1.0, 0, 1), (table.get(Family::Drift).c00 * 0.1, 0, 0)]));
    }

    #[test]
    fn x_and_y_commute() {
        let pair = build_xy(&heston_table(), 0.0, 0.2, false).unwrap();
        let xy = pair.x_op().compose(&pair.y_op()).unwrap();
        let yx = pair.y_op().compose(&pair.x_op()).unwrap();
        for f in monomials(4) {
            assert!(close(&xy.apply_to_poly(&f), &yx.apply_to_poly(&f), 1e-15));
        }
    }

    #[test]
    fn g1_contains_hand_expanded_term() {
        let table = heston_table();
        let s = 0.07;
        let g = build_g(1, &table, 0.0, s, false).unwrap();
        let expected = table.get(Family::HalfSigmaSq).c01 * s * 2.0 * table.get(Family::HalfBetaSq).c00;
        // the d_y d_xx coefficient also receives the cross-family term through X
        let cross = table.get(Family::Cross).c01 * s * table.get(Family::Cross).c00;
        assert_relative_eq!(g.coeff(0, 0, 2, 1), expected + cross, max_relative = 1e-14);
        assert_relative_eq!(
            g.coeff(0, 1, 2, 0),
            table.get(Family::HalfSigmaSq).c01,
            max_relative = 1e-15
        );
    }

    #[test]
    fn zero_first_order_gives_zero_g() {
        let m = ModelSpec::black_scholes(0.1, 0.2).unwrap();
        let t = taylor_coeffs(&m, ExpansionPoint::new(0.0, 0.0), DerivativeMode::Analytic).unwrap();
        assert!(build_g(1, &t, 0.0, 0.5, false).unwrap().is_zero());
        assert!(build_g(2, &t, 0.0, 0.5, true).unwrap().is_zero());
        assert!(build_g(3, &t, 0.0, 0.5, true).is_err());
    }

    #[test]
    fn kernel_operator_on_pbs() {
        let bs = BsInputs::new(0.0, 6.0 / 52.0, 4.6, 4.6, 0.2).unwrap();
        let op = DiffOperator::from_terms([OpTerm::new(1.0, 0, 0, 2, 0), OpTerm::new(-1.0, 0, 0, 1, 0)]).unwrap();
        assert_relative_eq!(op.apply_to_pbs(&bs, 0.0, 0.0).unwrap(), gamma_kernel(&bs).unwrap(), max_relative = 1e-12);
        assert_eq!(DiffOperator::zero().apply_to_pbs(&bs, 0.1, 0.2).unwrap(), 0.0);
        assert_eq!(DiffOperator::derivative(1, 1).unwrap().apply_to_pbs(&bs, 0.1, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn semigroup_matches_gaussian_quadrature() {
        let table = heston_table();
        let f = Poly::monomial(1.0, 2, 1);
        let tau = 6.0 / 52.0;
        for (u, v) in [(0.0, 0.0), (0.03, -0.01), (-0.05, 0.02)] {
            let exact = semigroup_poly(&table, 0.0, tau, false, &f).unwrap().eval(u, v);
            let (x, y) = (table.point.x_bar + u, table.point.y_bar + v);
            let xb = table.point.x_bar;
            let yb = table.point.y_bar;
            let quad = gaussian_convolution(&|x1, y1| (x1 - xb).powi(2) * (y1 - yb), &table, 0.0, tau, x, y, 32, false).unwrap();
            assert!((exact - quad).abs() <= 1e-8 * exact.abs().max(1e-6), "{exact} {quad}");
        }
    }

    #[test]
    fn semigroup_composition_on_polynomials() {
        let table = heston_table();
        let (t, t1, t2) = (0.0, 0.04, 0.11);
        for f in monomials(3) {
            let direct = semigroup_poly(&table, t, t2, false, &f).unwrap();
            let inner = semigroup_poly(&table, t1, t2, false, &f).unwrap();
            let nested = semigroup_poly(&table, t, t1, false, &inner).unwrap();
            assert!(close(&direct, &nested, 1e-13), "{f:?}");
        }
    }

    #[test]
    fn construction_order_is_irrelevant() {
        let terms = build_g(2, &heston_table(), 0.0, 0.1, false).unwrap().terms();
        let mut rev = terms.clone();
        rev.reverse();
        let a = DiffOperator::from_terms(terms).unwrap();
        let b = DiffOperator::from_terms(rev).unwrap();
        assert_eq!(a.terms(), b.terms());
    }

    fn arb_operator() -> impl Strategy<Value = DiffOperator> {
        proptest::collection::vec((-2.0f64..2.0, 0u8..3, 0u8..3, 0u8..3, 0u8..3), 1..6).prop_map(|v| {
            DiffOperator::from_terms(v.into_iter().filter(|t| t.1 + t.2 <= 2 && t.3 + t.4 <= 2).map(|(c, i, j, a, b)| OpTerm::new(c, i, j, a, b)))
                .unwrap()
        })
    }

    proptest! {
        #[test]
        fn compose_equals_sequential_application(a in arb_operator(), b in arb_operator(), p in 0u16..5, q in 0u16..5) {
            prop_assume!(p + q <= 4);
            let f = Poly::monomial(1.0, p, q);
            let lhs = a.compose(&b).unwrap().apply_to_poly(&f);
            let rhs = a.apply_to_poly(&b.apply_to_poly(&f));
            prop_assert!(close(&lhs, &rhs, 1e-12));
        }

        #[test]
        fn compose_is_associative(a in arb_operator(), b in arb_operator(), c in arb_operator()) {
            let l = a.compose(&b).unwrap();
            if let (Ok(lc), Ok(bc)) = (l.compose(&c), b.compose(&c)) {
                let r = a.compose(&bc).unwrap();
                for f in monomials(3) {
                    prop_assert!(close(&lc.apply_to_poly(&f), &r.apply_to_poly(&f), 1e-12));
                }
            }
        }
    }
}
