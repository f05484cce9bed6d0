//! Fixed-order quadrature rules, shared as immutable node tables.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::{GaussHermite, GaussLegendre};

use crate::error::{invalid, Result};

/// Nodes and weights of a rule on a reference interval or measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Gauss–Legendre nodes mapped to `[a, b]`, weights including the Jacobian.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(z, w)| (mid + half * z, half * w))
    }

    /// Integral of `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(s, w)| w * f(s)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

type Cache = Mutex<HashMap<usize, Arc<Rule>>>;

fn cached(cache: &'static OnceLock<Cache>, n: usize, build: impl FnOnce() -> Rule) -> Arc<Rule> {
    let map = cache.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = map.lock().unwrap_or_else(|e| e.into_inner());
    guard.entry(n).or_insert_with(|| Arc::new(build())).clone()
}

/// Gauss–Legendre rule of order `n` on `[-1, 1]`.
///
/// # Errors
///
/// Returns an error for `n < 2`.
pub fn legendre(n: usize) -> Result<Arc<Rule>> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    if n < 2 {
        return Err(invalid("quadrature_order", n as f64, "must be at least 2"));
    }
    Ok(cached(&CACHE, n, || {
        let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("n >= 2"));
        let (nodes, weights) = rule.as_node_weight_pairs().iter().copied().unzip();
        Rule { nodes, weights }
    }))
}

/// Gauss–Hermite rule of order `n` for the standard normal law: the
/// weights sum to one and `sum w_i f(z_i)` approximates `E[f(Z)]`.
///
/// # Errors
///
/// Returns an error for `n < 1`.
pub fn normal_hermite(n: usize) -> Result<Arc<Rule>> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let nz = NonZeroUsize::new(n).ok_or_else(|| invalid("hermite_nodes", 0.0, "must be positive"))?;
    Ok(cached(&CACHE, n, || {
        let rule = GaussHermite::new(nz);
        let norm = std::f64::consts::PI.sqrt();
        let (nodes, weights) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(z, w)| (z * std::f64::consts::SQRT_2, w / norm))
            .unzip();
        Rule { nodes, weights }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_is_exact_for_polynomials() {
        let r = legendre(8).unwrap();
        assert_relative_eq!(r.integrate(0.0, 2.0, |s| s.powi(15)), 2f64.powi(16) / 16.0, max_relative = 1e-13);
        assert!(legendre(1).is_err());
    }

    #[test]
    fn hermite_moments() {
        let r = normal_hermite(16).unwrap();
        let m = |p: i32| r.nodes.iter().zip(&r.weights).map(|(z, w)| w * z.powi(p)).sum::<f64>();
        assert_relative_eq!(m(0), 1.0, max_relative = 1e-14);
        assert!(m(1).abs() < 1e-14);
        assert_relative_eq!(m(2), 1.0, max_relative = 1e-13);
        assert_relative_eq!(m(4), 3.0, max_relative = 1e-13);
        assert_relative_eq!(m(6), 15.0, max_relative = 1e-12);
    }
}
