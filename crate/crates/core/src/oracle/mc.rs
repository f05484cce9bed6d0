//! Monte Carlo pricing of the call under the pricing measure.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, IsrError, Result};
use crate::model::{Family, ModelKind, ModelSpec};
use crate::sharpe::Scenario;

const CHUNK: usize = 8192;
const MAX_REJECTED: f64 = 1e-4;
const RECIP_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McScheme {
    /// Euler steps with the state clamped to its domain inside every
    /// coefficient evaluation.
    #[default]
    EulerFullTruncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub scheme: McScheme,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            paths: 1_000_000,
            steps: 200,
            seed: 42,
            scheme: McScheme::EulerFullTruncation,
            antithetic: true,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paths < 2 {
            return Err(invalid("paths", self.paths as f64, "need at least two paths"));
        }
        if self.steps == 0 {
            return Err(invalid("steps", 0.0, "need at least one step"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McResult {
    pub price: f64,
    pub std_error: f64,
    pub paths: usize,
    pub rejected: usize,
}

#[derive(Clone, Copy)]
enum Dynamics {
    Raw,
    /// Coefficients see `max(y, 0)`.
    Truncated,
    /// Simulates `z = 1/y`, coefficients see `1 / max(z, 1e-8)`.
    Reciprocal,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    sum: f64,
    sum_sq: f64,
    n: usize,
    rejected: usize,
}

/// Price of `(e^{X_T} - e^k)^+` by simulation of
/// `dX = -sigma^2/2 dt + sigma dW`, `dY = b^ dt + beta dW'`,
/// `d<W, W'> = rho dt`, started at the scenario state.
///
/// Paths are split into fixed chunks, each with its own ChaCha stream
/// derived from the seed, and the chunk sums are added in order, so the
/// result does not depend on the thread count.
///
/// # Errors
///
/// Returns an error for an invalid configuration or when more than 0.01% of
/// the paths end non-finite.
pub fn mc_price(model: &ModelSpec, sc: &Scenario, cfg: &McConfig) -> Result<McResult> {
    sc.validate()?;
    cfg.validate()?;
    model.check_domain(sc.x, sc.y)?;
    let dynamics = match model.kind() {
        ModelKind::ReciprocalHeston => Dynamics::Reciprocal,
        _ if model.positive_y() => Dynamics::Truncated,
        _ => Dynamics::Raw,
    };
    let per_sample = if cfg.antithetic { 2 } else { 1 };
    let samples = cfg.paths.div_ceil(per_sample);
    let chunks = samples.div_ceil(CHUNK);
    let dt = sc.tau() / cfg.steps as f64;
    let strike = sc.k.exp();
    let rho = model.rho();
    let rho_bar = (1.0 - rho * rho).sqrt();

    let simulate = |z1: &[f64], z2: &[f64], sign: f64| -> f64 {
        let mut x = sc.x;
        let mut s = match dynamics {
            Dynamics::Reciprocal => 1.0 / sc.y,
            _ => sc.y,
        };
        let sq = dt.sqrt();
        for (a, b) in z1.iter().zip(z2) {
            let dwx = sign * a * sq;
            let dwy = sign * (rho * a + rho_bar * b) * sq;
            let y = match dynamics {
                Dynamics::Raw => s,
                Dynamics::Truncated => s.max(0.0),
                Dynamics::Reciprocal => 1.0 / s.max(RECIP_FLOOR),
            };
            let sig = model.sigma(x, y);
            let drift = model.family(Family::HattedDrift, x, y);
            let beta = model.beta(x, y);
            x += -0.5 * sig * sig * dt + sig * dwx;
            match dynamics {
                Dynamics::Reciprocal => {
                    let zp = s.max(RECIP_FLOOR);
                    let z2 = zp * zp;
                    s += (-z2 * drift + z2 * zp * beta * beta) * dt - z2 * beta * dwy;
                }
                _ => s += drift * dt + beta * dwy,
            }
        }
        (x.exp() - strike).max(0.0)
    };

    let accs: Vec<Acc> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            let mut z1 = vec![0.0; cfg.steps];
            let mut z2 = vec![0.0; cfg.steps];
            let mut acc = Acc::default();
            for _ in 0..count {
                for k in 0..cfg.steps {
                    z1[k] = StandardNormal.sample(&mut rng);
                    z2[k] = StandardNormal.sample(&mut rng);
                }
                let v = if cfg.antithetic {
                    0.5 * (simulate(&z1, &z2, 1.0) + simulate(&z1, &z2, -1.0))
                } else {
                    simulate(&z1, &z2, 1.0)
                };
                if v.is_finite() {
                    acc.sum += v;
                    acc.sum_sq += v * v;
                    acc.n += 1;
                } else {
                    acc.rejected += per_sample;
                }
            }
            acc
        })
        .collect();
    let total = accs.iter().fold(Acc::default(), |t, a| Acc {
        sum: t.sum + a.sum,
        sum_sq: t.sum_sq + a.sum_sq,
        n: t.n + a.n,
        rejected: t.rejected + a.rejected,
    });
    if total.rejected as f64 > MAX_REJECTED * (samples * per_sample) as f64 || total.n < 2 {
        return Err(IsrError::Oracle(format!("{} non-finite Monte Carlo paths", total.rejected)));
    }
    let n = total.n as f64;
    let mean = total.sum / n;
    let var = ((total.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McResult {
        price: mean,
        std_error: (var / n).sqrt(),
        paths: total.n * per_sample,
        rejected: total.rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bskernel::{bs_price, BsInputs};

    #[test]
    fn black_scholes_within_three_errors_and_reproducible() {
        let model = ModelSpec::black_scholes(0.05, 0.2).unwrap();
        let sc = Scenario::at_state(0.0, 0.25, 100f64.ln(), 0.0, 100f64.ln(), 1.0, 1.0);
        let cfg = McConfig {
            paths: 40_000,
            steps: 4,
            seed: 7,
            ..McConfig::default()
        };
        let r = mc_price(&model, &sc, &cfg).unwrap();
        let exact = bs_price(&BsInputs::new(0.0, 0.25, sc.x, sc.k, 0.2).unwrap()).unwrap();
        assert!((r.price - exact).abs() < 3.0 * r.std_error, "{r:?} {exact}");
        assert_eq!(r, mc_price(&model, &sc, &cfg).unwrap());
        let other = Scenario { nu: -3.0, gamma: 4.0, wealth: 10.0, ..sc };
        assert_eq!(r, mc_price(&model, &other, &cfg).unwrap());
    }

    #[test]
    fn rejects_bad_config() {
        let model = ModelSpec::black_scholes(0.05, 0.2).unwrap();
        let sc = Scenario::at_state(0.0, 0.25, 0.0, 0.0, 0.0, 1.0, 1.0);
        let cfg = McConfig { steps: 0, ..McConfig::default() };
        assert!(mc_price(&model, &sc, &cfg).is_err());
    }
}
