//! Series against the PDE and Monte Carlo references, per scenario.

use serde::Serialize;

use isr_core::expansion::closed_form_checks;
use isr_core::model::{taylor_coeffs, ModelSpec};
use isr_core::oracle::{implied_sharpe_reference, mc_price, solve_price_pde, solve_psi_pde, McResult, Refinement};
use isr_core::sharpe::{implied_sharpe_at, Scenario};
use isr_core::ExpansionAt;

use crate::config::SweepConfig;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct ClosedFormDelta {
    pub name: &'static str,
    pub closed: f64,
    pub quadrature: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeReference {
    /// `gamma nu p + psi` on each refinement level.
    pub refinement: Refinement,
    pub certified: bool,
    pub psi: f64,
    pub price: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ScenarioReport {
    pub index: usize,
    pub axis_value: f64,
    pub x: f64,
    pub y: f64,
    pub k: f64,
    pub maturity: f64,
    pub gamma: f64,
    pub nu: f64,
    /// Partial sums of the series through orders 0, 1, 2.
    pub lambda_bar: Option<[f64; 3]>,
    pub series_price: Option<f64>,
    pub lambda_oracle: Option<f64>,
    /// `|lambda_bar[n] - lambda_oracle|`.
    pub errors: Option<[f64; 3]>,
    pub errors_nonincreasing: Option<bool>,
    pub pde: Option<PdeReference>,
    pub mc: Option<McResult>,
    /// `(mc - pde) / se` and `(mc - series) / se`.
    pub mc_vs_pde_se: Option<f64>,
    pub mc_vs_series_se: Option<f64>,
    pub closed_forms: Vec<ClosedFormDelta>,
    pub feller: Option<bool>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub name: Option<String>,
    pub scenarios: Vec<ScenarioReport>,
}

impl CompareReport {
    pub fn failures(&self) -> usize {
        self.scenarios.iter().map(|s| s.failures.len()).sum()
    }
}

/// Finest-grid `psi` and price with the refinement study of `g nu p + psi`.
pub fn pde_reference(cfg: &SweepConfig, model: &ModelSpec, sc: &Scenario) -> Result<PdeReference, CliError> {
    let mut grid = cfg.oracle.grid.grid(model, sc)?;
    let mut combined = Vec::new();
    let (mut psi, mut price) = (f64::NAN, f64::NAN);
    for level in 0..=cfg.oracle.grid.levels {
        if level > 0 {
            grid = grid.refined();
        }
        psi = solve_psi_pde(model, sc, &grid)?.value_at(sc.x, sc.y)?;
        price = solve_price_pde(model, sc, &grid)?.value_at(sc.x, sc.y)?;
        combined.push(sc.gamma * sc.nu * price + psi);
    }
    let refinement = Refinement::from_values(combined);
    Ok(PdeReference {
        certified: refinement.certified(),
        refinement,
        psi,
        price,
    })
}

fn compare_one(cfg: &SweepConfig, model: &ModelSpec, index: usize, axis_value: f64, sc: &Scenario) -> ScenarioReport {
    let mut rep = ScenarioReport {
        index,
        axis_value,
        x: sc.x,
        y: sc.y,
        k: sc.k,
        maturity: sc.maturity,
        gamma: sc.gamma,
        nu: sc.nu,
        feller: cfg.model.feller(),
        ..ScenarioReport::default()
    };
    let series = || -> Result<_, CliError> {
        let table = taylor_coeffs(model, sc.anchor, cfg.model.derivative_mode)?;
        let exp = ExpansionAt::new(&table, sc.t, sc.maturity, cfg.expansion.config())?;
        let s = implied_sharpe_at(&exp, sc, 2, cfg.expansion.method)?;
        let checks = closed_form_checks(&table, sc, cfg.expansion.quad_order)?;
        Ok((s, checks))
    };
    match series() {
        Ok((s, checks)) => {
            rep.lambda_bar = Some([s.lambda0, s.lambda0 + s.lambda1, s.total]);
            rep.series_price = Some(s.price.total);
            rep.closed_forms = checks
                .iter()
                .map(|c| ClosedFormDelta {
                    name: c.name,
                    closed: c.closed,
                    quadrature: c.quadrature,
                    delta: (c.closed - c.quadrature).abs(),
                })
                .collect();
        }
        Err(e) => rep.failures.push(format!("series: {e}")),
    }
    if cfg.oracle.pde {
        match pde_reference(cfg, model, sc) {
            Ok(pde) => {
                if !pde.certified {
                    rep.failures.push("pde: refinement not certified".into());
                }
                match implied_sharpe_reference(pde.psi, pde.price, sc) {
                    Ok(l) => {
                        rep.lambda_oracle = Some(l);
                        if let Some(bar) = rep.lambda_bar {
                            let e = bar.map(|b| (b - l).abs());
                            rep.errors = Some(e);
                            rep.errors_nonincreasing = Some(e[1] <= e[0] && e[2] <= e[1]);
                        }
                    }
                    Err(e) => rep.failures.push(format!("pde: {e}")),
                }
                rep.pde = Some(pde);
            }
            Err(e) => rep.failures.push(format!("pde: {e}")),
        }
    }
    if cfg.oracle.mc {
        match mc_price(model, sc, &cfg.mc_config()) {
            Ok(mc) => {
                let se = mc.std_error.max(f64::MIN_POSITIVE);
                rep.mc_vs_pde_se = rep.pde.as_ref().map(|p| (mc.price - p.price) / se);
                rep.mc_vs_series_se = rep.series_price.map(|p| (mc.price - p) / se);
                rep.mc = Some(mc);
            }
            Err(e) => rep.failures.push(format!("mc: {e}")),
        }
    }
    rep
}

/// Runs the comparison on every point of the sweep, sequentially (each
/// reference is itself the expensive part).
pub fn run_compare(cfg: &SweepConfig) -> Result<CompareReport, CliError> {
    cfg.validate()?;
    if !(cfg.oracle.pde || cfg.oracle.mc) {
        return Err(CliError::Config("compare needs `oracle.pde` or `oracle.mc` enabled".into()));
    }
    let model = cfg.model.build()?;
    let scenarios = cfg
        .points()?
        .iter()
        .enumerate()
        .map(|(i, (v, sc))| compare_one(cfg, &model, i, *v, sc))
        .collect();
    Ok(CompareReport {
        name: cfg.name.clone(),
        scenarios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_coefficients_agree() {
        let cfg = SweepConfig::from_toml(
            r#"
            [model]
            preset = "black_scholes"
            [scenario]
            maturity = 0.25
            spot = 100.0
            strike = 100.0
            nu = 1.0
            [sweep]
            axis = "gamma"
            start = 1.0
            end = 1.0
            count = 1
            [oracle]
            pde = true
            [oracle.grid]
            nx = 121
            ny = 41
            nt = 40
            levels = 1
            "#,
        )
        .unwrap();
        let rep = run_compare(&cfg).unwrap();
        let s = &rep.scenarios[0];
        assert!(s.failures.iter().all(|f| f.contains("certified")), "{:?}", s.failures);
        for d in &s.closed_forms {
            assert!(d.delta <= 1e-10, "{d:?}");
        }
        let bar = s.lambda_bar.unwrap();
        assert!(bar.iter().all(|l| (l - 0.25).abs() < 1e-12));
        assert!(s.errors.unwrap()[2] < 1e-3);
    }

    #[test]
    fn needs_an_oracle() {
        let mut cfg = crate::presets::preset("heston_gamma").unwrap();
        cfg.oracle.pde = false;
        assert!(run_compare(&cfg).is_err());
    }
}
