//! Sweeps over one scenario axis, one CSV row per point.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use isr_core::model::{taylor_coeffs, ModelSpec};
use isr_core::oracle::{implied_sharpe_reference, mc_price, solve_price_pde, solve_psi_pde, McResult};
use isr_core::sharpe::{implied_sharpe_at, Scenario, SharpeApproximation};
use isr_core::ExpansionAt;

use crate::config::SweepConfig;
use crate::CliError;

/// One sweep point. Numeric fields are empty when the point failed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub nu: f64,
    pub gamma: f64,
    pub k: f64,
    #[serde(rename = "T")]
    pub maturity: f64,
    pub lambda0: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda_total: Option<f64>,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub psi0: Option<f64>,
    pub psi1: Option<f64>,
    pub psi2: Option<f64>,
    pub radicand: Option<f64>,
    pub method: Option<String>,
    pub exp_term_source: Option<String>,
    #[serde(default)]
    pub lambda_oracle: Option<f64>,
    #[serde(default)]
    pub pde_psi: Option<f64>,
    #[serde(default)]
    pub mc_price: Option<f64>,
    #[serde(default)]
    pub mc_se: Option<f64>,
    #[serde(default)]
    pub oracle_error: Option<String>,
    pub x: f64,
    pub y: f64,
    pub error: Option<String>,
}

const BASE_COLUMNS: [&str; 18] = [
    "axis_value",
    "nu",
    "gamma",
    "k",
    "T",
    "lambda0",
    "lambda1",
    "lambda2",
    "lambda_total",
    "p0",
    "p1",
    "p2",
    "psi0",
    "psi1",
    "psi2",
    "radicand",
    "method",
    "exp_term_source",
];
const ORACLE_COLUMNS: [&str; 5] = ["lambda_oracle", "pde_psi", "mc_price", "mc_se", "oracle_error"];
const TAIL_COLUMNS: [&str; 3] = ["x", "y", "error"];

impl SweepRow {
    fn base(axis_value: f64, sc: &Scenario) -> Self {
        Self {
            axis_value,
            nu: sc.nu,
            gamma: sc.gamma,
            k: sc.k,
            maturity: sc.maturity,
            x: sc.x,
            y: sc.y,
            ..Self::default()
        }
    }

    fn fill(&mut self, s: &SharpeApproximation) {
        self.lambda0 = Some(s.lambda0);
        self.lambda1 = Some(s.lambda1);
        self.lambda2 = Some(s.lambda2);
        self.lambda_total = Some(s.total);
        self.p0 = Some(s.price.p0);
        self.p1 = Some(s.price.p1);
        self.p2 = Some(s.price.p2);
        self.psi0 = Some(s.psi.psi0);
        self.psi1 = Some(s.psi.psi1);
        self.psi2 = Some(s.psi.psi2);
        self.radicand = Some(s.radicand);
        self.method = Some(s.method.to_string());
        self.exp_term_source = Some(s.exp_term_source.to_string());
    }

    fn fields(&self, oracles: bool) -> Vec<String> {
        let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let text = |v: &Option<String>| v.clone().unwrap_or_default();
        let mut out = vec![
            self.axis_value.to_string(),
            self.nu.to_string(),
            self.gamma.to_string(),
            self.k.to_string(),
            self.maturity.to_string(),
            num(self.lambda0),
            num(self.lambda1),
            num(self.lambda2),
            num(self.lambda_total),
            num(self.p0),
            num(self.p1),
            num(self.p2),
            num(self.psi0),
            num(self.psi1),
            num(self.psi2),
            num(self.radicand),
            text(&self.method),
            text(&self.exp_term_source),
        ];
        if oracles {
            out.extend([
                num(self.lambda_oracle),
                num(self.pde_psi),
                num(self.mc_price),
                num(self.mc_se),
                text(&self.oracle_error),
            ]);
        }
        out.extend([self.x.to_string(), self.y.to_string(), text(&self.error)]);
        out
    }
}

/// Result of a sweep, rows in sweep order.
#[derive(Debug, Clone, Serialize)]
pub struct SweepOutput {
    pub axis: &'static str,
    pub oracles: bool,
    pub rows: Vec<SweepRow>,
}

impl SweepOutput {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = BASE_COLUMNS.to_vec();
        if self.oracles {
            header.extend(ORACLE_COLUMNS);
        }
        header.extend(TAIL_COLUMNS);
        w.write_record(&header)?;
        for row in &self.rows {
            w.write_record(row.fields(self.oracles))?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<(), CliError> {
        serde_json::to_writer_pretty(out, self).map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Reads rows written by [`SweepOutput::write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRow>, CliError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

fn evaluate(cfg: &SweepConfig, model: &ModelSpec, axis_value: f64, sc: &Scenario) -> SweepRow {
    let mut row = SweepRow::base(axis_value, sc);
    let series = || -> Result<SharpeApproximation, CliError> {
        let table = taylor_coeffs(model, sc.anchor, cfg.model.derivative_mode)?;
        let exp = ExpansionAt::new(&table, sc.t, sc.maturity, cfg.expansion.config())?;
        Ok(implied_sharpe_at(&exp, sc, cfg.expansion.order, cfg.expansion.method)?)
    };
    match series() {
        Ok(s) => row.fill(&s),
        Err(e) => row.error = Some(e.to_string()),
    }
    let mut notes = Vec::new();
    if cfg.oracle.pde {
        let pde = || -> Result<(f64, f64), CliError> {
            let grid = cfg.oracle.grid.grid(model, sc)?;
            let psi = solve_psi_pde(model, sc, &grid)?.value_at(sc.x, sc.y)?;
            let price = solve_price_pde(model, sc, &grid)?.value_at(sc.x, sc.y)?;
            Ok((psi, price))
        };
        match pde() {
            Ok((psi, price)) => {
                row.pde_psi = Some(psi);
                match implied_sharpe_reference(psi, price, sc) {
                    Ok(l) => row.lambda_oracle = Some(l),
                    Err(e) => notes.push(e.to_string()),
                }
            }
            Err(e) => notes.push(e.to_string()),
        }
    }
    if cfg.oracle.mc {
        match mc_price(model, sc, &cfg.mc_config()) {
            Ok(McResult { price, std_error, .. }) => {
                row.mc_price = Some(price);
                row.mc_se = Some(std_error);
            }
            Err(e) => notes.push(e.to_string()),
        }
    }
    if !notes.is_empty() {
        row.oracle_error = Some(notes.join("; "));
    }
    row
}

/// Evaluates every sweep point, in parallel, keeping the sweep order.
/// Per-point failures are recorded in the `error` column.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput, CliError> {
    cfg.validate()?;
    let model = cfg.model.build()?;
    let points = cfg.points()?;
    let rows = points
        .par_iter()
        .map(|(v, sc)| evaluate(cfg, &model, *v, sc))
        .collect();
    Ok(SweepOutput {
        axis: cfg.sweep.axis.name(),
        oracles: cfg.oracle.pde || cfg.oracle.mc,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SweepConfig;

    fn bs_config() -> SweepConfig {
        SweepConfig::from_toml(
            r#"
            [model]
            preset = "black_scholes"
            mu = 0.08
            sigma = 0.25
            [scenario]
            maturity = 0.5
            spot = 100.0
            strike = 95.0
            nu = 2.0
            [sweep]
            axis = "gamma"
            start = 0.5
            end = 4.0
            count = 5
            "#,
        )
        .unwrap()
    }

    #[test]
    fn black_scholes_rows_are_exact() {
        let out = run_sweep(&bs_config()).unwrap();
        assert_eq!(out.rows.len(), 5);
        for r in &out.rows {
            assert!((r.lambda_total.unwrap() - 0.32).abs() < 1e-12);
            assert!(r.error.is_none());
        }
    }

    #[test]
    fn csv_round_trip_and_header() {
        let out = run_sweep(&bs_config()).unwrap();
        let mut buf = Vec::new();
        out.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("axis_value,nu,gamma,k,T,lambda0,lambda1,lambda2,lambda_total,p0,p1,p2,psi0,psi1,psi2,radicand,method,exp_term_source,x,y,error\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), out.rows);
    }

    #[test]
    fn failures_are_recorded_per_point() {
        let mut cfg = bs_config();
        cfg.model = crate::config::ModelConfig::preset(crate::config::Preset::Heston);
        cfg.scenario.y = 0.04;
        cfg.model.omega = Some(0.3);
        // the shortcut formulas need the minimal martingale measure
        cfg.expansion.method = Some(isr_core::Method::MmmRemark);
        let out = run_sweep(&cfg).unwrap();
        assert_eq!(out.failures(), out.rows.len());
        assert!(out.rows[0].lambda_total.is_none());
    }
}
