//! Sweep configuration, read from a TOML file.
//!
//! ```toml
//! seed = 42
//!
//! [model]
//! preset = "heston"          # heston | reciprocal_heston | black_scholes
//! kappa = 1.15               # any preset parameter may be overridden
//!
//! [scenario]
//! maturity = 0.1153846
//! spot = 100.0               # or x = log-spot
//! strike = 100.0             # or k = log-strike
//! y = 0.04
//! nu = 1.0
//! gamma = 1.0
//!
//! [sweep]
//! axis = "gamma"             # gamma | log_strike | maturity | nu
//! start = 0.1
//! end = 5.0
//! count = 50
//!
//! [families]                 # one curve per combination
//! nu = [-1.0, 1.0]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use isr_core::expansion::{ExpTermSource, ExpansionConfig};
use isr_core::model::{DerivativeMode, ExpansionPoint, HestonParams, ModelSpec, ReciprocalHestonParams};
use isr_core::oracle::{Grid2D, McConfig, McScheme};
use isr_core::sharpe::{Method, Scenario};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Seed of every random stream.
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub model: ModelConfig,
    pub scenario: ScenarioConfig,
    pub sweep: AxisConfig,
    #[serde(default)]
    pub families: Families,
    #[serde(default)]
    pub expansion: ExpansionSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Heston,
    ReciprocalHeston,
    BlackScholes,
}

/// Preset name plus optional parameter overrides; unset parameters take the
/// values of the standard parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recip_heston_rho_sq: Option<bool>,
    /// Constant market price of volatility risk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default)]
    pub derivative_mode: DerivativeMode,
}

impl ModelConfig {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset,
            kappa: None,
            theta: None,
            delta: None,
            rho: None,
            mu: None,
            sigma: None,
            a: None,
            b: None,
            recip_heston_rho_sq: None,
            omega: None,
            derivative_mode: DerivativeMode::Analytic,
        }
    }

    fn reject(&self, names: &[&str]) -> Result<(), CliError> {
        let set = [
            ("kappa", self.kappa.is_some()),
            ("theta", self.theta.is_some()),
            ("delta", self.delta.is_some()),
            ("rho", self.rho.is_some()),
            ("mu", self.mu.is_some()),
            ("sigma", self.sigma.is_some()),
            ("a", self.a.is_some()),
            ("b", self.b.is_some()),
            ("recip_heston_rho_sq", self.recip_heston_rho_sq.is_some()),
        ];
        for (name, present) in set {
            if present && names.contains(&name) {
                return Err(CliError::Config(format!("parameter `{name}` does not apply to {:?}", self.preset)));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ModelSpec, CliError> {
        let model = match self.preset {
            Preset::Heston => {
                self.reject(&["mu", "sigma", "a", "b", "recip_heston_rho_sq"])?;
                let d = HestonParams::standard();
                ModelSpec::heston(HestonParams {
                    kappa: self.kappa.unwrap_or(d.kappa),
                    theta: self.theta.unwrap_or(d.theta),
                    delta: self.delta.unwrap_or(d.delta),
                    rho: self.rho.unwrap_or(d.rho),
                })?
            }
            Preset::ReciprocalHeston => {
                self.reject(&["theta", "delta", "sigma"])?;
                let d = ReciprocalHestonParams::standard();
                ModelSpec::reciprocal_heston(ReciprocalHestonParams {
                    mu: self.mu.unwrap_or(d.mu),
                    a: self.a.unwrap_or(d.a),
                    b: self.b.unwrap_or(d.b),
                    kappa: self.kappa.unwrap_or(d.kappa),
                    rho: self.rho.unwrap_or(d.rho),
                    recip_heston_rho_sq: self.recip_heston_rho_sq.unwrap_or(d.recip_heston_rho_sq),
                })?
            }
            Preset::BlackScholes => {
                self.reject(&["kappa", "theta", "delta", "rho", "a", "b", "recip_heston_rho_sq"])?;
                ModelSpec::black_scholes(self.mu.unwrap_or(0.05), self.sigma.unwrap_or(0.2))?
            }
        };
        Ok(match self.omega {
            Some(w) if w != 0.0 => model.with_omega(Arc::new(move |_, _| w)),
            _ => model,
        })
    }

    /// Feller condition of the reciprocal Heston factor, when it applies.
    pub fn feller(&self) -> Option<bool> {
        (self.preset == Preset::ReciprocalHeston).then(|| {
            let d = ReciprocalHestonParams::standard();
            ReciprocalHestonParams {
                a: self.a.unwrap_or(d.a),
                b: self.b.unwrap_or(d.b),
                kappa: self.kappa.unwrap_or(d.kappa),
                ..d
            }
            .feller()
        })
    }
}

/// Base scenario. Log quantities may be given directly (`x`, `k`) or as
/// `spot`, `strike`. The anchor follows the state unless `x_bar`/`y_bar`
/// pin it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub t: f64,
    pub maturity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spot: Option<f64>,
    #[serde(default)]
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(default)]
    pub nu: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_bar: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn log_of(log: Option<f64>, level: Option<f64>, what: &str) -> Result<f64, CliError> {
    match (log, level) {
        (Some(v), None) => Ok(v),
        (None, Some(s)) if s > 0.0 => Ok(s.ln()),
        (None, Some(s)) => Err(CliError::Config(format!("{what} level must be positive, got {s}"))),
        (Some(_), Some(_)) => Err(CliError::Config(format!("give {what} either as a log or as a level, not both"))),
        (None, None) => Err(CliError::Config(format!("scenario needs the {what}"))),
    }
}

impl ScenarioConfig {
    pub fn log_spot(&self) -> Result<f64, CliError> {
        log_of(self.x, self.spot, "spot")
    }

    pub fn log_strike(&self) -> Result<f64, CliError> {
        log_of(self.k, self.strike, "strike")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Gamma,
    LogStrike,
    Maturity,
    Nu,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Gamma => "gamma",
            Axis::LogStrike => "log_strike",
            Axis::Maturity => "maturity",
            Axis::Nu => "nu",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub axis: Axis,
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

impl AxisConfig {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let step = (self.end - self.start) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.end } else { self.start + i as f64 * step })
            .collect()
    }
}

/// Curve parameters: the sweep is repeated for every combination. Empty
/// lists keep the base scenario value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Families {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maturity: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionSection {
    pub order: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub quad_order: usize,
    pub hermite_nodes: usize,
    pub exp_term_source: ExpTermSource,
    /// Also evaluate the convolution reference of the exponential term.
    pub reference: bool,
}

impl Default for ExpansionSection {
    fn default() -> Self {
        let d = ExpansionConfig::default();
        Self {
            order: 2,
            method: None,
            quad_order: d.quad_order,
            hermite_nodes: d.hermite_nodes,
            exp_term_source: d.exp_term_source,
            reference: false,
        }
    }
}

impl ExpansionSection {
    pub fn config(&self) -> ExpansionConfig {
        ExpansionConfig {
            quad_order: self.quad_order,
            hermite_nodes: self.hermite_nodes,
            exp_term_source: self.exp_term_source,
            with_reference: self.reference || self.exp_term_source == ExpTermSource::Convolution,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub pad_x: f64,
    pub pad_y: f64,
    /// Refinements used by `compare` to certify the grid.
    pub levels: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            nx: 81,
            ny: 41,
            nt: 40,
            pad_x: Grid2D::DEFAULT_PAD_X,
            pad_y: Grid2D::DEFAULT_PAD_Y,
            levels: 2,
        }
    }
}

impl GridSection {
    pub fn grid(&self, model: &ModelSpec, sc: &Scenario) -> Result<Grid2D, CliError> {
        Ok(Grid2D::with_padding(model, sc, self.nx, self.ny, self.nt, self.pad_x, self.pad_y)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub paths: usize,
    pub steps: usize,
    pub antithetic: bool,
}

impl Default for McSection {
    fn default() -> Self {
        let d = McConfig::default();
        Self {
            paths: d.paths,
            steps: d.steps,
            antithetic: d.antithetic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub pde: bool,
    pub mc: bool,
    pub grid: GridSection,
    pub monte_carlo: McSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub json: bool,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.sweep;
        if s.count == 0 {
            return Err(CliError::Config("sweep count must be positive".into()));
        }
        if !(s.start.is_finite() && s.end.is_finite()) || s.start > s.end {
            return Err(CliError::Config(format!("sweep range [{}, {}] must be finite and ordered", s.start, s.end)));
        }
        let clash = match s.axis {
            Axis::Gamma => !self.families.gamma.is_empty(),
            Axis::LogStrike => !self.families.k.is_empty(),
            Axis::Maturity => !self.families.maturity.is_empty(),
            Axis::Nu => !self.families.nu.is_empty(),
        };
        if clash {
            return Err(CliError::Config(format!("`{}` is the sweep axis and cannot also be a family", s.axis.name())));
        }
        if self.expansion.order > 2 {
            return Err(CliError::Config(format!("order must be 0, 1 or 2, got {}", self.expansion.order)));
        }
        self.scenario.log_spot()?;
        self.scenario.log_strike()?;
        self.model.build()?;
        Ok(())
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            paths: self.oracle.monte_carlo.paths,
            steps: self.oracle.monte_carlo.steps,
            seed: self.seed,
            scheme: McScheme::EulerFullTruncation,
            antithetic: self.oracle.monte_carlo.antithetic,
        }
    }

    /// Every scenario of the sweep in output order: families outermost
    /// (x, maturity, k, gamma, nu), the axis innermost.
    pub fn points(&self) -> Result<Vec<(f64, Scenario)>, CliError> {
        let base = &self.scenario;
        let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
        let f = &self.families;
        let mut out = Vec::new();
        for x in or_base(&f.x, base.log_spot()?) {
            for maturity in or_base(&f.maturity, base.maturity) {
                for k in or_base(&f.k, base.log_strike()?) {
                    for gamma in or_base(&f.gamma, base.gamma) {
                        for nu in or_base(&f.nu, base.nu) {
                            for v in self.sweep.values() {
                                let mut sc = Scenario::at_state(base.t, maturity, x, base.y, k, nu, gamma);
                                match self.sweep.axis {
                                    Axis::Gamma => sc.gamma = v,
                                    Axis::LogStrike => sc.k = v,
                                    Axis::Maturity => sc.maturity = v,
                                    Axis::Nu => sc.nu = v,
                                }
                                sc.anchor = ExpansionPoint::new(base.x_bar.unwrap_or(x), base.y_bar.unwrap_or(base.y));
                                out.push((v, sc));
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [model]
        preset = "heston"
        [scenario]
        maturity = 0.5
        spot = 100.0
        strike = 100.0
        y = 0.04
        [sweep]
        axis = "gamma"
        start = 0.5
        end = 2.0
        count = 4
        [families]
        nu = [-1.0, 1.0]
    "#;

    #[test]
    fn parses_and_expands_points() {
        let cfg = SweepConfig::from_toml(MINIMAL).unwrap();
        let pts = cfg.points().unwrap();
        assert_eq!(pts.len(), 8);
        assert_eq!(pts[0].1.nu, -1.0);
        assert_eq!(pts[3].1.gamma, 2.0);
        assert!((pts[0].1.x - 100f64.ln()).abs() < 1e-15);
        assert_eq!(pts[0].1.anchor.y_bar, 0.04);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_range = MINIMAL.replace("end = 2.0", "end = 0.1");
        assert!(SweepConfig::from_toml(&bad_range).is_err());
        let clash = MINIMAL.replace("nu = [-1.0, 1.0]", "gamma = [1.0]");
        assert!(SweepConfig::from_toml(&clash).is_err());
        let unknown = MINIMAL.replace("y = 0.04", "y = 0.04\nzeta = 1.0");
        assert!(SweepConfig::from_toml(&unknown).is_err());
        let wrong_param = MINIMAL.replace("preset = \"heston\"", "preset = \"heston\"\nsigma = 0.3");
        assert!(SweepConfig::from_toml(&wrong_param).is_err());
        let both = MINIMAL.replace("spot = 100.0", "spot = 100.0\nx = 4.6");
        assert!(SweepConfig::from_toml(&both).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = SweepConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(SweepConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
