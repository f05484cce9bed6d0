//! The six standard sweeps: implied Sharpe ratio against risk aversion,
//! log-strike and maturity, under the standard Heston and reciprocal Heston
//! parameter sets. The axis ranges are gamma in [0.1, 5], log-strike within
//! 20% of the spot and maturities from two to twenty-six weeks; gamma = 1 on
//! the strike sweeps and gamma in {0.1, 1, 2} on the maturity sweeps.

use crate::config::{
    Axis, AxisConfig, ExpansionSection, Families, ModelConfig, OracleSection, OutputSection, Preset, ScenarioConfig,
    SweepConfig,
};

pub const NAMES: [&str; 6] = [
    "heston_gamma",
    "heston_strike",
    "heston_maturity",
    "reciprocal_heston_gamma",
    "reciprocal_heston_strike",
    "reciprocal_heston_maturity",
];

/// Option positions of the gamma sweeps, with the no-option baseline.
const NUS: [f64; 9] = [-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0];
/// Maturities of the strike sweeps.
const WEEKS: [f64; 3] = [6.0 / 52.0, 9.0 / 52.0, 12.0 / 52.0];
/// Gammas of the maturity sweeps; the smallest is excluded from the
/// monotonicity check.
pub const MATURITY_GAMMAS: [f64; 3] = [0.1, 1.0, 2.0];

fn scenario(maturity: f64, spot: f64, strike: f64, y: f64, nu: f64) -> ScenarioConfig {
    ScenarioConfig {
        t: 0.0,
        maturity,
        x: Some(spot.ln()),
        spot: None,
        y,
        k: Some(strike.ln()),
        strike: None,
        nu,
        gamma: 1.0,
        x_bar: None,
        y_bar: None,
    }
}

fn spots(levels: &[f64]) -> Vec<f64> {
    levels.iter().map(|s| s.ln()).collect()
}

fn config(name: &str, preset: Preset, scenario: ScenarioConfig, sweep: AxisConfig, families: Families) -> SweepConfig {
    SweepConfig {
        name: Some(name.to_string()),
        seed: 42,
        model: ModelConfig::preset(preset),
        scenario,
        sweep,
        families,
        expansion: ExpansionSection::default(),
        oracle: OracleSection::default(),
        output: OutputSection::default(),
    }
}

fn gamma_axis() -> AxisConfig {
    AxisConfig {
        axis: Axis::Gamma,
        start: 0.1,
        end: 5.0,
        count: 50,
    }
}

fn strike_axis() -> AxisConfig {
    AxisConfig {
        axis: Axis::LogStrike,
        start: 8f64.ln(),
        end: 12f64.ln(),
        count: 41,
    }
}

fn maturity_axis() -> AxisConfig {
    AxisConfig {
        axis: Axis::Maturity,
        start: 2.0 / 52.0,
        end: 26.0 / 52.0,
        count: 25,
    }
}

/// The named preset, or `None` for an unknown name.
pub fn preset(name: &str) -> Option<SweepConfig> {
    let heston_y = 0.04;
    let recip_y = 0.04;
    Some(match name {
        "heston_gamma" => config(
            name,
            Preset::Heston,
            scenario(6.0 / 52.0, 100.0, 100.0, heston_y, 1.0),
            gamma_axis(),
            Families {
                x: spots(&[100.0, 110.0, 90.0]),
                nu: NUS.to_vec(),
                ..Families::default()
            },
        ),
        "heston_strike" => config(
            name,
            Preset::Heston,
            scenario(6.0 / 52.0, 10.0, 10.0, heston_y, 1.0),
            strike_axis(),
            Families {
                maturity: WEEKS.to_vec(),
                ..Families::default()
            },
        ),
        "heston_maturity" => config(
            name,
            Preset::Heston,
            scenario(6.0 / 52.0, 100.0, 100.0, heston_y, 1.0),
            maturity_axis(),
            Families {
                x: spots(&[100.0, 110.0, 90.0]),
                gamma: MATURITY_GAMMAS.to_vec(),
                ..Families::default()
            },
        ),
        "reciprocal_heston_gamma" => config(
            name,
            Preset::ReciprocalHeston,
            scenario(0.25, 100.0, 100.0, recip_y, 1.0),
            gamma_axis(),
            Families {
                x: spots(&[110.0, 100.0, 90.0]),
                nu: NUS.to_vec(),
                ..Families::default()
            },
        ),
        "reciprocal_heston_strike" => config(
            name,
            Preset::ReciprocalHeston,
            scenario(6.0 / 52.0, 10.0, 10.0, recip_y, 1.0),
            strike_axis(),
            Families {
                maturity: WEEKS.to_vec(),
                ..Families::default()
            },
        ),
        "reciprocal_heston_maturity" => config(
            name,
            Preset::ReciprocalHeston,
            scenario(6.0 / 52.0, 100.0, 100.0, recip_y, 1.0),
            maturity_axis(),
            Families {
                x: spots(&[110.0, 100.0, 90.0]),
                gamma: MATURITY_GAMMAS.to_vec(),
                ..Families::default()
            },
        ),
        _ => return None,
    })
}

pub fn all() -> Vec<SweepConfig> {
    NAMES.iter().map(|n| preset(n).expect("known preset")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_round_trip() {
        for cfg in all() {
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            assert_eq!(SweepConfig::from_toml(&text).unwrap(), cfg);
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn preset_parameters() {
        let h = preset("heston_gamma").unwrap();
        let sc = h.points().unwrap()[0].1;
        assert!((sc.maturity - 6.0 / 52.0).abs() < 1e-15);
        assert_eq!((sc.anchor.x_bar, sc.anchor.y_bar), (sc.x, sc.y));
        let r = preset("reciprocal_heston_gamma").unwrap();
        assert_eq!(r.scenario.maturity, 0.25);
        assert_eq!(r.model.feller(), Some(true));
    }
}
