//! JSON experiment configuration.
//!
//! The scenario block mirrors the simulation-parameter table field for field
//! in file-boundary units (m, Hz, dBm, dB, degrees); everything is converted
//! to SI/linear on load. Every field is optional and defaults to the
//! reference setup.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::geometry::{RisState, Scenario, Vec3};
use crate::units::{db_to_linear, dbm_to_watts, linear_to_db, watts_to_dbm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub tx_position_m: [f64; 3],
    pub rx_positions_m: Vec<[f64; 3]>,
    pub ris_position_m: [f64; 3],
    pub ris_orientation_deg: f64,
    pub wavelength_m: f64,
    pub element_spacing_m: f64,
    pub ris_rows: usize,
    pub ris_cols: usize,
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub num_symbols: usize,
    /// Per-subcarrier transmit power.
    pub transmit_power_dbm: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub noise_figure_db: f64,
    pub ifft_size: usize,
    pub speed_of_light_m_per_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::from_model(&Scenario::table1(), &RisState::table1())
    }
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn a3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl ScenarioConfig {
    pub fn from_model(sc: &Scenario, st: &RisState) -> Self {
        ScenarioConfig {
            tx_position_m: a3(&sc.tx),
            rx_positions_m: sc.anchors.iter().map(a3).collect(),
            ris_position_m: a3(&st.position),
            ris_orientation_deg: st.alpha.to_degrees(),
            wavelength_m: sc.wavelength,
            element_spacing_m: sc.element_spacing,
            ris_rows: sc.ris_rows,
            ris_cols: sc.ris_cols,
            num_subcarriers: sc.num_subcarriers,
            subcarrier_spacing_hz: sc.subcarrier_spacing,
            num_symbols: sc.num_symbols,
            transmit_power_dbm: watts_to_dbm(sc.transmit_power),
            noise_psd_dbm_per_hz: watts_to_dbm(sc.noise_psd),
            noise_figure_db: linear_to_db(sc.noise_factor),
            ifft_size: sc.ifft_size,
            speed_of_light_m_per_s: sc.speed_of_light,
        }
    }

    /// Validated scenario and true RIS state.
    pub fn to_model(&self) -> Result<(Scenario, RisState)> {
        let sc = Scenario {
            tx: v3(self.tx_position_m),
            anchors: self.rx_positions_m.iter().copied().map(v3).collect(),
            wavelength: self.wavelength_m,
            element_spacing: self.element_spacing_m,
            ris_rows: self.ris_rows,
            ris_cols: self.ris_cols,
            num_subcarriers: self.num_subcarriers,
            subcarrier_spacing: self.subcarrier_spacing_hz,
            num_symbols: self.num_symbols,
            transmit_power: dbm_to_watts(self.transmit_power_dbm),
            noise_psd: dbm_to_watts(self.noise_psd_dbm_per_hz),
            noise_factor: db_to_linear(self.noise_figure_db),
            ifft_size: self.ifft_size,
            speed_of_light: self.speed_of_light_m_per_s,
        };
        sc.validate().map_err(|e| Error::Config(e.to_string()))?;
        let st = RisState::new(v3(self.ris_position_m), self.ris_orientation_deg.to_radians());
        st.check_nondegenerate(&sc).map_err(|e| Error::Config(e.to_string()))?;
        Ok((sc, st))
    }
}

/// How RIS phase profiles are drawn across an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfilePolicy {
    /// One profile for the whole experiment; bounds are exact per point.
    #[default]
    PerExperiment,
    /// A fresh profile per trial; bound columns are RMS over trials.
    PerTrial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContourConfig {
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub z_m: f64,
    pub orientations_deg: Vec<f64>,
    pub rx_positions_m: Vec<[f64; 3]>,
    pub transmit_power_dbm: f64,
}

impl Default for ContourConfig {
    fn default() -> Self {
        ContourConfig {
            x_range_m: [-10.0, 10.0],
            y_range_m: [-10.0, 10.0],
            nx: 21,
            ny: 21,
            z_m: -1.0,
            orientations_deg: vec![0.0, 30.0],
            rx_positions_m: vec![[0.0, -5.0, 0.0], [0.0, 5.0, 0.0]],
            transmit_power_dbm: 34.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub trials: usize,
    pub profile_policy: ProfilePolicy,
    /// Force σ² = 0.
    pub noise_free: bool,
    /// A sweep point is flagged when more than this fraction of trials fail.
    pub failure_flag_fraction: f64,
    pub powers_dbm: Vec<f64>,
    /// Bandwidth axis: subcarrier counts at the scenario's Δf.
    pub num_subcarriers: Vec<usize>,
    pub bandwidth_power_dbm: f64,
    /// Receiver counts for the TOA-only comparison (circle layout).
    pub anchor_counts: Vec<usize>,
    pub circle_radius_m: f64,
    pub contour: ContourConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 1,
            trials: 200,
            profile_policy: ProfilePolicy::PerExperiment,
            noise_free: false,
            failure_flag_fraction: 0.2,
            powers_dbm: (0..=12).map(|i| 10.0 + 2.0 * i as f64).collect(),
            num_subcarriers: vec![16, 32, 64, 128],
            bandwidth_power_dbm: 20.0,
            anchor_counts: vec![2, 3, 4, 5, 6],
            circle_radius_m: 5.0,
            contour: ContourConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("experiment: {what}")));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.powers_dbm.is_empty() || self.num_subcarriers.is_empty() || self.anchor_counts.is_empty() {
            return bad("sweep value lists must be nonempty");
        }
        if self.powers_dbm.iter().any(|p| !p.is_finite()) {
            return bad("powers must be finite");
        }
        if self.num_subcarriers.contains(&0) || self.anchor_counts.contains(&0) {
            return bad("subcarrier and anchor counts must be positive");
        }
        if !(self.circle_radius_m > 0.0) {
            return bad("circle radius must be positive");
        }
        if !(0.0..=1.0).contains(&self.failure_flag_fraction) {
            return bad("failure_flag_fraction must lie in [0, 1]");
        }
        let c = &self.contour;
        if c.nx == 0 || c.ny == 0 || c.orientations_deg.is_empty() || c.rx_positions_m.is_empty() {
            return bad("contour grid, orientations and receivers must be nonempty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
    pub experiment: ExperimentConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.to_model()?;
        self.estimator.validate()?;
        self.experiment.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
