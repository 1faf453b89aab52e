//! Experiment deck format. Every field except `plant.J` has a default, and a
//! parsed file serializes back with all defaults filled in.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use l1gp_core::gp::{SeKernel, UniformBoundConfig};
use l1gp_core::l1::{ControlMode, ControllerConfig};
use l1gp_core::learner::{BoundSignal, Gating, LearnerConfig};
use l1gp_core::plant::{DelayPath, PlantConfig, UncertaintyKind, UncertaintySchedule, UncertaintySegment};
use l1gp_core::scenario::{MarginOptions, Reference, ScenarioConfig};

use crate::CliError;

/// A 3×3 matrix given either by its diagonal or in full (row-major).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matrix3 {
    Diagonal([f64; 3]),
    Full([[f64; 3]; 3]),
}

impl Matrix3 {
    pub fn to_dmatrix(self) -> DMatrix<f64> {
        match self {
            Self::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_row_slice(&d)),
            Self::Full(rows) => DMatrix::from_fn(3, 3, |i, j| rows[i][j]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default = "defaults::duration")]
    pub duration: f64,
    #[serde(default = "defaults::step")]
    pub step: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::decimation")]
    pub record_decimation: usize,
    #[serde(default)]
    pub bound_signal: BoundSignal,
    #[serde(default = "defaults::blowup")]
    pub blowup: f64,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub controller: ControllerSection,
    pub plant: PlantSection,
    #[serde(default)]
    pub learner: LearnerSection,
    #[serde(default)]
    pub margin: MarginSection,
    #[serde(default)]
    pub bound_check: BoundCheckSection,
}

mod defaults {
    pub fn duration() -> f64 {
        60.0
    }
    pub fn step() -> f64 {
        0.001
    }
    pub fn decimation() -> usize {
        10
    }
    pub fn blowup() -> f64 {
        100.0
    }
    pub fn yes() -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub mode: ControlMode,
    pub a_m: Matrix3,
    /// Defaults to `J⁻¹`.
    pub b_m: Option<Matrix3>,
    pub c_m: Matrix3,
    pub ts: f64,
    pub omega_c: f64,
    pub omega_l: f64,
    pub omega_0: f64,
    pub x_hat0: [f64; 3],
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            mode: ControlMode::L1Gp,
            a_m: Matrix3::Diagonal([-3.0; 3]),
            b_m: None,
            c_m: Matrix3::Diagonal([1.0; 3]),
            ts: 0.001,
            omega_c: 80.0,
            omega_l: 0.01,
            omega_0: 1.0,
            x_hat0: [0.5; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Principal moments of inertia.
    #[serde(rename = "J")]
    pub inertia: [f64; 3],
    #[serde(default)]
    pub x0: [f64; 3],
    #[serde(default)]
    pub input_delay: f64,
    #[serde(default)]
    pub delay_path: DelayPath,
    /// Gain injected by the baseline controller; defaults to `controller.a_m`.
    #[serde(default)]
    pub a_m_baseline: Option<Matrix3>,
    #[serde(default = "default_uncertainty")]
    pub uncertainty: Vec<UncertaintySegment>,
}

fn default_uncertainty() -> Vec<UncertaintySegment> {
    vec![UncertaintySegment {
        start: 0.0,
        kind: UncertaintyKind::Poly15,
    }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub enabled: bool,
    pub t_data: f64,
    pub n_update: usize,
    pub gating: Gating,
    pub max_points: usize,
    pub noise_std: f64,
    pub sg_window: usize,
    pub sg_order: usize,
    pub grid_kappa: f64,
    pub grid_points: usize,
    pub kernel: SeKernel,
    pub bound: UniformBoundConfig,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let d = LearnerConfig::default();
        Self {
            enabled: true,
            t_data: d.t_data,
            n_update: d.n_update,
            gating: d.gating,
            max_points: d.max_points,
            noise_std: d.noise_std,
            sg_window: d.sg_window,
            sg_order: d.sg_order,
            grid_kappa: d.grid_kappa,
            grid_points: d.grid_points,
            kernel: d.kernel,
            bound: d.bound,
        }
    }
}

impl LearnerSection {
    pub fn to_core(&self) -> LearnerConfig {
        LearnerConfig {
            t_data: self.t_data,
            n_update: self.n_update,
            gating: self.gating,
            max_points: self.max_points,
            kernel: self.kernel,
            bound: self.bound,
            noise_std: self.noise_std,
            sg_window: self.sg_window,
            sg_order: self.sg_order,
            grid_kappa: self.grid_kappa,
            grid_points: self.grid_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarginSection {
    pub resolution: f64,
    pub horizon: f64,
    pub upper: f64,
    /// Apply the delay from a snapshot of the undelayed run at this time.
    /// Defaults to 30 s in `l1gp` mode and to `t = 0` in `l1` mode.
    pub snapshot_time: Option<f64>,
    #[serde(default = "defaults::yes")]
    pub snapshot_in_l1gp: bool,
    pub freeze_learner: bool,
}

impl Default for MarginSection {
    fn default() -> Self {
        let d = MarginOptions::default();
        Self {
            resolution: d.resolution,
            horizon: d.horizon,
            upper: d.upper,
            snapshot_time: None,
            snapshot_in_l1gp: true,
            freeze_learner: d.freeze_learner,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundCheckSection {
    pub n_train: usize,
    pub n_probe: usize,
    /// Training inputs are drawn uniformly from `{‖x‖∞ ≤ train_kappa}`.
    pub train_kappa: f64,
    pub probe_kappa: f64,
    /// Function to learn; defaults to the first scheduled uncertainty.
    pub function: Option<UncertaintyKind>,
}

impl Default for BoundCheckSection {
    fn default() -> Self {
        Self {
            n_train: 50,
            n_probe: 500,
            train_kappa: 5.0,
            probe_kappa: 5.0,
            function: None,
        }
    }
}

impl FileConfig {
    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        let mut cfg = if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.materialize();
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    /// Replaces every derived default with its value.
    pub fn materialize(&mut self) {
        if self.controller.b_m.is_none() {
            self.controller.b_m = Some(Matrix3::Diagonal(self.plant.inertia.map(|j| 1.0 / j)));
        }
        if self.plant.a_m_baseline.is_none() {
            self.plant.a_m_baseline = Some(self.controller.a_m);
        }
        if self.margin.snapshot_time.is_none()
            && self.margin.snapshot_in_l1gp
            && self.controller.mode == ControlMode::L1Gp
        {
            self.margin.snapshot_time = Some(30.0);
        }
        if self.bound_check.function.is_none() {
            self.bound_check.function = self.plant.uncertainty.first().map(|s| s.kind);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    pub fn controller(&self) -> Result<ControllerConfig, CliError> {
        let c = &self.controller;
        let b_m = c
            .b_m
            .unwrap_or(Matrix3::Diagonal(self.plant.inertia.map(|j| 1.0 / j)));
        ControllerConfig::new(
            c.a_m.to_dmatrix(),
            b_m.to_dmatrix(),
            c.c_m.to_dmatrix(),
            c.ts,
            c.omega_c,
            c.omega_l,
            c.omega_0,
            c.mode,
            DVector::from_row_slice(&c.x_hat0),
        )
        .map_err(|e| CliError::Config(format!("controller: {e}")))
    }

    pub fn plant(&self) -> Result<PlantConfig, CliError> {
        let p = &self.plant;
        let schedule = UncertaintySchedule::new(p.uncertainty.clone())
            .map_err(|e| CliError::Config(format!("plant.uncertainty: {e}")))?;
        let a_bl = p.a_m_baseline.unwrap_or(self.controller.a_m).to_dmatrix();
        let mut plant = PlantConfig::new(p.inertia, DVector::from_row_slice(&p.x0), schedule, a_bl)
            .map_err(|e| CliError::Config(format!("plant: {e}")))?;
        plant.input_delay = p.input_delay;
        plant.delay_path = p.delay_path;
        Ok(plant)
    }

    pub fn scenario(&self) -> Result<ScenarioConfig, CliError> {
        let cfg = ScenarioConfig {
            duration: self.duration,
            step: self.step,
            reference: self.reference,
            controller: self.controller()?,
            plant: self.plant()?,
            learner: self.learner.enabled.then(|| self.learner.to_core()),
            seed: self.seed,
            record_decimation: self.record_decimation,
            bound_signal: self.bound_signal,
            blowup: self.blowup,
            oracle_sigma: false,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn margin_options(&self) -> MarginOptions {
        MarginOptions {
            resolution: self.margin.resolution,
            horizon: self.margin.horizon,
            upper: self.margin.upper,
            snapshot_time: self.margin.snapshot_time,
            freeze_learner: self.margin.freeze_learner,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[plant]\nJ = [0.011, 0.011, 0.021]\n";

    #[test]
    fn minimal_deck_resolves_to_reference_setup() {
        let mut cfg = FileConfig::from_toml(MINIMAL).unwrap();
        cfg.materialize();
        let s = cfg.scenario().unwrap();
        assert_eq!(s.duration, 60.0);
        assert_eq!(s.step, 0.001);
        assert!((s.controller.k_g()[(2, 2)] - 0.063).abs() < 1e-12);
        assert_eq!(cfg.margin.snapshot_time, Some(30.0));
        assert_eq!(cfg.bound_check.function, Some(UncertaintyKind::Poly15));
    }

    #[test]
    fn resolved_deck_round_trips() {
        let mut cfg = FileConfig::from_toml(MINIMAL).unwrap();
        cfg.materialize();
        let again = FileConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(FileConfig::from_json(&json).unwrap(), cfg);
    }

    #[test]
    fn missing_inertia_is_named() {
        let err = FileConfig::from_toml("[plant]\nx0 = [0.0, 0.0, 0.0]\n").unwrap_err();
        assert!(err.contains("J"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = FileConfig::from_toml("[plant]\nJ = [1.0, 1.0, 1.0]\nmass = 2.0\n").unwrap_err();
        assert!(err.contains("mass"), "{err}");
    }

    #[test]
    fn sections_parse() {
        let text = r#"
duration = 10.0
bound_signal = "grid_max"

[reference]
kind = "sinusoid"
amplitude = [1.0, 1.0, 1.0]
frequency = [0.5, 0.5, 0.5]

[controller]
mode = "l1"
a_m = [[-3.0, 0.0, 0.0], [0.0, -3.0, 0.0], [0.0, 0.0, -3.0]]

[plant]
J = [0.011, 0.011, 0.021]

[[plant.uncertainty]]
start = 0.0
kind = "poly15"

[[plant.uncertainty]]
start = 5.0
kind = "sine_switch"

[learner]
gating = { mode = "improvement", gamma_tol = 0.9 }

[learner.bound]
kappa = 15.0
xi = 0.001
delta = 0.05
lipschitz_f = 0.0
include_gamma = false
"#;
        let mut cfg = FileConfig::from_toml(text).unwrap();
        cfg.materialize();
        let s = cfg.scenario().unwrap();
        assert_eq!(s.controller.mode, ControlMode::L1);
        assert_eq!(s.plant.uncertainty.segments().len(), 2);
        assert_eq!(s.learner.unwrap().bound.delta, 0.05);
        assert_eq!(cfg.margin.snapshot_time, None);
        assert_eq!(s.bound_signal, BoundSignal::GridMax);
    }
}
