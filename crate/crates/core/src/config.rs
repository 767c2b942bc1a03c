//! Experiment configuration: declarative TOML with strict key checking,
//! dotted-path overrides, and a resolved manifest for bit-exact reruns.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{AmcilcGains, PidGains};
use crate::dynamics::{PerturbationProfile, RigidModel};
use crate::error::{Error, Result};
use crate::fls::FlsConfig;
use crate::kinematics::{RobotParams, WorkspaceGrid};
use crate::shaper::ShaperDesign;
use crate::sim::{ControllerSelect, SimConfig};
use crate::trajectory::ReferenceTrajectory;

/// Full experiment description. Unknown keys are rejected everywhere.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub robot: RobotParams,
    /// True-plant mismatch relative deviations.
    pub plant: PlantSection,
    pub trajectory: TrajectorySection,
    pub controller: ControllerSection,
    pub shaper: ShaperSection,
    pub modal: ModalSection,
    pub workspace: WorkspaceGrid,
    pub sim: SimSection,
    pub compare: CompareSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub perturbation: PerturbationProfile,
    /// Motor viscous damping of the true plant (N m s/rad); 0 disables.
    pub motor_damping: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            perturbation: PerturbationProfile::default_mismatch(),
            motor_damping: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    /// "square", "butterfly", "pick_and_place", or "csv".
    pub kind: String,
    pub z_plane: f64,
    pub cycle_time: f64,
    pub dt: f64,
    /// Square side (m).
    pub side: f64,
    /// Butterfly scale (m).
    pub scale: f64,
    /// Pick-and-place horizontal span (m).
    pub span: f64,
    /// Pick-and-place lift (m).
    pub lift: f64,
    /// CSV path when kind = "csv".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            kind: "square".into(),
            z_plane: -0.8151,
            cycle_time: 2.0,
            dt: 1e-3,
            side: 0.2,
            // The butterfly path is long (several meters of arc); pair the
            // default scale with a cycle_time near 18 s.
            scale: 0.03,
            span: 0.3,
            lift: 0.1,
            path: None,
        }
    }
}

impl TrajectorySection {
    pub fn build(&self, params: &RobotParams) -> Result<ReferenceTrajectory> {
        match self.kind.as_str() {
            "square" => crate::trajectory::square_trajectory(
                params,
                self.side,
                self.z_plane,
                self.cycle_time,
                self.dt,
            ),
            "butterfly" => crate::trajectory::butterfly_trajectory(
                params,
                self.scale,
                self.z_plane,
                self.cycle_time,
                self.dt,
            ),
            "pick_and_place" => crate::trajectory::pick_and_place(
                params,
                self.span,
                self.lift,
                self.cycle_time,
                self.z_plane,
                self.dt,
            ),
            "csv" => {
                let path = self.path.as_ref().ok_or_else(|| {
                    Error::Config("trajectory.path required for kind = csv".into())
                })?;
                ReferenceTrajectory::from_csv(path)
            }
            other => Err(Error::Config(format!(
                "unknown trajectory kind '{other}' (square|butterfly|pick_and_place|csv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    /// "amcilc", "pidilc", or "afc".
    pub kind: String,
    /// Gain preset: "case1" (k = I) or "case2" (k = 15 I).
    pub preset: String,
    /// Explicit gain overrides; `None` falls back to the preset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<AmcilcGains>,
    pub fls: FlsConfig,
    pub pid_bootstrap: PidGains,
    pub pid_correction: PidGains,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            kind: "amcilc".into(),
            preset: "case2".into(),
            gains: None,
            fls: FlsConfig::default(),
            pid_bootstrap: PidGains::bootstrap(),
            pid_correction: PidGains::ilc(),
        }
    }
}

impl ControllerSection {
    pub fn amcilc_gains(&self) -> Result<AmcilcGains> {
        let gains = match (&self.gains, self.preset.as_str()) {
            (Some(g), _) => g.clone(),
            (None, "case1") => AmcilcGains::case1(),
            (None, "case2") => AmcilcGains::case2(),
            (None, "afc") => AmcilcGains::afc(),
            (None, other) => {
                return Err(Error::Config(format!("unknown gain preset '{other}'")));
            }
        };
        gains.validate()?;
        Ok(gains)
    }

    pub fn select(&self, kind: &str) -> Result<ControllerSelect> {
        self.fls.validate()?;
        Ok(match kind {
            "amcilc" => ControllerSelect::Amcilc {
                gains: self.amcilc_gains()?,
                fls: self.fls.clone(),
            },
            "pidilc" => ControllerSelect::Pidilc {
                bootstrap: self.pid_bootstrap,
                correction: self.pid_correction,
            },
            "afc" => {
                let gains = match &self.gains {
                    Some(g) => {
                        g.validate()?;
                        g.clone()
                    }
                    None => AmcilcGains::afc(),
                };
                ControllerSelect::Afc {
                    gains,
                    fls: self.fls.clone(),
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown controller '{other}' (amcilc|pidilc|afc)"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShaperSection {
    pub enabled: bool,
    pub f_n_hz: f64,
    pub zeta_d: f64,
    pub k_t: f64,
    pub design: ShaperDesign,
    /// J2 weighting source: "uniform" or "workspace".
    pub weighting: String,
    /// Points of the uniform weighting.
    pub weighting_points: usize,
}

impl Default for ShaperSection {
    fn default() -> Self {
        Self {
            enabled: true,
            f_n_hz: 16.4,
            zeta_d: 0.075,
            k_t: 0.83,
            design: ShaperDesign::default(),
            weighting: "uniform".into(),
            weighting_points: 81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModalSection {
    pub servo_stiffness: f64,
    pub n_modes: usize,
    pub zeta: f64,
}

impl Default for ModalSection {
    fn default() -> Self {
        Self {
            servo_stiffness: crate::modal::DEFAULT_SERVO_STIFFNESS,
            n_modes: crate::modal::DEFAULT_BANK_MODES,
            zeta: crate::modal::DEFAULT_MODAL_ZETA,
        }
    }
}

impl ModalSection {
    pub fn options(&self) -> crate::modal::ModalOptions {
        crate::modal::ModalOptions {
            n_modes: self.n_modes,
            zeta: self.zeta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_dot_max: Option<f64>,
    pub noise_std: f64,
    pub seed: u64,
    /// Soft torque threshold (N m); exceedances are logged, never enforced.
    pub torque_warning: f64,
    /// Write the iteration memory after each iteration for resumable runs.
    pub checkpoint_memory: bool,
    /// Memory checkpoint to resume from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resume_memory: Option<PathBuf>,
    /// Iteration index the checkpoint was written at; the run continues with
    /// the next iteration.
    pub resume_iteration: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            iterations: 21,
            theta_dot_max: None,
            noise_std: 0.0,
            seed: 42,
            torque_warning: 50.0,
            checkpoint_memory: false,
            resume_memory: None,
            resume_iteration: 0,
        }
    }
}

impl SimSection {
    pub fn sim_config(&self, dt: f64) -> SimConfig {
        SimConfig {
            dt,
            iterations: self.iterations,
            theta_dot_max: self.theta_dot_max,
            noise_std: self.noise_std,
            seed: self.seed,
            torque_warning: self.torque_warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub controllers: Vec<String>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            controllers: vec!["amcilc".into(), "pidilc".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parse from TOML text after applying `key.path=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
        let mut value = toml::Value::Table(table);
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        let config: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("config error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.validate()?;
        self.plant.perturbation.validate()?;
        if self.plant.motor_damping < 0.0 {
            return Err(Error::Config(
                "plant.motor_damping must be nonnegative".into(),
            ));
        }
        self.controller.fls.validate()?;
        self.workspace.validate()?;
        Ok(())
    }

    /// Nominal controller model: Table-1 parameters, no damping.
    pub fn nominal_model(&self) -> RigidModel {
        RigidModel::nominal(self.robot.clone())
    }

    /// True plant with the configured mismatch and damping.
    pub fn plant_model(&self) -> RigidModel {
        let mut params = self.robot.clone();
        params.b_motor = self.plant.motor_damping;
        let mut model = RigidModel::perturbed(params, self.plant.perturbation);
        model.include_motor_damping = self.plant.motor_damping > 0.0;
        model
    }

    /// Serialized resolved configuration, sufficient to reproduce a run.
    pub fn manifest(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# serialization failed: {e}"))
    }
}

/// Apply one `dotted.path=value` override onto a TOML tree.
fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{entry}' must be key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.is_empty() || keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override path '{path}'")));
    }
    // Parse the value as TOML; fall back to a string literal.
    let parsed: toml::Value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));

    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
        node = table
            .entry((*key).to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips_through_manifest() {
        let config = ExperimentConfig::default();
        config.validate().unwrap();
        let manifest = config.manifest();
        let back = ExperimentConfig::from_toml(&manifest, &[]).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn defaults_are_reference_values() {
        let c = ExperimentConfig::default();
        assert_eq!(c.robot.l1, 0.375);
        assert_eq!(c.robot.n_gear, 15.0);
        assert_eq!(c.plant.motor_damping, 0.05);
        assert_eq!(c.plant.perturbation.m_p, 0.05);
        assert_eq!(c.shaper.f_n_hz, 16.4);
        assert_eq!(c.shaper.k_t, 0.83);
        assert_eq!(c.shaper.design.zeta_design, 0.075);
        assert_eq!(c.controller.fls.rule_count, 9);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "[robot]\nl1 = 0.4\nbogus = 1.0\n";
        match ExperimentConfig::from_toml(text, &[]) {
            Err(Error::Config(msg)) => assert!(msg.contains("bogus"), "{msg}"),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn overrides_win_over_file_values() {
        let text = "[sim]\niterations = 5\n";
        let config = ExperimentConfig::from_toml(
            text,
            &[
                "sim.iterations=9".into(),
                "robot.l1=0.4".into(),
                "trajectory.kind=\"butterfly\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(config.sim.iterations, 9);
        assert_eq!(config.robot.l1, 0.4);
        assert_eq!(config.trajectory.kind, "butterfly");
    }

    #[test]
    fn bad_override_rejected() {
        assert!(ExperimentConfig::from_toml("", &["no_equals".into()]).is_err());
        assert!(ExperimentConfig::from_toml("", &["robot.nonexistent=1".into()]).is_err());
    }

    #[test]
    fn plant_model_carries_damping_and_mismatch() {
        let c = ExperimentConfig::default();
        let plant = c.plant_model();
        assert!(plant.include_motor_damping);
        assert_eq!(plant.params.b_motor, 0.05);
        assert_eq!(plant.perturbation.m_p, 0.05);
        let nominal = c.nominal_model();
        assert!(!nominal.include_motor_damping);
        assert!(nominal.perturbation.is_zero());
    }

    #[test]
    fn controller_selection() {
        let c = ExperimentConfig::default();
        assert_eq!(c.controller.select("amcilc").unwrap().name(), "amcilc");
        assert_eq!(c.controller.select("pidilc").unwrap().name(), "pidilc");
        assert_eq!(c.controller.select("afc").unwrap().name(), "afc");
        assert!(c.controller.select("mystery").is_err());
        let g = c.controller.amcilc_gains().unwrap();
        assert_eq!(g.k_gain, [15.0; 3]);
    }
}
