//! Experiment configuration files (TOML).
//!
//! Every field has a default, so a file only needs `kind`. Unknown keys are
//! rejected to catch typos.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use inferential_control::controller::{ApplyMode, ControllerConfig};
use inferential_control::dynamics::{BoundaryCondition, BurgersConfig, ControlMode};
use inferential_control::virtualsys::{ConstraintFn, ConstraintSpec, InputBound, InputBox, MpcWeights};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BurgersBoundary,
    BurgersPointwise,
    LinearOracle,
    BaselineCompare,
    ScalingTable,
}

impl ExperimentKind {
    pub fn is_comparison(self) -> bool {
        matches!(self, Self::BaselineCompare | Self::ScalingTable)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::steps")]
    pub steps: usize,
    #[serde(default = "defaults::output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "defaults::stride")]
    pub snapshot_stride: usize,
    /// Fill the `wall_ms` columns; off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub burgers: BurgersSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub constraint: Option<ConstraintSection>,
    #[serde(default)]
    pub linear: LinearSection,
    #[serde(default)]
    pub baseline: BaselineSection,
    #[serde(default)]
    pub scaling: ScalingSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Control {
    Boundary,
    Pointwise,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurgersSection {
    pub grid_n: usize,
    pub nu: f64,
    pub dt: f64,
    /// Plant steps per control step.
    pub substeps: usize,
    pub boundary: Boundary,
    /// Overrides the mode implied by the experiment kind.
    pub control: Option<Control>,
    /// Seed of the initial field; the experiment seed when absent.
    pub initial_seed: Option<u64>,
}

impl Default for BurgersSection {
    fn default() -> Self {
        Self {
            grid_n: 32,
            nu: 0.005,
            dt: 0.001,
            substeps: 20,
            boundary: Boundary::Periodic,
            control: None,
            initial_seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Apply {
    FirstAction,
    FullHorizon,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub horizon: usize,
    pub ensemble: usize,
    /// Diagonal weights: state tracking, input level, input increment.
    pub r: f64,
    pub q_u: f64,
    pub q_du: f64,
    /// Exploration multiplier on all noise covariances.
    pub scale: f64,
    /// Uniform state and input references.
    pub x_ref: f64,
    pub u_ref: f64,
    pub warm_start: bool,
    pub apply: Apply,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            horizon: 5,
            ensemble: 100,
            r: 0.01,
            q_u: 100.0,
            q_du: 1000.0,
            scale: 1.0,
            x_ref: 1.0,
            u_ref: 0.0,
            warm_start: false,
            apply: Apply::FirstAction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundShape {
    /// One-sided rows `u − u_max` and `−u − u_max` per input entry.
    Box,
    /// One row per column on `max|u| − u_max`.
    Norm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    pub u_max: f64,
    #[serde(default = "defaults::bound_shape")]
    pub shape: BoundShape,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::barrier_noise")]
    pub noise_var: f64,
    #[serde(default = "defaults::yes")]
    pub reobserve_history: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSection {
    pub n: usize,
    pub l: usize,
    pub m: usize,
    pub problem_seed: u64,
    pub horizon: usize,
    pub ensembles: Vec<usize>,
    /// Smoother seeds per ensemble size, counted up from the experiment seed.
    pub seeds: usize,
}

impl Default for LinearSection {
    fn default() -> Self {
        Self {
            n: 4,
            l: 1,
            m: 1,
            problem_seed: 0,
            horizon: 4,
            ensembles: vec![100, 1_000, 10_000],
            seeds: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    ItMpc,
    VectorEnks,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub method: BaselineMethod,
    pub rollouts: usize,
    pub temperatures: Vec<f64>,
    /// Variance of the per-entry input perturbations.
    pub noise_var: f64,
    /// Number of seeds, counted up from the experiment seed.
    pub seeds: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            method: BaselineMethod::ItMpc,
            rollouts: 1000,
            temperatures: vec![0.1, 1.0, 10.0],
            noise_var: 1.0,
            seeds: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalingSection {
    pub grids: Vec<usize>,
    pub budget_bytes: u64,
}

impl Default for ScalingSection {
    fn default() -> Self {
        Self {
            grids: vec![16, 32, 64],
            budget_bytes: 2_000_000_000,
        }
    }
}

mod defaults {
    use super::BoundShape;
    use std::path::PathBuf;

    pub fn steps() -> usize {
        200
    }
    pub fn output_dir() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn stride() -> usize {
        50
    }
    pub fn bound_shape() -> BoundShape {
        BoundShape::Box
    }
    pub fn alpha() -> f64 {
        10.0
    }
    pub fn beta() -> f64 {
        0.5
    }
    pub fn barrier_noise() -> f64 {
        1e-4
    }
    pub fn yes() -> bool {
        true
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Parse(msg.to_string()));
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride must be at least 1");
        }
        if self.kind == ExperimentKind::LinearOracle && (self.linear.ensembles.is_empty() || self.linear.seeds == 0) {
            return bad("linear oracle needs at least one ensemble size and one seed");
        }
        if self.kind == ExperimentKind::BaselineCompare && self.baseline.seeds == 0 {
            return bad("baseline comparison needs at least one seed");
        }
        if self.kind == ExperimentKind::BaselineCompare
            && self.baseline.method == BaselineMethod::ItMpc
            && self.baseline.temperatures.is_empty()
        {
            return bad("temperature sweep is empty");
        }
        if self.kind == ExperimentKind::ScalingTable && self.scaling.grids.is_empty() {
            return bad("scaling table needs at least one grid");
        }
        Ok(())
    }

    pub fn control_mode(&self) -> ControlMode {
        match self.burgers.control {
            Some(Control::Boundary) => ControlMode::Boundary,
            Some(Control::Pointwise) => ControlMode::Pointwise,
            None => match self.kind {
                ExperimentKind::BurgersPointwise | ExperimentKind::BaselineCompare => ControlMode::Pointwise,
                _ => ControlMode::Boundary,
            },
        }
    }

    pub fn burgers_config(&self, grid_n: usize) -> BurgersConfig {
        BurgersConfig {
            grid_n,
            nu: self.burgers.nu,
            dt: self.burgers.dt,
            control_mode: self.control_mode(),
            substeps: self.burgers.substeps,
            boundary: match self.burgers.boundary {
                Boundary::Periodic => BoundaryCondition::Periodic,
                Boundary::Neumann => BoundaryCondition::Neumann,
            },
        }
    }

    pub fn initial_seed(&self) -> u64 {
        self.burgers.initial_seed.unwrap_or(self.seed)
    }

    /// Diagonal weights and uniform references sized for `burgers`.
    pub fn burgers_weights(&self, burgers: &BurgersConfig) -> inferential_control::Result<MpcWeights> {
        let c = &self.controller;
        let (n, m) = burgers.state_shape();
        let (l, lm) = burgers.control_shape();
        MpcWeights::isotropic(
            c.r,
            c.q_u,
            c.q_du,
            DMatrix::from_element(n, m, c.x_ref),
            DMatrix::from_element(l, lm, c.u_ref),
            c.scale,
        )
    }

    pub fn controller_config(&self, weights: MpcWeights, seed: u64) -> inferential_control::Result<ControllerConfig> {
        let c = &self.controller;
        let mut cfg = ControllerConfig::new(weights, seed);
        cfg.horizon = c.horizon;
        cfg.ensemble_n = c.ensemble;
        cfg.warm_start = c.warm_start;
        cfg.apply_mode = match c.apply {
            Apply::FirstAction => ApplyMode::FirstAction,
            Apply::FullHorizon => ApplyMode::FullHorizon,
        };
        if let Some(k) = &self.constraint {
            let g: Arc<dyn ConstraintFn> = match k.shape {
                BoundShape::Box => Arc::new(InputBox { u_max: k.u_max }),
                BoundShape::Norm => Arc::new(InputBound { u_max: k.u_max }),
            };
            cfg.constraint =
                Some(ConstraintSpec::new(g, k.alpha, k.beta, k.noise_var)?.with_history(k.reobserve_history));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_alone_is_enough() {
        let cfg = ExperimentConfig::from_toml("kind = \"burgers_boundary\"").unwrap();
        assert_eq!(cfg.steps, 200);
        assert_eq!(cfg.control_mode(), ControlMode::Boundary);
        assert_eq!(cfg.burgers.boundary, Boundary::Periodic);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "kind = \"burgers_pointwise\"\nsteps = 3\n[controller]\nq_du = 100.0\n[constraint]\nu_max = 10.0\n",
        )
        .unwrap();
        assert_eq!(cfg.steps, 3);
        assert_eq!(cfg.controller.q_du, 100.0);
        assert_eq!(cfg.control_mode(), ControlMode::Pointwise);
        let k = cfg.constraint.unwrap();
        assert_eq!(k.shape, BoundShape::Box);
        assert!(k.reobserve_history);
    }

    #[test]
    fn typos_are_parse_errors() {
        assert!(matches!(
            ExperimentConfig::from_toml("kind = \"burgers_boundary\"\nstep = 3"),
            Err(CliError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("kind = \"burgers\""),
            Err(CliError::Parse(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("kind = \"burgers_boundary\"\nsnapshot_stride = 0"),
            Err(CliError::Parse(_))
        ));
    }
}
