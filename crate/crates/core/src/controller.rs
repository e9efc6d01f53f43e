//! Receding-horizon loop: smooth the virtual system over the horizon, pull
//! the input block out of the mean trajectory, apply it to the plant.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::dynamics::MatrixDynamics;
use crate::enks::{smooth_horizon_with, SmootherOptions};
use crate::error::{check_shape, Error, Result};
use crate::stream::NoiseStreams;
use crate::virtualsys::{
    build_virtual_system, AugmentedState, ConstraintSpec, InputTransform, MpcWeights, VirtualSystem,
};

/// Which part of the estimated input sequence is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApplyMode {
    /// Apply the first input, re-plan next step.
    #[default]
    FirstAction,
    /// Return the whole horizon of inputs.
    FullHorizon,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub ensemble_n: usize,
    pub weights: MpcWeights,
    pub constraint: Option<ConstraintSpec>,
    /// Widening from the plant's narrow input to the virtual system's
    /// `l × m` input. The model then takes the wide input.
    pub input_transform: Option<InputTransform>,
    pub apply_mode: ApplyMode,
    /// Bias each step's process noise by the previous plan's increments,
    /// shifted one step.
    pub warm_start: bool,
    pub seed: u64,
    pub track_cov: bool,
    /// Input assumed applied before the first step; zero when absent.
    pub initial_input: Option<DMatrix<f64>>,
}

impl ControllerConfig {
    /// Horizon 5, 100 members, first action only, no warm start.
    pub fn new(weights: MpcWeights, seed: u64) -> Self {
        Self {
            horizon: 5,
            ensemble_n: 100,
            weights,
            constraint: None,
            input_transform: None,
            apply_mode: ApplyMode::FirstAction,
            warm_start: false,
            seed,
            track_cov: false,
            initial_input: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.ensemble_n < 2 {
            return Err(Error::InvalidConfig(format!(
                "ensemble needs at least 2 members, got {}",
                self.ensemble_n
            )));
        }
        Ok(())
    }

    /// Virtual system of `model` under these weights and constraint.
    pub fn virtual_system(&self, model: Arc<dyn MatrixDynamics>) -> Result<VirtualSystem> {
        let vs = build_virtual_system(model, self.weights.clone())?;
        Ok(match &self.constraint {
            Some(c) => vs.with_constraint(c.clone()),
            None => vs,
        })
    }
}

/// Output of one controller invocation.
#[derive(Debug, Clone)]
pub struct MpcOutput {
    /// One plant input for [`ApplyMode::FirstAction`], `H` otherwise.
    pub controls: Vec<DMatrix<f64>>,
    /// Smoothed mean trajectory, slice 0 being the current state.
    pub mean: Vec<AugmentedState>,
    pub jitter_events: usize,
}

/// One receding-horizon solve from `plant_state` with the input `prev_u`
/// applied last (both in plant shape).
pub fn mpc_step(
    plant_state: &DMatrix<f64>,
    prev_u: &DMatrix<f64>,
    cfg: &ControllerConfig,
    vs: &VirtualSystem,
    streams: &NoiseStreams,
) -> Result<MpcOutput> {
    mpc_step_biased(plant_state, prev_u, cfg, vs, streams, None)
}

fn mpc_step_biased(
    plant_state: &DMatrix<f64>,
    prev_u: &DMatrix<f64>,
    cfg: &ControllerConfig,
    vs: &VirtualSystem,
    streams: &NoiseStreams,
    bias: Option<Vec<DMatrix<f64>>>,
) -> Result<MpcOutput> {
    cfg.validate()?;
    let wide_u = match &cfg.input_transform {
        Some(t) => t.augment(prev_u)?,
        None => prev_u.clone(),
    };
    let x0 = AugmentedState::at_rest(plant_state.clone(), wide_u)?;
    let y_refs = vec![vs.reference_observation(); cfg.horizon];
    let options = SmootherOptions {
        track_cov: cfg.track_cov,
        process_bias: bias,
    };
    let out = smooth_horizon_with(&x0, &y_refs, vs, cfg.ensemble_n, streams, &options)?;
    let take = match cfg.apply_mode {
        ApplyMode::FirstAction => 1,
        ApplyMode::FullHorizon => cfg.horizon,
    };
    let controls = out.mean[1..=take]
        .iter()
        .map(|s| match &cfg.input_transform {
            Some(t) => t.reconstruct(&s.u),
            None => Ok(s.u.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    if controls.iter().any(|u| u.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("extracted control"));
    }
    Ok(MpcOutput {
        controls,
        mean: out.mean,
        jitter_events: out.jitter_events,
    })
}

/// `‖field − ref‖²_F / entries`. Named after the metric it reports,
/// though no square root is taken; see [`rmse_sqrt`].
pub fn rmse(field: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    check_shape("rmse field vs reference", reference.shape(), field.shape())?;
    Ok((field - reference).norm_squared() / field.len() as f64)
}

pub fn rmse_sqrt(field: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    rmse(field, reference).map(f64::sqrt)
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    /// Input applied at this step.
    pub control: DMatrix<f64>,
    pub control_norm: f64,
    /// Metric of the plant state reached after applying `control`.
    pub rmse: f64,
    pub wall_seconds: f64,
    pub jitter_events: usize,
    /// Plant state after the step, kept on snapshot steps only.
    pub snapshot: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopTrace {
    pub initial_rmse: f64,
    pub initial_state: DMatrix<f64>,
    pub steps: Vec<StepRecord>,
    pub final_state: DMatrix<f64>,
}

impl ClosedLoopTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rmse_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.rmse).collect()
    }

    pub fn final_rmse(&self) -> f64 {
        self.steps.last().map_or(self.initial_rmse, |s| s.rmse)
    }
}

/// Closed-loop run without state snapshots.
pub fn run_closed_loop(
    plant: &dyn MatrixDynamics,
    model: Arc<dyn MatrixDynamics>,
    cfg: &ControllerConfig,
    steps: usize,
    x_init: &DMatrix<f64>,
) -> Result<ClosedLoopTrace> {
    run_closed_loop_with(plant, model, cfg, steps, x_init, None)
}

/// Closed-loop run; `snapshot_stride` keeps the plant state every that many
/// steps, plus the last one.
///
/// The smoother consults `model`, inputs act on `plant`.
pub fn run_closed_loop_with(
    plant: &dyn MatrixDynamics,
    model: Arc<dyn MatrixDynamics>,
    cfg: &ControllerConfig,
    steps: usize,
    x_init: &DMatrix<f64>,
    snapshot_stride: Option<usize>,
) -> Result<ClosedLoopTrace> {
    cfg.validate()?;
    check_shape(
        "plant vs model state",
        model.state_shape(),
        plant.state_shape(),
    )?;
    check_shape("initial plant state", plant.state_shape(), x_init.shape())?;
    if snapshot_stride == Some(0) {
        return Err(Error::InvalidConfig(
            "snapshot stride must be at least 1".into(),
        ));
    }
    let vs = cfg.virtual_system(model)?;
    let x_ref = cfg.weights.x_ref().clone();
    let (pl, pc) = plant.input_shape();
    let root = NoiseStreams::new(cfg.seed);

    let mut state = x_init.clone();
    let mut prev_u = match &cfg.initial_input {
        Some(u) => {
            check_shape("initial input", (pl, pc), u.shape())?;
            u.clone()
        }
        None => DMatrix::zeros(pl, pc),
    };
    let mut plan: Option<Vec<AugmentedState>> = None;
    let mut queued: Vec<DMatrix<f64>> = Vec::new();
    let mut records = Vec::with_capacity(steps);
    let initial_rmse = rmse(&state, &x_ref)?;

    for k in 0..steps {
        let started = Instant::now();
        let mut jitter_events = 0;
        if queued.is_empty() {
            let bias = if cfg.warm_start {
                plan.as_ref()
                    .map(|p| shifted_increments(p, cfg.horizon, &vs))
            } else {
                None
            };
            let out = mpc_step_biased(&state, &prev_u, cfg, &vs, &root.derive(k as u64), bias)?;
            jitter_events = out.jitter_events;
            queued = out.controls;
            queued.reverse();
            plan = Some(out.mean);
        }
        let u = queued.pop().expect("refilled above");
        let wall_seconds = started.elapsed().as_secs_f64();
        check_shape("extracted control vs plant input", (pl, pc), u.shape())?;
        state = plant.step(&state, &u)?;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant state"));
        }
        let keep = snapshot_stride.is_some_and(|s| k % s == 0 || k + 1 == steps);
        records.push(StepRecord {
            step: k,
            control_norm: u.norm(),
            rmse: rmse(&state, &x_ref)?,
            wall_seconds,
            jitter_events,
            snapshot: keep.then(|| state.clone()),
            control: u.clone(),
        });
        prev_u = u;
    }
    Ok(ClosedLoopTrace {
        initial_rmse,
        initial_state: x_init.clone(),
        steps: records,
        final_state: state,
    })
}

fn shifted_increments(
    plan: &[AugmentedState],
    horizon: usize,
    vs: &VirtualSystem,
) -> Vec<DMatrix<f64>> {
    let zero = DMatrix::zeros(vs.input_rows(), vs.cols());
    (0..horizon)
        .map(|t| {
            plan.get(t + 2)
                .map_or_else(|| zero.clone(), |s| s.du.clone())
        })
        .collect()
}
