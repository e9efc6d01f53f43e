//! Information-theoretic (path-integral) sampling MPC.
//!
//! Perturb a nominal input sequence, roll each perturbation out through the
//! model, and average the sequences with weights `exp(−cost/T)`. The cost
//! is the same stage cost the smoother targets, summed over slices `1..=H`
//! of the virtual system started at `(x, u_prev, 0)`.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::controller::{rmse, ClosedLoopTrace, StepRecord};
use crate::dynamics::MatrixDynamics;
use crate::error::{check_shape, Error, Result};
use crate::matvar::{sample, MatrixNormalParams};
use crate::stream::{Channel, NoiseStreams};
use crate::virtualsys::{stage_cost, AugmentedState, MpcWeights};

/// Temperatures below this select the cheapest rollout outright.
pub const ARGMIN_TEMPERATURE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ItMpcConfig {
    pub rollouts: usize,
    pub temperature: f64,
    /// Row covariance of the input perturbations (`l×l`); columns are
    /// independent.
    pub noise_cov: DMatrix<f64>,
    pub horizon: usize,
}

impl ItMpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts < 2 {
            return Err(Error::InvalidConfig(format!(
                "IT-MPC needs at least 2 rollouts, got {}",
                self.rollouts
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Normalized weights `exp(−(c − c_min)/T)`. Non-finite costs get weight 0.
pub fn mppi_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let c_min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !c_min.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    if temperature < ARGMIN_TEMPERATURE {
        let best = costs
            .iter()
            .position(|&c| c == c_min)
            .expect("minimum is attained");
        return Ok((0..costs.len())
            .map(|i| f64::from(u8::from(i == best)))
            .collect());
    }
    let raw: Vec<f64> = costs
        .iter()
        .map(|&c| {
            if c.is_finite() {
                (-(c - c_min) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Weighted average of input sequences.
pub fn combine_rollouts(
    sequences: &[Vec<DMatrix<f64>>],
    costs: &[f64],
    temperature: f64,
) -> Result<Vec<DMatrix<f64>>> {
    if sequences.is_empty() || sequences.len() != costs.len() {
        return Err(Error::InvalidConfig(format!(
            "{} sequences for {} costs",
            sequences.len(),
            costs.len()
        )));
    }
    let weights = mppi_weights(costs, temperature)?;
    let mut out: Vec<DMatrix<f64>> = sequences[0]
        .iter()
        .map(|u| DMatrix::zeros(u.nrows(), u.ncols()))
        .collect();
    for (seq, &w) in sequences.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        for (acc, u) in out.iter_mut().zip(seq) {
            *acc += u * w;
        }
    }
    Ok(out)
}

/// Stage cost summed over the slices reached by applying `inputs` in turn.
pub fn rollout_cost(
    x: &DMatrix<f64>,
    prev_u: &DMatrix<f64>,
    inputs: &[DMatrix<f64>],
    model: &dyn MatrixDynamics,
    weights: &MpcWeights,
) -> Result<f64> {
    let mut s = AugmentedState::at_rest(x.clone(), prev_u.clone())?;
    let mut total = 0.0;
    for u in inputs {
        let x_next = model.step(&s.x, &s.u)?;
        s = AugmentedState::new(x_next, u.clone(), u - &s.u)?;
        total += stage_cost(&s, weights)?;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct ItMpcOutput {
    pub control: DMatrix<f64>,
    /// Updated nominal sequence, first entry equal to `control`.
    pub sequence: Vec<DMatrix<f64>>,
    pub best_cost: f64,
}

/// One sampling update around `nominal` (length `H`).
pub fn it_mpc_step(
    plant_state: &DMatrix<f64>,
    prev_u: &DMatrix<f64>,
    nominal: &[DMatrix<f64>],
    model: &dyn MatrixDynamics,
    weights: &MpcWeights,
    cfg: &ItMpcConfig,
    streams: &NoiseStreams,
) -> Result<ItMpcOutput> {
    cfg.validate()?;
    if nominal.len() != cfg.horizon {
        return Err(Error::InvalidConfig(format!(
            "nominal sequence has {} inputs for horizon {}",
            nominal.len(),
            cfg.horizon
        )));
    }
    let (l, m) = prev_u.shape();
    check_shape("IT-MPC noise covariance", (l, l), cfg.noise_cov.shape())?;
    let noise = MatrixNormalParams::centered(cfg.noise_cov.clone(), DMatrix::identity(m, m))?;
    let rolled: Vec<(Vec<DMatrix<f64>>, f64)> = (0..cfg.rollouts)
        .into_par_iter()
        .map(|r| {
            let seq: Vec<DMatrix<f64>> = nominal
                .iter()
                .enumerate()
                .map(|(t, u)| u + sample(&noise, &mut streams.substream(r, t, Channel::Rollout)))
                .collect();
            // a rollout the model cannot integrate simply gets no weight
            let cost =
                rollout_cost(plant_state, prev_u, &seq, model, weights).unwrap_or(f64::INFINITY);
            (seq, cost)
        })
        .collect();
    let (sequences, costs): (Vec<_>, Vec<_>) = rolled.into_iter().unzip();
    let sequence = combine_rollouts(&sequences, &costs, cfg.temperature)?;
    let best_cost = costs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ItMpcOutput {
        control: sequence[0].clone(),
        sequence,
        best_cost,
    })
}

/// Receding-horizon run: apply the first input, shift the averaged sequence
/// by one step and reuse it as the next nominal.
#[allow(clippy::too_many_arguments)]
pub fn run_it_mpc(
    plant: &dyn MatrixDynamics,
    model: &dyn MatrixDynamics,
    weights: &MpcWeights,
    cfg: &ItMpcConfig,
    steps: usize,
    x_init: &DMatrix<f64>,
    seed: u64,
    snapshot_stride: Option<usize>,
) -> Result<ClosedLoopTrace> {
    cfg.validate()?;
    check_shape("initial plant state", plant.state_shape(), x_init.shape())?;
    if snapshot_stride == Some(0) {
        return Err(Error::InvalidConfig(
            "snapshot stride must be at least 1".into(),
        ));
    }
    let (l, m) = plant.input_shape();
    let root = NoiseStreams::new(seed);
    let x_ref = weights.x_ref();
    let mut state = x_init.clone();
    let mut prev_u = DMatrix::zeros(l, m);
    let mut nominal = vec![DMatrix::zeros(l, m); cfg.horizon];
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let started = Instant::now();
        let out = it_mpc_step(
            &state,
            &prev_u,
            &nominal,
            model,
            weights,
            cfg,
            &root.derive(k as u64),
        )?;
        let wall_seconds = started.elapsed().as_secs_f64();
        let u = out.control;
        state = plant.step(&state, &u)?;
        let keep = snapshot_stride.is_some_and(|s| k % s == 0 || k + 1 == steps);
        records.push(StepRecord {
            step: k,
            control_norm: u.norm(),
            rmse: rmse(&state, x_ref)?,
            wall_seconds,
            jitter_events: 0,
            snapshot: keep.then(|| state.clone()),
            control: u.clone(),
        });
        nominal = out.sequence[1..].to_vec();
        nominal.push(out.sequence[cfg.horizon - 1].clone());
        prev_u = u;
    }
    Ok(ClosedLoopTrace {
        initial_rmse: rmse(x_init, x_ref)?,
        initial_state: x_init.clone(),
        steps: records,
        final_state: state,
    })
}
