//! Matrix-variate single-pass ensemble Kalman smoother.
//!
//! Members are kept side by side in one matrix of shape
//! `(slices·(n+2l)) × (N·m)`: member `i` owns columns `i·m .. (i+1)·m`, and
//! each block of `n+2l` rows is one horizon slice `[X; U; ΔU]`. With that
//! layout every ensemble covariance is a single matrix product of anomaly
//! matrices over the member axis.
//!
//! Each update shifts the whole trajectory of every member, so past slices
//! are re-estimated through the trajectory/observation cross covariance and
//! no backward pass is needed.

use nalgebra::{Cholesky, DMatrix, DMatrixView, Dyn};
use rayon::prelude::*;

use crate::error::{check_shape, Error, Result};
use crate::stream::{Channel, NoiseStreams};
use crate::virtualsys::{barrier_observe, AugmentedState, VirtualSystem};

/// Relative diagonal jitter applied to a singular observation covariance.
pub const OBS_COV_JITTER: f64 = 1e-9;

/// Row covariances tracked alongside the ensemble (all scaled by `λ/N`).
#[derive(Debug, Clone)]
pub struct SmootherCovariances {
    /// `Σ^𝒳`: whole-trajectory covariance; after an update it is the sample
    /// covariance of the updated members.
    pub sigma_traj: DMatrix<f64>,
    /// `Σ^X̄`: covariance of the latest predicted slice.
    pub sigma_pred: DMatrix<f64>,
    /// `Σ^{𝒳X̄}`: cross covariance of the previous trajectory with the latest slice.
    pub sigma_cross: DMatrix<f64>,
    /// `Σ^𝒳_{t|t-1} − Σ^{𝒳Ȳ}(Σ^Ȳ)⁻¹(Σ^{𝒳Ȳ})ᵀ` from the most recent update.
    pub sigma_traj_conditional: Option<DMatrix<f64>>,
}

/// An ensemble of horizon trajectories and their running mean.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    members: DMatrix<f64>,
    mean: DMatrix<f64>,
    n_members: usize,
    state_rows: usize,
    input_rows: usize,
    cols: usize,
    slices: usize,
    lambda: f64,
    covariances: Option<SmootherCovariances>,
    jitter_events: usize,
}

/// `N` identical copies of `x0`; spread enters through the process noise.
pub fn init_ensemble(
    x0: &AugmentedState,
    n_members: usize,
    vs: &VirtualSystem,
) -> Result<TrajectoryEnsemble> {
    if n_members < 2 {
        return Err(Error::InvalidConfig(format!(
            "ensemble needs at least 2 members, got {n_members}"
        )));
    }
    check_shape("initial state", (vs.state_rows(), vs.cols()), x0.x.shape())?;
    check_shape("initial input", (vs.input_rows(), vs.cols()), x0.u.shape())?;
    let slice = x0.pack();
    let m = x0.cols();
    let mut members = DMatrix::zeros(slice.nrows(), n_members * m);
    for i in 0..n_members {
        members.columns_mut(i * m, m).copy_from(&slice);
    }
    Ok(TrajectoryEnsemble {
        members,
        mean: slice,
        n_members,
        state_rows: x0.state_rows(),
        input_rows: x0.input_rows(),
        cols: m,
        slices: 1,
        lambda: vs.lambda(),
        covariances: None,
        jitter_events: 0,
    })
}

impl TrajectoryEnsemble {
    /// Starts tracking `Σ^𝒳`, `Σ^X̄`, `Σ^{𝒳X̄}` from the current members.
    pub fn enable_covariance_tracking(&mut self) {
        let a = self.anomalies();
        let sigma_traj = self.cov(&a, &a);
        self.covariances = Some(SmootherCovariances {
            sigma_pred: DMatrix::zeros(self.slice_rows(), self.slice_rows()),
            sigma_cross: DMatrix::zeros(sigma_traj.nrows(), self.slice_rows()),
            sigma_traj,
            sigma_traj_conditional: None,
        });
    }

    pub fn covariances(&self) -> Option<&SmootherCovariances> {
        self.covariances.as_ref()
    }

    pub fn n_members(&self) -> usize {
        self.n_members
    }

    /// Number of horizon slices stored per member.
    pub fn len(&self) -> usize {
        self.slices
    }

    pub fn is_empty(&self) -> bool {
        self.slices == 0
    }

    pub fn slice_rows(&self) -> usize {
        self.state_rows + 2 * self.input_rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// How many times the observation covariance needed jitter.
    pub fn jitter_events(&self) -> usize {
        self.jitter_events
    }

    /// All members, side by side.
    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    /// Stacked trajectory of member `i`.
    pub fn member(&self, i: usize) -> DMatrixView<'_, f64> {
        self.members.columns(i * self.cols, self.cols)
    }

    /// Stacked mean trajectory.
    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn member_slice(&self, i: usize, t: usize) -> AugmentedState {
        let packed = self
            .members
            .view(
                (t * self.slice_rows(), i * self.cols),
                (self.slice_rows(), self.cols),
            )
            .into_owned();
        AugmentedState::unpack(&packed, self.state_rows, self.input_rows)
            .expect("slice shape is fixed at construction")
    }

    pub fn mean_slice(&self, t: usize) -> AugmentedState {
        let packed = self
            .mean
            .rows(t * self.slice_rows(), self.slice_rows())
            .into_owned();
        AugmentedState::unpack(&packed, self.state_rows, self.input_rows)
            .expect("slice shape is fixed at construction")
    }

    pub fn mean_trajectory(&self) -> Vec<AugmentedState> {
        (0..self.slices).map(|t| self.mean_slice(t)).collect()
    }

    /// Average of the member blocks.
    pub fn recomputed_mean(&self) -> DMatrix<f64> {
        block_mean(&self.members, self.n_members, self.cols)
    }

    /// Members minus the mean, same layout as [`members`](Self::members).
    pub fn anomalies(&self) -> DMatrix<f64> {
        centered(&self.members, &self.mean, self.n_members, self.cols)
    }

    fn cov(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        (a * b.transpose()) * (self.lambda / self.n_members as f64)
    }

    /// Propagates every member one step through the virtual system and
    /// appends the new slice. `bias`, when given, is added to the mean of
    /// every process-noise draw.
    pub fn predict(
        &mut self,
        vs: &VirtualSystem,
        streams: &NoiseStreams,
        bias: Option<&DMatrix<f64>>,
    ) -> Result<()> {
        let t_new = self.slices;
        let last = t_new - 1;
        if let Some(b) = bias {
            check_shape(
                "process noise bias",
                (self.input_rows, self.cols),
                b.shape(),
            )?;
        }
        let next: Vec<DMatrix<f64>> = (0..self.n_members)
            .into_par_iter()
            .map(|i| {
                let s = self.member_slice(i, last);
                let mut rng = streams.substream(i, t_new, Channel::Process);
                let mut w = vs.process_noise().sample(&mut rng);
                if let Some(b) = bias {
                    w += b;
                }
                vs.transition(&s, &w).map(|s| s.pack())
            })
            .collect::<Result<_>>()?;

        let rows = self.slice_rows();
        let m = self.cols;
        let mut block = DMatrix::zeros(rows, self.n_members * m);
        for (i, s) in next.iter().enumerate() {
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("predicted ensemble member"));
            }
            block.columns_mut(i * m, m).copy_from(s);
        }
        let block_mean = block_mean(&block, self.n_members, m);

        if self.covariances.is_some() {
            let a_old = self.anomalies();
            let a_new = centered(&block, &block_mean, self.n_members, m);
            let sigma_pred = self.cov(&a_new, &a_new);
            let sigma_cross = self.cov(&a_old, &a_new);
            let cov = self.covariances.as_mut().expect("checked above");
            let old = cov.sigma_traj.nrows();
            let mut traj = DMatrix::zeros(old + rows, old + rows);
            traj.view_mut((0, 0), (old, old)).copy_from(&cov.sigma_traj);
            traj.view_mut((0, old), (old, rows)).copy_from(&sigma_cross);
            traj.view_mut((old, 0), (rows, old))
                .copy_from(&sigma_cross.transpose());
            traj.view_mut((old, old), (rows, rows))
                .copy_from(&sigma_pred);
            cov.sigma_traj = traj;
            cov.sigma_pred = sigma_pred;
            cov.sigma_cross = sigma_cross;
        }

        let old_rows = self.members.nrows();
        let members = std::mem::replace(&mut self.members, DMatrix::zeros(0, 0));
        self.members = members.resize_vertically(old_rows + rows, 0.0);
        self.members.rows_mut(old_rows, rows).copy_from(&block);
        let mean = std::mem::replace(&mut self.mean, DMatrix::zeros(0, 0));
        self.mean = mean.resize_vertically(old_rows + rows, 0.0);
        self.mean.rows_mut(old_rows, rows).copy_from(&block_mean);
        self.slices += 1;
        Ok(())
    }

    /// Barrier slices re-observed at this update, `1..t` when the
    /// constraint asks for it.
    fn history_slices(&self, vs: &VirtualSystem) -> usize {
        match vs.constraint() {
            Some(spec) if spec.reobserve_history => self.slices.saturating_sub(2),
            _ => 0,
        }
    }

    /// Perturbed observations of the latest slice, shape `d_y × (N·m)`,
    /// followed by any re-observed barrier rows of earlier slices.
    fn sample_observations(
        &self,
        vs: &VirtualSystem,
        streams: &NoiseStreams,
    ) -> Result<DMatrix<f64>> {
        let t = self.slices - 1;
        let (n, l, m) = (self.state_rows, self.input_rows, self.cols);
        let b = vs.barrier_rows();
        let history = self.history_slices(vs);
        let d = vs.observation_rows() + b * history;
        let obs: Vec<DMatrix<f64>> = (0..self.n_members)
            .into_par_iter()
            .map(|i| {
                let s = self.member_slice(i, t);
                let v_x =
                    vs.state_obs_noise()
                        .sample(&mut streams.substream(i, t, Channel::ObsState));
                let v_u =
                    vs.input_obs_noise()
                        .sample(&mut streams.substream(i, t, Channel::ObsInput));
                let mut y = DMatrix::zeros(d, m);
                y.rows_mut(0, n).copy_from(&(&s.x + v_x));
                y.rows_mut(n, l).copy_from(&(&s.u + v_u));
                if let Some(spec) = vs.constraint() {
                    let mut rng = streams.substream(i, t, Channel::Barrier);
                    let z = barrier_observe(&s, spec, &mut rng);
                    y.rows_mut(n + l, b).copy_from(&z);
                    for h in 0..history {
                        let past = self.member_slice(i, h + 1);
                        let z = barrier_observe(&past, spec, &mut rng);
                        y.rows_mut(n + l + b * (h + 1), b).copy_from(&z);
                    }
                }
                y
            })
            .collect();
        let mut all = DMatrix::zeros(d, self.n_members * m);
        for (i, y) in obs.iter().enumerate() {
            all.columns_mut(i * m, m).copy_from(y);
        }
        Ok(all)
    }

    /// Kalman-type update of every member's whole trajectory against the
    /// observed data `y_ref` for the latest slice.
    pub fn update(
        &mut self,
        y_ref: &DMatrix<f64>,
        vs: &VirtualSystem,
        streams: &NoiseStreams,
    ) -> Result<()> {
        let m = self.cols;
        check_shape(
            "observed reference",
            (vs.observation_rows(), m),
            y_ref.shape(),
        )?;
        let y = self.sample_observations(vs, streams)?;
        let d = y.nrows();
        let y_mean = block_mean(&y, self.n_members, m);
        let a_y = centered(&y, &y_mean, self.n_members, m);
        let a_x = self.anomalies();
        let s_y = self.cov(&a_y, &a_y);
        let c_xy = self.cov(&a_x, &a_y);

        // re-observed barrier rows have reference zero
        let mut innovations = -y;
        for i in 0..self.n_members {
            let mut block = innovations.view_mut((0, i * m), (y_ref.nrows(), m));
            block += y_ref;
        }

        let trace = s_y.trace();
        if trace > 0.0 {
            let chol = match Cholesky::<f64, Dyn>::new((&s_y + s_y.transpose()) * 0.5) {
                Some(c) => c,
                None => {
                    self.jitter_events += 1;
                    let jitter = OBS_COV_JITTER * trace / d as f64;
                    log::warn!("observation covariance singular, adding jitter {jitter:.3e}");
                    let reg = (&s_y + s_y.transpose()) * 0.5 + DMatrix::identity(d, d) * jitter;
                    Cholesky::new(reg).ok_or(Error::Singular {
                        what: "observation covariance",
                    })?
                }
            };
            let weighted = chol.solve(&innovations);
            self.members += &c_xy * weighted;
            if let Some(cov) = self.covariances.as_mut() {
                let gain_t = chol.solve(&c_xy.transpose());
                cov.sigma_traj_conditional = Some(&cov.sigma_traj - &c_xy * gain_t);
            }
        }
        if self.members.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("updated ensemble"));
        }
        self.mean = self.recomputed_mean();
        if self.covariances.is_some() {
            let a = self.anomalies();
            let sigma = self.cov(&a, &a);
            self.covariances.as_mut().expect("checked above").sigma_traj = sigma;
        }
        Ok(())
    }
}

fn block_mean(all: &DMatrix<f64>, n_members: usize, m: usize) -> DMatrix<f64> {
    let mut mean = DMatrix::zeros(all.nrows(), m);
    for i in 0..n_members {
        mean += all.columns(i * m, m);
    }
    mean / n_members as f64
}

fn centered(all: &DMatrix<f64>, mean: &DMatrix<f64>, n_members: usize, m: usize) -> DMatrix<f64> {
    let mut out = all.clone();
    for i in 0..n_members {
        let mut block = out.columns_mut(i * m, m);
        block -= mean;
    }
    out
}

/// Knobs of one smoothing pass beyond the problem itself.
#[derive(Debug, Clone, Default)]
pub struct SmootherOptions {
    pub track_cov: bool,
    /// Per-step process-noise means (warm start); entry `t` biases the draw
    /// that creates slice `t + 1`.
    pub process_bias: Option<Vec<DMatrix<f64>>>,
}

/// Result of one forward smoothing pass over a horizon.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    /// Mean trajectory, slice 0 being the initial state.
    pub mean: Vec<AugmentedState>,
    pub covariances: Option<SmootherCovariances>,
    pub jitter_events: usize,
}

/// Alternates predict and update over `y_refs.len()` steps.
pub fn smooth_horizon(
    x0: &AugmentedState,
    y_refs: &[DMatrix<f64>],
    vs: &VirtualSystem,
    n_members: usize,
    streams: &NoiseStreams,
    track_cov: bool,
) -> Result<SmootherOutput> {
    let options = SmootherOptions {
        track_cov,
        process_bias: None,
    };
    smooth_horizon_with(x0, y_refs, vs, n_members, streams, &options)
}

pub fn smooth_horizon_with(
    x0: &AugmentedState,
    y_refs: &[DMatrix<f64>],
    vs: &VirtualSystem,
    n_members: usize,
    streams: &NoiseStreams,
    options: &SmootherOptions,
) -> Result<SmootherOutput> {
    if y_refs.is_empty() {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if let Some(bias) = &options.process_bias {
        if bias.len() != y_refs.len() {
            return Err(Error::InvalidConfig(format!(
                "process bias has {} entries for a horizon of {}",
                bias.len(),
                y_refs.len()
            )));
        }
    }
    let mut ens = init_ensemble(x0, n_members, vs)?;
    if options.track_cov {
        ens.enable_covariance_tracking();
    }
    for (t, y_ref) in y_refs.iter().enumerate() {
        let bias = options.process_bias.as_ref().map(|b| &b[t]);
        ens.predict(vs, streams, bias)?;
        ens.update(y_ref, vs, streams)?;
    }
    Ok(SmootherOutput {
        mean: ens.mean_trajectory(),
        covariances: ens.covariances,
        jitter_events: ens.jitter_events,
    })
}
