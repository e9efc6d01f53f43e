//! The same single-pass smoother run on flattened states.
//!
//! Every slice `X̄` is flattened row-major (`vec(X̄ᵀ)`), so each noise term
//! carries the full `Σ ⊗ Ψ` covariance and the observation covariance grows
//! from `(n+l)²` to `((n+l)m)²` entries. Noise vectors consume the random
//! streams in the same order as the matrix sampler, which makes the two
//! implementations agree for `m = 1` up to rounding.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::controller::{rmse, ApplyMode, ClosedLoopTrace, ControllerConfig, StepRecord};
use crate::dynamics::MatrixDynamics;

use crate::enks::OBS_COV_JITTER;
use crate::error::{check_shape, Error, Result};
use crate::matvar::{cholesky_lower, standard_normal_matrix, unvec_rows, vec_rows};
use crate::stream::{Channel, NoiseStreams};
use crate::virtualsys::{AugmentedState, NoiseLaw, VirtualSystem};

const F64_BYTES: u64 = 8;

/// Entry counts of the two covariances formed at the last update of a
/// horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CovarianceEntries {
    /// `Σ^Ȳ`
    pub obs: u64,
    /// `Σ^{𝒳Ȳ}`
    pub cross: u64,
}

/// Matrix form: `(n+l)²` and `(H+1)(n+2l)·(n+l)`.
pub fn matrix_form_entries(n: usize, l: usize, h: usize) -> CovarianceEntries {
    let (d, s) = ((n + l) as u64, (n + 2 * l) as u64);
    CovarianceEntries {
        obs: d * d,
        cross: (h as u64 + 1) * s * d,
    }
}

/// Vectorized form: every dimension multiplied by `m`.
pub fn vector_form_entries(n: usize, l: usize, m: usize, h: usize) -> CovarianceEntries {
    let (d, s, m) = ((n + l) as u64, (n + 2 * l) as u64, m as u64);
    CovarianceEntries {
        obs: d * d * m * m,
        cross: (h as u64 + 1) * s * m * d * m,
    }
}

/// Bytes held at the peak of a matrix-form horizon: members, anomalies and
/// the shift product, observation samples, both covariances and a factor,
/// and the three noise factors.
pub fn matrix_form_bytes(n: usize, l: usize, m: usize, h: usize, n_members: usize) -> u64 {
    let cov = matrix_form_entries(n, l, h);
    let (n, l, m, h, big_n) = (n as u64, l as u64, m as u64, h as u64, n_members as u64);
    let traj = (h + 1) * (n + 2 * l);
    let d = n + l;
    F64_BYTES
        * (3 * traj * big_n * m + 3 * d * big_n * m + cov.cross + 2 * cov.obs + 2 * l * l + n * n)
}

/// Same accounting for the flattened form, where the noise factors are the
/// full Kronecker Cholesky factors.
pub fn vector_form_bytes(n: usize, l: usize, m: usize, h: usize, n_members: usize) -> u64 {
    let cov = vector_form_entries(n, l, m, h);
    let (n, l, m, h, big_n) = (n as u64, l as u64, m as u64, h as u64, n_members as u64);
    let traj = (h + 1) * (n + 2 * l) * m;
    let d = (n + l) * m;
    let noise = 2 * (l * m) * (l * m) + (n * m) * (n * m);
    F64_BYTES * (3 * traj * big_n + 3 * d * big_n + cov.cross + 2 * cov.obs + noise)
}

/// A virtual system with its noise laws expanded to Kronecker form.
#[derive(Debug, Clone)]
pub struct VectorizedSystem {
    vs: VirtualSystem,
    w: Option<DMatrix<f64>>,
    v_x: Option<DMatrix<f64>>,
    v_u: Option<DMatrix<f64>>,
}

fn kron_factor(law: &NoiseLaw, what: &'static str) -> Result<Option<DMatrix<f64>>> {
    law.params()
        .map(|p| cholesky_lower(&p.row_cov().kronecker(p.col_cov()), what))
        .transpose()
}

impl VectorizedSystem {
    /// Fails on constrained systems, which the flattened baseline does not
    /// model.
    pub fn new(vs: &VirtualSystem) -> Result<Self> {
        if vs.constraint().is_some() {
            return Err(Error::InvalidConfig(
                "the vectorized smoother does not support constraints".into(),
            ));
        }
        Ok(Self {
            w: kron_factor(vs.process_noise(), "vectorized process noise")?,
            v_x: kron_factor(vs.state_obs_noise(), "vectorized state noise")?,
            v_u: kron_factor(vs.input_obs_noise(), "vectorized input noise")?,
            vs: vs.clone(),
        })
    }

    pub fn virtual_system(&self) -> &VirtualSystem {
        &self.vs
    }

    /// `(n+2l)m`
    pub fn slice_len(&self) -> usize {
        self.vs.slice_rows() * self.vs.cols()
    }

    /// `(n+l)m`
    pub fn obs_len(&self) -> usize {
        self.vs.observation_rows() * self.vs.cols()
    }

    pub fn required_bytes(&self, h: usize, n_members: usize) -> u64 {
        vector_form_bytes(
            self.vs.state_rows(),
            self.vs.input_rows(),
            self.vs.cols(),
            h,
            n_members,
        )
    }
}

fn draw(
    factor: &Option<DMatrix<f64>>,
    rows: usize,
    cols: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> DMatrix<f64> {
    match factor {
        Some(l) => {
            let z = vec_rows(&standard_normal_matrix(rows, cols, rng));
            unvec_rows(&(l * z), rows, cols)
        }
        None => DMatrix::zeros(rows, cols),
    }
}

/// Flattened trajectories, one member per column.
#[derive(Debug, Clone)]
pub struct VectorEnsemble {
    members: DMatrix<f64>,
    mean: DVector<f64>,
    slices: usize,
}

impl VectorEnsemble {
    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn len(&self) -> usize {
        self.slices
    }

    pub fn is_empty(&self) -> bool {
        self.slices == 0
    }
}

#[derive(Debug, Clone)]
pub struct VectorSmootherOutput {
    /// Flattened mean trajectory.
    pub mean: DVector<f64>,
    /// The same trajectory un-flattened into slices.
    pub slices: Vec<AugmentedState>,
    pub jitter_events: usize,
}

fn mean_of(members: &DMatrix<f64>) -> DVector<f64> {
    let mut mean = DVector::zeros(members.nrows());
    for c in members.column_iter() {
        mean += c;
    }
    mean / members.ncols() as f64
}

fn centered(members: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = members.clone();
    for mut c in out.column_iter_mut() {
        c -= mean;
    }
    out
}

/// Stochastic single-pass smoother on flattened states. `budget` caps the
/// estimated peak allocation in bytes and is checked before any work.
pub fn vector_enks_smooth(
    x0: &AugmentedState,
    y_refs: &[DMatrix<f64>],
    sys: &VectorizedSystem,
    n_members: usize,
    streams: &NoiseStreams,
    budget: Option<u64>,
) -> Result<VectorSmootherOutput> {
    let vs = &sys.vs;
    let (n, l, m) = (vs.state_rows(), vs.input_rows(), vs.cols());
    if y_refs.is_empty() {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    if n_members < 2 {
        return Err(Error::InvalidConfig(format!(
            "ensemble needs at least 2 members, got {n_members}"
        )));
    }
    if let Some(budget) = budget {
        let required = sys.required_bytes(y_refs.len(), n_members);
        if required > budget {
            return Err(Error::MemoryBudget { required, budget });
        }
    }
    check_shape("initial state", (n, m), x0.x.shape())?;
    let slice_rows = vs.slice_rows();
    let len = sys.slice_len();
    let d = sys.obs_len();
    let big_n = n_members as f64;

    let first = vec_rows(&x0.pack());
    let mut members = DMatrix::zeros(len, n_members);
    for mut c in members.column_iter_mut() {
        c.copy_from(&first);
    }
    let mut ens = VectorEnsemble {
        members,
        mean: first,
        slices: 1,
    };
    let mut jitter_events = 0;

    for (t0, y_ref) in y_refs.iter().enumerate() {
        let t = t0 + 1;
        check_shape("observed reference", (n + l, m), y_ref.shape())?;
        // predict
        let rows = ens.members.nrows();
        let mut block = DMatrix::zeros(len, n_members);
        for i in 0..n_members {
            let last = ens.members.view((rows - len, i), (len, 1)).into_owned();
            let packed = unvec_rows(&DVector::from_column_slice(last.as_slice()), slice_rows, m);
            let s = AugmentedState::unpack(&packed, n, l)?;
            let w = draw(&sys.w, l, m, &mut streams.substream(i, t, Channel::Process));
            let next = vs.transition(&s, &w)?;
            block.column_mut(i).copy_from(&vec_rows(&next.pack()));
        }
        let members = std::mem::replace(&mut ens.members, DMatrix::zeros(0, 0));
        ens.members = members.resize_vertically(rows + len, 0.0);
        ens.members.rows_mut(rows, len).copy_from(&block);
        ens.mean = mean_of(&ens.members);
        ens.slices += 1;

        // perturbed observations of the newest slice
        let mut y = DMatrix::zeros(d, n_members);
        for i in 0..n_members {
            let s = {
                let v = DVector::from_column_slice(block.column(i).as_slice());
                AugmentedState::unpack(&unvec_rows(&v, slice_rows, m), n, l)?
            };
            let v_x = draw(
                &sys.v_x,
                n,
                m,
                &mut streams.substream(i, t, Channel::ObsState),
            );
            let v_u = draw(
                &sys.v_u,
                l,
                m,
                &mut streams.substream(i, t, Channel::ObsInput),
            );
            let mut obs = DMatrix::zeros(n + l, m);
            obs.rows_mut(0, n).copy_from(&(&s.x + v_x));
            obs.rows_mut(n, l).copy_from(&(&s.u + v_u));
            y.column_mut(i).copy_from(&vec_rows(&obs));
        }

        // update
        let y_mean = mean_of(&y);
        let a_y = centered(&y, &y_mean);
        let a_x = centered(&ens.members, &ens.mean);
        let s_y = (&a_y * a_y.transpose()) * (1.0 / big_n);
        let c_xy = (&a_x * a_y.transpose()) * (1.0 / big_n);
        let target = vec_rows(y_ref);
        let mut innovations = -y;
        for mut c in innovations.column_iter_mut() {
            c += &target;
        }
        let trace = s_y.trace();
        if trace > 0.0 {
            let sym = (&s_y + s_y.transpose()) * 0.5;
            let chol = match Cholesky::<f64, Dyn>::new(sym.clone()) {
                Some(c) => c,
                None => {
                    jitter_events += 1;
                    let jitter = OBS_COV_JITTER * trace / d as f64;
                    Cholesky::new(sym + DMatrix::identity(d, d) * jitter).ok_or(
                        Error::Singular {
                            what: "vectorized observation covariance",
                        },
                    )?
                }
            };
            ens.members += &c_xy * chol.solve(&innovations);
        }
        if ens.members.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vectorized ensemble"));
        }
        ens.mean = mean_of(&ens.members);
    }

    let slices = (0..ens.slices)
        .map(|t| {
            let v = ens.mean.rows(t * len, len).into_owned();
            AugmentedState::unpack(&unvec_rows(&v, slice_rows, m), n, l)
        })
        .collect::<Result<_>>()?;
    Ok(VectorSmootherOutput {
        mean: ens.mean,
        slices,
        jitter_events,
    })
}

/// Receding-horizon loop driven by the flattened smoother. Mirrors
/// [`run_closed_loop_with`](crate::controller::run_closed_loop_with) for
/// first-action control without warm start or input widening; the memory
/// budget is checked once, before the first step.
pub fn run_vector_closed_loop(
    plant: &dyn MatrixDynamics,
    model: Arc<dyn MatrixDynamics>,
    cfg: &ControllerConfig,
    steps: usize,
    x_init: &DMatrix<f64>,
    budget: Option<u64>,
) -> Result<ClosedLoopTrace> {
    cfg.validate()?;
    if cfg.input_transform.is_some() || cfg.warm_start || cfg.apply_mode != ApplyMode::FirstAction {
        return Err(Error::InvalidConfig(
            "the vectorized loop supports first-action control only".into(),
        ));
    }
    check_shape("initial plant state", plant.state_shape(), x_init.shape())?;
    let sys = VectorizedSystem::new(&cfg.virtual_system(model)?)?;
    if let Some(budget) = budget {
        let required = sys.required_bytes(cfg.horizon, cfg.ensemble_n);
        if required > budget {
            return Err(Error::MemoryBudget { required, budget });
        }
    }
    let vs = &sys.vs;
    let x_ref = cfg.weights.x_ref().clone();
    let y_refs = vec![vs.reference_observation(); cfg.horizon];
    let root = NoiseStreams::new(cfg.seed);
    let mut state = x_init.clone();
    let mut prev_u = match &cfg.initial_input {
        Some(u) => u.clone(),
        None => DMatrix::zeros(vs.input_rows(), vs.cols()),
    };
    let initial_rmse = rmse(&state, &x_ref)?;
    let mut records = Vec::with_capacity(steps);
    for k in 0..steps {
        let started = Instant::now();
        let x0 = AugmentedState::at_rest(state.clone(), prev_u.clone())?;
        let out = vector_enks_smooth(
            &x0,
            &y_refs,
            &sys,
            cfg.ensemble_n,
            &root.derive(k as u64),
            None,
        )?;
        let u = out.slices[1].u.clone();
        let wall_seconds = started.elapsed().as_secs_f64();
        state = plant.step(&state, &u)?;
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("plant state"));
        }
        records.push(StepRecord {
            step: k,
            control_norm: u.norm(),
            rmse: rmse(&state, &x_ref)?,
            wall_seconds,
            jitter_events: out.jitter_events,
            snapshot: None,
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
