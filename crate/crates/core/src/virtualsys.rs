//! The virtual system whose smoothing posterior mode is the MPC optimum.
//!
//! State `X̄_t = [X_t; U_t; ΔU_t]` evolves as
//! `X_{t+1} = f(X_t, U_t)`, `U_{t+1} = U_t + W_t`, `ΔU_{t+1} = W_t`, and is
//! observed as `Ȳ_t = [X_t + V_X; U_t + V_U]` with the references as data.
//! Each noise is matrix normal with row covariance `scale·weight` and
//! identity column covariance, which makes `−2 log p(τ | Ȳ)` equal the
//! tracking cost up to a constant.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::MatrixDynamics;
use crate::error::{check_shape, Error, Result};
use crate::matvar::{self, MatrixNormalParams};

/// One horizon slice `[X; U; ΔU]` of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub du: DMatrix<f64>,
}

impl AugmentedState {
    pub fn new(x: DMatrix<f64>, u: DMatrix<f64>, du: DMatrix<f64>) -> Result<Self> {
        let m = x.ncols();
        check_shape("augmented input block", (u.nrows(), m), u.shape())?;
        check_shape("augmented increment block", u.shape(), du.shape())?;
        Ok(Self { x, u, du })
    }

    /// State and last input with a zero increment.
    pub fn at_rest(x: DMatrix<f64>, u: DMatrix<f64>) -> Result<Self> {
        let du = DMatrix::zeros(u.nrows(), u.ncols());
        Self::new(x, u, du)
    }

    pub fn state_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.x.ncols()
    }

    pub fn packed_rows(&self) -> usize {
        self.state_rows() + 2 * self.input_rows()
    }

    pub fn pack(&self) -> DMatrix<f64> {
        let (n, l) = (self.state_rows(), self.input_rows());
        let mut out = DMatrix::zeros(n + 2 * l, self.cols());
        out.rows_mut(0, n).copy_from(&self.x);
        out.rows_mut(n, l).copy_from(&self.u);
        out.rows_mut(n + l, l).copy_from(&self.du);
        out
    }

    pub fn unpack(packed: &DMatrix<f64>, n: usize, l: usize) -> Result<Self> {
        check_shape(
            "packed augmented state",
            (n + 2 * l, packed.ncols()),
            packed.shape(),
        )?;
        Ok(Self {
            x: packed.rows(0, n).into_owned(),
            u: packed.rows(n, l).into_owned(),
            du: packed.rows(n + l, l).into_owned(),
        })
    }
}

/// Tracking weights and references of the MPC problem.
#[derive(Debug, Clone)]
pub struct MpcWeights {
    r: DMatrix<f64>,
    q_u: DMatrix<f64>,
    q_du: DMatrix<f64>,
    x_ref: DMatrix<f64>,
    u_ref: DMatrix<f64>,
    scale: f64,
    r_chol: WeightFactor,
    q_u_chol: WeightFactor,
    q_du_chol: WeightFactor,
}

/// Whitening factor of a weight matrix, with a shortcut for diagonal ones.
#[derive(Debug, Clone)]
enum WeightFactor {
    Diagonal(DVector<f64>),
    Lower(DMatrix<f64>),
}

impl WeightFactor {
    fn new(w: &DMatrix<f64>, what: &'static str) -> Result<Self> {
        let chol = matvar::cholesky_lower(w, what)?;
        let off_diagonal =
            (0..w.nrows()).any(|i| (0..w.ncols()).any(|j| i != j && w[(i, j)] != 0.0));
        Ok(if off_diagonal {
            Self::Lower(chol)
        } else {
            Self::Diagonal(w.diagonal().map(|v| 1.0 / v))
        })
    }

    /// `tr(dᵀ W⁻¹ d)`
    fn quadratic(&self, d: &DMatrix<f64>) -> Result<f64> {
        match self {
            Self::Diagonal(inv) => Ok(d
                .row_iter()
                .zip(inv.iter())
                .map(|(row, w)| row.norm_squared() * w)
                .sum()),
            Self::Lower(chol) => chol
                .solve_lower_triangular(d)
                .map(|w| w.norm_squared())
                .ok_or(Error::Singular {
                    what: "weight matrix",
                }),
        }
    }
}

impl MpcWeights {
    pub fn new(
        r: DMatrix<f64>,
        q_u: DMatrix<f64>,
        q_du: DMatrix<f64>,
        x_ref: DMatrix<f64>,
        u_ref: DMatrix<f64>,
        scale: f64,
    ) -> Result<Self> {
        let (n, m) = x_ref.shape();
        let l = u_ref.nrows();
        check_shape("weight R", (n, n), r.shape())?;
        check_shape("weight Q_U", (l, l), q_u.shape())?;
        check_shape("weight Q_dU", (l, l), q_du.shape())?;
        check_shape("input reference", (l, m), u_ref.shape())?;
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "exploration scale must be finite and non-negative, got {scale}"
            )));
        }
        let r = matvar::symmetrized(r, "weight R")?;
        let q_u = matvar::symmetrized(q_u, "weight Q_U")?;
        let q_du = matvar::symmetrized(q_du, "weight Q_dU")?;
        let r_chol = WeightFactor::new(&r, "weight R")?;
        let q_u_chol = WeightFactor::new(&q_u, "weight Q_U")?;
        let q_du_chol = WeightFactor::new(&q_du, "weight Q_dU")?;
        Ok(Self {
            r,
            q_u,
            q_du,
            x_ref,
            u_ref,
            scale,
            r_chol,
            q_u_chol,
            q_du_chol,
        })
    }

    /// Scalar multiples of the identity for all three weights.
    pub fn isotropic(
        r: f64,
        q_u: f64,
        q_du: f64,
        x_ref: DMatrix<f64>,
        u_ref: DMatrix<f64>,
        scale: f64,
    ) -> Result<Self> {
        let n = x_ref.nrows();
        let l = u_ref.nrows();
        Self::new(
            DMatrix::identity(n, n) * r,
            DMatrix::identity(l, l) * q_u,
            DMatrix::identity(l, l) * q_du,
            x_ref,
            u_ref,
            scale,
        )
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn q_u(&self) -> &DMatrix<f64> {
        &self.q_u
    }

    pub fn q_du(&self) -> &DMatrix<f64> {
        &self.q_du
    }

    pub fn x_ref(&self) -> &DMatrix<f64> {
        &self.x_ref
    }

    pub fn u_ref(&self) -> &DMatrix<f64> {
        &self.u_ref
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Same weights with a different exploration multiplier.
    pub fn with_scale(&self, scale: f64) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "bad exploration scale {scale}"
            )));
        }
        Ok(Self {
            scale,
            ..self.clone()
        })
    }

    /// `(n, l, m)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x_ref.nrows(), self.u_ref.nrows(), self.x_ref.ncols())
    }

    /// `‖x_ref − f(x_ref, u_ref)‖_F`; zero when the references are a steady state.
    pub fn steady_state_residual(&self, model: &dyn MatrixDynamics) -> Result<f64> {
        let next = model.step(&self.x_ref, &self.u_ref)?;
        Ok((&self.x_ref - next).norm())
    }
}

/// `tr[(x−x_ref)ᵀR⁻¹(x−x_ref)] + tr[(u−u_ref)ᵀQ_U⁻¹(u−u_ref)] + tr[ΔUᵀQ_ΔU⁻¹ΔU]`.
pub fn stage_cost(s: &AugmentedState, weights: &MpcWeights) -> Result<f64> {
    check_shape("stage cost state", weights.x_ref.shape(), s.x.shape())?;
    check_shape("stage cost input", weights.u_ref.shape(), s.u.shape())?;
    check_shape("stage cost increment", weights.u_ref.shape(), s.du.shape())?;
    Ok(weights.r_chol.quadratic(&(&s.x - &weights.x_ref))?
        + weights.q_u_chol.quadratic(&(&s.u - &weights.u_ref))?
        + weights.q_du_chol.quadratic(&s.du)?)
}

/// Constraint `g(X̄) ≤ 0`, evaluated per column. Each output row becomes
/// one barrier observation row.
pub trait ConstraintFn: Send + Sync + fmt::Debug {
    /// Output rows for a slice with `n` state rows and `l` input rows.
    fn rows(&self, n: usize, l: usize) -> usize;

    fn evaluate(&self, s: &AugmentedState) -> DMatrix<f64>;
}

/// `max_i |u_ij| − u_max` for each column `j`: one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBound {
    pub u_max: f64,
}

impl ConstraintFn for InputBound {
    fn rows(&self, _n: usize, _l: usize) -> usize {
        1
    }

    fn evaluate(&self, s: &AugmentedState) -> DMatrix<f64> {
        DMatrix::from_fn(1, s.cols(), |_, j| s.u.column(j).amax() - self.u_max)
    }
}

/// The box `|u| ≤ u_max` as `2l` one-sided rows, `u − u_max` above
/// `−u − u_max`.
///
/// The ensemble update is linear in the observations, and `|u|` is
/// uncorrelated with `u` when the members straddle zero, so a symmetric
/// bound gives the update nothing to act on. One-sided rows are monotone in
/// `u` and keep that correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBox {
    pub u_max: f64,
}

impl ConstraintFn for InputBox {
    fn rows(&self, _n: usize, l: usize) -> usize {
        2 * l
    }

    fn evaluate(&self, s: &AugmentedState) -> DMatrix<f64> {
        let l = s.input_rows();
        DMatrix::from_fn(2 * l, s.cols(), |i, j| {
            if i < l {
                s.u[(i, j)] - self.u_max
            } else {
                -s.u[(i - l, j)] - self.u_max
            }
        })
    }
}

/// Softplus barrier observation `z = (1/α)·ln(1 + e^{βg}) + ε` with reference 0.
#[derive(Debug, Clone)]
pub struct ConstraintSpec {
    pub g: Arc<dyn ConstraintFn>,
    pub alpha: f64,
    pub beta: f64,
    pub noise_var: f64,
    /// Observe the barrier of every earlier horizon slice again at each
    /// update, not only the newest one.
    pub reobserve_history: bool,
}

impl ConstraintSpec {
    pub fn new(g: Arc<dyn ConstraintFn>, alpha: f64, beta: f64, noise_var: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && noise_var > 0.0) {
            return Err(Error::InvalidConfig(
                "barrier alpha, beta and noise_var must be positive".into(),
            ));
        }
        Ok(Self {
            g,
            alpha,
            beta,
            noise_var,
            reobserve_history: false,
        })
    }

    /// Default steepness `α = 10, β = 50, noise_var = 1e-4`.
    pub fn with_defaults(g: Arc<dyn ConstraintFn>) -> Self {
        Self::new(g, 10.0, 50.0, 1e-4).expect("default barrier parameters are positive")
    }

    pub fn with_history(mut self, reobserve: bool) -> Self {
        self.reobserve_history = reobserve;
        self
    }

    pub fn barrier(&self, g: f64) -> f64 {
        softplus_barrier(g, self.alpha, self.beta)
    }
}

/// `(1/α)·ln(1 + e^{βg})`, switching to the linear asymptote for `βg > 30`.
pub fn softplus_barrier(g: f64, alpha: f64, beta: f64) -> f64 {
    let z = beta * g;
    if z > 30.0 {
        z / alpha
    } else {
        z.exp().ln_1p() / alpha
    }
}

/// Noise-free barrier rows `φ(g(s))`.
pub fn barrier_mean(s: &AugmentedState, spec: &ConstraintSpec) -> DMatrix<f64> {
    spec.g.evaluate(s).map(|g| spec.barrier(g))
}

/// Barrier rows plus independent `N(0, noise_var)` noise per entry.
pub fn barrier_observe<R: Rng + ?Sized>(
    s: &AugmentedState,
    spec: &ConstraintSpec,
    rng: &mut R,
) -> DMatrix<f64> {
    let noise = Normal::new(0.0, spec.noise_var.sqrt()).expect("positive variance");
    barrier_mean(s, spec).map(|z| z + noise.sample(rng))
}

/// Right transformation widening a `l_u×c` control to `l_u×m` columns.
#[derive(Debug, Clone)]
pub struct InputTransform {
    t: DMatrix<f64>,
    right_inverse: DMatrix<f64>,
}

impl InputTransform {
    /// `t` is `c×m` with `TTᵀ` invertible.
    pub fn new(t: DMatrix<f64>) -> Result<Self> {
        let gram = &t * t.transpose();
        let l =
            Cholesky::<f64, Dyn>::new(gram.clone()).ok_or(Error::Singular { what: "T Tᵀ" })?;
        let diag = l.l_dirty().diagonal();
        let max = diag.amax();
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if (min / max).powi(2) < 1e-10 {
            return Err(Error::RankDeficient {
                what: "T Tᵀ",
                pivot: (min / max).powi(2),
            });
        }
        // Tᵀ (T Tᵀ)⁻¹ = ((T Tᵀ)⁻¹ T)ᵀ
        let right_inverse = l.solve(&t).transpose();
        Ok(Self { t, right_inverse })
    }

    /// `T = [1 ⋯ 1]`: repeat a column vector across `m` columns.
    pub fn repeat_columns(m: usize) -> Self {
        Self::new(DMatrix::from_element(1, m, 1.0)).expect("ones row has full rank")
    }

    pub fn t(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn narrow_cols(&self) -> usize {
        self.t.nrows()
    }

    pub fn wide_cols(&self) -> usize {
        self.t.ncols()
    }

    pub fn augment(&self, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_shape("narrow control", (u.nrows(), self.narrow_cols()), u.shape())?;
        Ok(u * &self.t)
    }

    pub fn reconstruct(&self, u_wide: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_shape(
            "wide control",
            (u_wide.nrows(), self.wide_cols()),
            u_wide.shape(),
        )?;
        Ok(u_wide * &self.right_inverse)
    }
}

/// Zero-mean matrix normal noise source; `None` in the zero-scale limit.
#[derive(Debug, Clone)]
pub struct NoiseLaw {
    params: Option<MatrixNormalParams>,
    rows: usize,
    cols: usize,
}

impl NoiseLaw {
    fn new(weight: &DMatrix<f64>, scale: f64, cols: usize) -> Result<Self> {
        let rows = weight.nrows();
        let params = if scale > 0.0 {
            Some(MatrixNormalParams::centered(
                weight * scale,
                DMatrix::identity(cols, cols),
            )?)
        } else {
            None
        };
        Ok(Self { params, rows, cols })
    }

    pub fn params(&self) -> Option<&MatrixNormalParams> {
        self.params.as_ref()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        match &self.params {
            Some(p) => matvar::sample(p, rng),
            None => DMatrix::zeros(self.rows, self.cols),
        }
    }
}

/// The virtual auxiliary system built from a dynamics model and MPC weights.
#[derive(Clone)]
pub struct VirtualSystem {
    model: Arc<dyn MatrixDynamics>,
    weights: MpcWeights,
    w: NoiseLaw,
    v_x: NoiseLaw,
    v_u: NoiseLaw,
    shared_col_cov: DMatrix<f64>,
    constraint: Option<ConstraintSpec>,
    steady_state_residual: f64,
}

impl fmt::Debug for VirtualSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VirtualSystem")
            .field("dims", &self.weights.dims())
            .field("scale", &self.weights.scale)
            .field("constraint", &self.constraint)
            .field("steady_state_residual", &self.steady_state_residual)
            .finish()
    }
}

pub fn build_virtual_system(
    model: Arc<dyn MatrixDynamics>,
    weights: MpcWeights,
) -> Result<VirtualSystem> {
    let (n, l, m) = weights.dims();
    check_shape("model state vs x_ref", (n, m), model.state_shape())?;
    check_shape("model input vs u_ref", (l, m), model.input_shape())?;
    let scale = weights.scale;
    let w = NoiseLaw::new(&weights.q_du, scale, m)?;
    let v_x = NoiseLaw::new(&weights.r, scale, m)?;
    let v_u = NoiseLaw::new(&weights.q_u, scale, m)?;
    let steady_state_residual = weights.steady_state_residual(model.as_ref())?;
    if steady_state_residual > 1e-8 * (1.0 + weights.x_ref.norm()) {
        log::info!("references are not a model steady state: residual {steady_state_residual:.3e}");
    }
    Ok(VirtualSystem {
        model,
        weights,
        w,
        v_x,
        v_u,
        shared_col_cov: DMatrix::identity(m, m),
        constraint: None,
        steady_state_residual,
    })
}

impl VirtualSystem {
    pub fn with_constraint(mut self, spec: ConstraintSpec) -> Self {
        self.constraint = Some(spec);
        self
    }

    /// Replaces the shared column covariance used in ensemble statistics.
    pub fn with_shared_col_cov(mut self, psi: DMatrix<f64>) -> Result<Self> {
        let m = self.cols();
        check_shape("shared column covariance", (m, m), psi.shape())?;
        let psi = matvar::symmetrized(psi, "shared column covariance")?;
        matvar::cholesky_lower(&psi, "shared column covariance")?;
        self.shared_col_cov = psi;
        Ok(self)
    }

    pub fn model(&self) -> &dyn MatrixDynamics {
        self.model.as_ref()
    }

    pub fn model_arc(&self) -> Arc<dyn MatrixDynamics> {
        Arc::clone(&self.model)
    }

    pub fn weights(&self) -> &MpcWeights {
        &self.weights
    }

    pub fn constraint(&self) -> Option<&ConstraintSpec> {
        self.constraint.as_ref()
    }

    pub fn state_rows(&self) -> usize {
        self.weights.x_ref.nrows()
    }

    pub fn input_rows(&self) -> usize {
        self.weights.u_ref.nrows()
    }

    pub fn cols(&self) -> usize {
        self.weights.x_ref.ncols()
    }

    /// `n + 2l`.
    pub fn slice_rows(&self) -> usize {
        self.state_rows() + 2 * self.input_rows()
    }

    /// `n + l`, plus the barrier rows when constrained.
    pub fn observation_rows(&self) -> usize {
        self.state_rows() + self.input_rows() + self.barrier_rows()
    }

    pub fn barrier_rows(&self) -> usize {
        self.constraint
            .as_ref()
            .map_or(0, |c| c.g.rows(self.state_rows(), self.input_rows()))
    }

    pub fn shared_col_cov(&self) -> &DMatrix<f64> {
        &self.shared_col_cov
    }

    /// `λ = 1/tr(Ψ)`.
    pub fn lambda(&self) -> f64 {
        1.0 / self.shared_col_cov.trace()
    }

    pub fn steady_state_residual(&self) -> f64 {
        self.steady_state_residual
    }

    /// Law of `W`, `MN(0; scale·Q_ΔU, I)`.
    pub fn process_noise(&self) -> &NoiseLaw {
        &self.w
    }

    /// Law of `V_X`, `MN(0; scale·R, I)`.
    pub fn state_obs_noise(&self) -> &NoiseLaw {
        &self.v_x
    }

    /// Law of `V_U`, `MN(0; scale·Q_U, I)`.
    pub fn input_obs_noise(&self) -> &NoiseLaw {
        &self.v_u
    }

    /// Observed data `[x_ref; u_ref]`, with zero barrier rows when constrained.
    pub fn reference_observation(&self) -> DMatrix<f64> {
        let (n, l, m) = self.weights.dims();
        let mut y = DMatrix::zeros(self.observation_rows(), m);
        y.rows_mut(0, n).copy_from(&self.weights.x_ref);
        y.rows_mut(n, l).copy_from(&self.weights.u_ref);
        y
    }

    pub fn transition(&self, s: &AugmentedState, w: &DMatrix<f64>) -> Result<AugmentedState> {
        virtual_transition(s, w, self.model.as_ref())
    }
}

/// `x′ = f(x, u)`, `u′ = u + w`, `ΔU′ = w`.
pub fn virtual_transition(
    s: &AugmentedState,
    w: &DMatrix<f64>,
    model: &dyn MatrixDynamics,
) -> Result<AugmentedState> {
    check_shape("process noise", s.u.shape(), w.shape())?;
    let x = model.step(&s.x, &s.u)?;
    Ok(AugmentedState {
        x,
        u: &s.u + w,
        du: w.clone(),
    })
}

/// `[x + v_x; u + v_u]`.
pub fn virtual_observe(
    s: &AugmentedState,
    v_x: &DMatrix<f64>,
    v_u: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_shape("state observation noise", s.x.shape(), v_x.shape())?;
    check_shape("input observation noise", s.u.shape(), v_u.shape())?;
    let (n, l) = (s.state_rows(), s.input_rows());
    let mut y = DMatrix::zeros(n + l, s.cols());
    y.rows_mut(0, n).copy_from(&(&s.x + v_x));
    y.rows_mut(n, l).copy_from(&(&s.u + v_u));
    Ok(y)
}

/// Selection matrix `H = [I 0 0; 0 I 0]`.
pub fn observation_matrix(n: usize, l: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n + l, n + 2 * l);
    for i in 0..n + l {
        h[(i, i)] = 1.0;
    }
    h
}
