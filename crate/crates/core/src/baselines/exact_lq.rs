//! Closed-form finite-horizon tracking for linear dynamics, solved as one
//! least-squares problem over the input increments. For linear models this
//! is the exact posterior mean the ensemble smoother approximates.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::enks::smooth_horizon;
use crate::stream::{Channel, NoiseStreams};
use crate::virtualsys::build_virtual_system;

use crate::dynamics::{LinearDynamics, MatrixDynamics};
use crate::error::{check_shape, Error, Result};
use crate::virtualsys::{AugmentedState, MpcWeights};

/// Minimiser of the summed stage cost over slices `1..=horizon`, starting
/// from `(x0, u0, 0)`. Returns `horizon + 1` slices, slice 0 included.
pub fn exact_linear_plan(
    model: &LinearDynamics,
    weights: &MpcWeights,
    x0: &DMatrix<f64>,
    u0: &DMatrix<f64>,
    horizon: usize,
) -> Result<Vec<AugmentedState>> {
    let (n, m) = model.state_shape();
    let l = model.b().ncols();
    check_shape("oracle initial state", (n, m), x0.shape())?;
    check_shape("oracle initial input", (l, m), u0.shape())?;
    if weights.dims() != (n, l, m) {
        return Err(Error::DimensionMismatch {
            context: "oracle weights",
            expected: format!("(n, l, m) = {:?}", (n, l, m)),
            got: format!("{:?}", weights.dims()),
        });
    }
    let start = AugmentedState::at_rest(x0.clone(), u0.clone())?;
    if horizon == 0 {
        return Ok(vec![start]);
    }
    let (a, b) = (model.a(), model.b());
    let d = l * horizon;
    let inv = |w: &DMatrix<f64>| {
        w.clone().try_inverse().ok_or(Error::Singular {
            what: "oracle weight",
        })
    };
    let (r_inv, qu_inv, qdu_inv) = (inv(weights.r())?, inv(weights.q_u())?, inv(weights.q_du())?);

    // Each slice is affine in the stacked increments: x_t = cx + gx·δ, u_t = u0 + gu·δ.
    let mut gx = DMatrix::zeros(n, d);
    let mut cx = x0.clone();
    let mut gu = DMatrix::<f64>::zeros(l, d);
    let mut hess = DMatrix::<f64>::zeros(d, d);
    let mut grad = DMatrix::<f64>::zeros(d, m);
    let mut affine = Vec::with_capacity(horizon);
    for t in 0..horizon {
        gx = a * &gx + b * &gu;
        cx = a * &cx + b * u0;
        for i in 0..l {
            gu[(i, t * l + i)] = 1.0;
        }
        let mut e = DMatrix::zeros(l, d);
        e.columns_mut(t * l, l).fill_with_identity();
        hess += gx.transpose() * &r_inv * &gx
            + gu.transpose() * &qu_inv * &gu
            + e.transpose() * &qdu_inv * &e;
        grad += gx.transpose() * &r_inv * (weights.x_ref() - &cx)
            + gu.transpose() * &qu_inv * (weights.u_ref() - u0);
        affine.push((gx.clone(), cx.clone(), gu.clone()));
    }
    let delta = hess
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            what: "oracle normal equations",
        })?
        .solve(&grad);

    let mut plan = vec![start];
    for (t, (gx, cx, gu)) in affine.into_iter().enumerate() {
        plan.push(AugmentedState::new(
            cx + gx * &delta,
            u0 + gu * &delta,
            delta.rows(t * l, l).into_owned(),
        )?);
    }
    Ok(plan)
}

/// A randomly drawn stable linear tracking problem.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub model: LinearDynamics,
    pub weights: MpcWeights,
    pub x0: DMatrix<f64>,
    pub u0: DMatrix<f64>,
}

impl LinearProblem {
    /// Gaussian `A` rescaled to spectral norm 0.9, Gaussian `B`, unit state
    /// weight, `Q_U = Q_ΔU = I`, a Gaussian reference and a Gaussian start
    /// with standard deviation 3.
    pub fn random(n: usize, l: usize, m: usize, seed: u64) -> Result<Self> {
        let mut rng = NoiseStreams::new(seed).substream(0, 0, Channel::Init);
        let mut gauss =
            |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        let a = gauss(n, n);
        let a: DMatrix<f64> = &a * (0.9 / a.clone().svd(false, false).singular_values.max());
        let b = gauss(n, l);
        let x_ref = gauss(n, m);
        let x0 = gauss(n, m) * 3.0;
        let model = LinearDynamics::new(a, b, m)?;
        let weights = MpcWeights::isotropic(1.0, 1.0, 1.0, x_ref, DMatrix::zeros(l, m), 1.0)?;
        Ok(Self {
            model,
            weights,
            x0,
            u0: DMatrix::zeros(l, m),
        })
    }

    pub fn exact(&self, horizon: usize) -> Result<Vec<AugmentedState>> {
        exact_linear_plan(&self.model, &self.weights, &self.x0, &self.u0, horizon)
    }

    /// Ensemble-smoother mean trajectory for the same problem.
    pub fn smoothed(
        &self,
        horizon: usize,
        n_members: usize,
        streams: &NoiseStreams,
    ) -> Result<Vec<AugmentedState>> {
        let vs = build_virtual_system(
            std::sync::Arc::new(self.model.clone()),
            self.weights.clone(),
        )?;
        let start = AugmentedState::at_rest(self.x0.clone(), self.u0.clone())?;
        let y_refs = vec![vs.reference_observation(); horizon];
        Ok(smooth_horizon(&start, &y_refs, &vs, n_members, streams, false)?.mean)
    }
}

/// `‖a − b‖_F / ‖b‖_F`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
