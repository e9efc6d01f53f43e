#![allow(dead_code)]

use std::sync::Arc;

use inferential_control::dynamics::{LinearDynamics, MatrixDynamics};
use inferential_control::virtualsys::{
    build_virtual_system, AugmentedState, MpcWeights, VirtualSystem,
};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// `G Gᵀ + 0.5 I`, well away from singular.
pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gauss(rng, n, n);
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
}

pub fn linear_model(rng: &mut ChaCha8Rng, n: usize, l: usize, m: usize) -> Arc<dyn MatrixDynamics> {
    let a = gauss(rng, n, n) * (0.8 / (n as f64).sqrt());
    let b = gauss(rng, n, l);
    Arc::new(LinearDynamics::new(a, b, m).unwrap())
}

pub fn random_weights(
    rng: &mut ChaCha8Rng,
    n: usize,
    l: usize,
    m: usize,
    scale: f64,
) -> MpcWeights {
    let r = spd(rng, n);
    let q_u = spd(rng, l);
    let q_du = spd(rng, l);
    let x_ref = gauss(rng, n, m);
    let u_ref = gauss(rng, l, m);
    MpcWeights::new(r, q_u, q_du, x_ref, u_ref, scale).unwrap()
}

pub fn linear_vs(seed: u64, n: usize, l: usize, m: usize) -> VirtualSystem {
    let mut rng = rng(seed);
    let model = linear_model(&mut rng, n, l, m);
    let w = random_weights(&mut rng, n, l, m, 1.0);
    build_virtual_system(model, w).unwrap()
}

pub fn start(seed: u64, vs: &VirtualSystem) -> AugmentedState {
    let mut rng = rng(seed);
    let (n, l, m) = (vs.state_rows(), vs.input_rows(), vs.cols());
    AugmentedState::at_rest(gauss(&mut rng, n, m) * 2.0, gauss(&mut rng, l, m)).unwrap()
}

pub fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
