//! The log-posterior of a virtual-system trajectory observed at the
//! references differs from `−½·J` by a trajectory-independent constant.

mod common;

use common::{gauss, linear_vs, rng, start};
use inferential_control::matvar::log_pdf;
use inferential_control::virtualsys::{stage_cost, AugmentedState, VirtualSystem};
use nalgebra::DMatrix;

const HORIZON: usize = 4;

fn rollout(
    vs: &VirtualSystem,
    s0: &AugmentedState,
    increments: &[DMatrix<f64>],
) -> Vec<AugmentedState> {
    let mut path = vec![s0.clone()];
    for w in increments {
        let next = vs.transition(path.last().unwrap(), w).unwrap();
        path.push(next);
    }
    path
}

fn log_posterior(vs: &VirtualSystem, path: &[AugmentedState]) -> f64 {
    let w = vs.weights();
    let process = vs.process_noise().params().unwrap();
    let obs_x = vs.state_obs_noise().params().unwrap();
    let obs_u = vs.input_obs_noise().params().unwrap();
    path[1..]
        .iter()
        .map(|s| {
            log_pdf(&s.du, process).unwrap()
                + log_pdf(w.x_ref(), &obs_x.with_mean(s.x.clone()).unwrap()).unwrap()
                + log_pdf(w.u_ref(), &obs_u.with_mean(s.u.clone()).unwrap()).unwrap()
        })
        .sum()
}

fn cost(vs: &VirtualSystem, path: &[AugmentedState]) -> f64 {
    path[1..]
        .iter()
        .map(|s| stage_cost(s, vs.weights()).unwrap())
        .sum()
}

#[test]
fn log_posterior_is_minus_half_cost_up_to_a_constant() {
    let (n, l, m) = (4, 2, 3);
    let vs = linear_vs(21, n, l, m);
    let s0 = start(22, &vs);
    let mut r = rng(23);
    for _ in 0..20 {
        let a: Vec<_> = (0..HORIZON).map(|_| gauss(&mut r, l, m)).collect();
        let b: Vec<_> = (0..HORIZON).map(|_| gauss(&mut r, l, m)).collect();
        let (pa, pb) = (rollout(&vs, &s0, &a), rollout(&vs, &s0, &b));
        let d_log_p = log_posterior(&vs, &pa) - log_posterior(&vs, &pb);
        let d_cost = cost(&vs, &pa) - cost(&vs, &pb);
        assert!(
            (d_log_p + 0.5 * d_cost).abs() < 1e-8,
            "Δlog p = {d_log_p}, ΔJ = {d_cost}"
        );
    }
}

#[test]
fn exploration_scale_divides_the_cost() {
    let vs = linear_vs(24, 3, 1, 2);
    let hot = inferential_control::virtualsys::build_virtual_system(
        vs.model_arc(),
        vs.weights().with_scale(4.0).unwrap(),
    )
    .unwrap();
    let s0 = start(25, &vs);
    let mut r = rng(26);
    let a: Vec<_> = (0..3).map(|_| gauss(&mut r, 1, 2)).collect();
    let b: Vec<_> = (0..3).map(|_| gauss(&mut r, 1, 2)).collect();
    let (pa, pb) = (rollout(&hot, &s0, &a), rollout(&hot, &s0, &b));
    let d_log_p = log_posterior(&hot, &pa) - log_posterior(&hot, &pb);
    let d_cost = cost(&hot, &pa) - cost(&hot, &pb);
    assert!((d_log_p + d_cost / 8.0).abs() < 1e-8);
}
