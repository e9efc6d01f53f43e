//! Comparison methods: the smoother on flattened states, a sampling
//! (path-integral) MPC, and the closed-form linear plan.

pub mod exact_lq;
pub mod it_mpc;
pub mod vector_enks;

pub use exact_lq::{exact_linear_plan, relative_error, LinearProblem};
pub use it_mpc::{
    combine_rollouts, it_mpc_step, mppi_weights, run_it_mpc, ItMpcConfig, ItMpcOutput,
};
pub use vector_enks::{
    matrix_form_bytes, matrix_form_entries, run_vector_closed_loop, vector_enks_smooth,
    vector_form_bytes, vector_form_entries, CovarianceEntries, VectorEnsemble,
    VectorSmootherOutput, VectorizedSystem,
};
