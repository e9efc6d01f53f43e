//! Matrix-valued dynamics models `X_{t+1} = f(X_t, U_t)`.

mod burgers;

pub use burgers::{
    burgers_step, make_initial_field, BoundaryCondition, BurgersConfig, BurgersDynamics,
    BurgersField, CflDiagnostics, ControlMode,
};

use nalgebra::DMatrix;

use crate::error::{check_shape, Result};

/// A deterministic one-step map on matrix states.
///
/// Implementations must be pure: identical inputs give bit-identical outputs,
/// and the output keeps the state shape.
pub trait MatrixDynamics: Send + Sync {
    /// `(n, m)` of the state matrix.
    fn state_shape(&self) -> (usize, usize);

    /// `(l, c)` of the input matrix the model accepts.
    fn input_shape(&self) -> (usize, usize);

    fn step(&self, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

/// `X_{t+1} = A X_t + B U_t`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    cols: usize,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, cols: usize) -> Result<Self> {
        let n = a.nrows();
        check_shape("linear dynamics A", (n, n), a.shape())?;
        check_shape("linear dynamics B", (n, b.ncols()), b.shape())?;
        Ok(Self { a, b, cols })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
}

impl MatrixDynamics for LinearDynamics {
    fn state_shape(&self) -> (usize, usize) {
        (self.a.nrows(), self.cols)
    }

    fn input_shape(&self) -> (usize, usize) {
        (self.b.ncols(), self.cols)
    }

    fn step(&self, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        linear_step(x, u, &self.a, &self.b)
    }
}

pub fn linear_step(
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, m) = x.shape();
    check_shape("linear_step A", (n, n), a.shape())?;
    check_shape("linear_step B", (n, u.nrows()), b.shape())?;
    check_shape("linear_step input", (u.nrows(), m), u.shape())?;
    Ok(a * x + b * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matvar::standard_normal_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_feedthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = standard_normal_matrix(3, 2, &mut rng);
        let u = standard_normal_matrix(3, 2, &mut rng);
        let i = DMatrix::identity(3, 3);
        let z = DMatrix::zeros(3, 3);
        assert_eq!(linear_step(&x, &u, &i, &z).unwrap(), x);
        assert_eq!(linear_step(&x, &u, &z, &i).unwrap(), u);
    }

    #[test]
    fn matches_entrywise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, l, m) = (3, 2, 2);
        let a = standard_normal_matrix(n, n, &mut rng);
        let b = standard_normal_matrix(n, l, &mut rng);
        let x = standard_normal_matrix(n, m, &mut rng);
        let u = standard_normal_matrix(l, m, &mut rng);
        let got = linear_step(&x, &u, &a, &b).unwrap();
        for i in 0..n {
            for j in 0..m {
                let mut want = 0.0;
                for k in 0..n {
                    want += a[(i, k)] * x[(k, j)];
                }
                for k in 0..l {
                    want += b[(i, k)] * u[(k, j)];
                }
                assert!((got[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_steps_compose() {
        // small integers keep every product exact, so the comparison can be too
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut int =
            |r: usize, c: usize| standard_normal_matrix(r, c, &mut rng).map(|v| (v * 3.0).round());
        let a = int(3, 3);
        let b = int(3, 2);
        let x = int(3, 2);
        let u = int(2, 2);
        let u2 = int(2, 2);
        let model = LinearDynamics::new(a.clone(), b.clone(), 2).unwrap();
        let twice = model.step(&model.step(&x, &u).unwrap(), &u2).unwrap();
        let closed = &a * &a * &x + &a * &b * &u + &b * &u2;
        assert_eq!(twice, closed);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let a = DMatrix::identity(2, 2);
        let b = DMatrix::zeros(2, 1);
        assert!(linear_step(&DMatrix::zeros(2, 3), &DMatrix::zeros(1, 2), &a, &b).is_err());
        assert!(LinearDynamics::new(DMatrix::zeros(2, 3), b, 1).is_err());
    }
}
