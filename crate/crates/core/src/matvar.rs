//! Matrix normal distributions.
//!
//! `X ~ MN(M; Σ, Ψ)` with `Σ` the n×n row covariance and `Ψ` the m×m column
//! covariance, equivalently `vec(Xᵀ) ~ N(vec(Mᵀ), Σ ⊗ Ψ)`. Everything that
//! needs a factorization goes through a lower Cholesky factor; there is no
//! eigenvalue fallback.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_shape, shape, Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const RANK_PIVOT_TOL: f64 = 1e-10;

/// Mean, row covariance and column covariance of a matrix normal law.
///
/// Both covariances are symmetrized on construction and their Cholesky
/// factors are cached, so a constructed value is always a valid law.
#[derive(Debug, Clone)]
pub struct MatrixNormalParams {
    mean: DMatrix<f64>,
    row_cov: DMatrix<f64>,
    col_cov: DMatrix<f64>,
    row_chol: DMatrix<f64>,
    col_chol: DMatrix<f64>,
}

impl MatrixNormalParams {
    pub fn new(mean: DMatrix<f64>, row_cov: DMatrix<f64>, col_cov: DMatrix<f64>) -> Result<Self> {
        let (n, m) = mean.shape();
        check_shape("row covariance", (n, n), row_cov.shape())?;
        check_shape("column covariance", (m, m), col_cov.shape())?;
        let row_cov = symmetrized(row_cov, "row covariance")?;
        let col_cov = symmetrized(col_cov, "column covariance")?;
        let row_chol = cholesky_lower(&row_cov, "row covariance")?;
        let col_chol = cholesky_lower(&col_cov, "column covariance")?;
        Ok(Self {
            mean,
            row_cov,
            col_cov,
            row_chol,
            col_chol,
        })
    }

    /// `MN(0; I_n, I_m)`.
    pub fn standard(n: usize, m: usize) -> Self {
        Self::new(
            DMatrix::zeros(n, m),
            DMatrix::identity(n, n),
            DMatrix::identity(m, m),
        )
        .expect("identity covariances are positive definite")
    }

    /// Zero-mean law with the given covariances.
    pub fn centered(row_cov: DMatrix<f64>, col_cov: DMatrix<f64>) -> Result<Self> {
        let mean = DMatrix::zeros(row_cov.nrows(), col_cov.nrows());
        Self::new(mean, row_cov, col_cov)
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn row_cov(&self) -> &DMatrix<f64> {
        &self.row_cov
    }

    pub fn col_cov(&self) -> &DMatrix<f64> {
        &self.col_cov
    }

    /// Lower Cholesky factor `A` with `AAᵀ = Σ`.
    pub fn row_factor(&self) -> &DMatrix<f64> {
        &self.row_chol
    }

    /// Lower Cholesky factor `B` with `BBᵀ = Ψ`.
    pub fn col_factor(&self) -> &DMatrix<f64> {
        &self.col_chol
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mean.shape()
    }

    /// Same covariances, different mean.
    pub fn with_mean(&self, mean: DMatrix<f64>) -> Result<Self> {
        check_shape("matrix normal mean", self.mean.shape(), mean.shape())?;
        Ok(Self {
            mean,
            ..self.clone()
        })
    }

    /// Covariance of `vec(Xᵀ)`, i.e. `Σ ⊗ Ψ`.
    pub fn vectorized_cov(&self) -> DMatrix<f64> {
        self.row_cov.kronecker(&self.col_cov)
    }
}

/// Row/column block parameters of a stacked law `[X; Y] ~ MN([M_X; M_Y]; [[Σ_X, Σ_XY], [Σ_XYᵀ, Σ_Y]], Ψ)`.
#[derive(Debug, Clone)]
pub struct JointBlockParams {
    pub mean_x: DMatrix<f64>,
    pub mean_y: DMatrix<f64>,
    pub cov_x: DMatrix<f64>,
    pub cov_xy: DMatrix<f64>,
    pub cov_y: DMatrix<f64>,
    pub col_cov: DMatrix<f64>,
}

impl JointBlockParams {
    fn check(&self) -> Result<(usize, usize, usize)> {
        let (n, m) = self.mean_x.shape();
        let r = self.mean_y.nrows();
        check_shape("joint mean_y", (r, m), self.mean_y.shape())?;
        check_shape("joint cov_x", (n, n), self.cov_x.shape())?;
        check_shape("joint cov_xy", (n, r), self.cov_xy.shape())?;
        check_shape("joint cov_y", (r, r), self.cov_y.shape())?;
        check_shape("joint col_cov", (m, m), self.col_cov.shape())?;
        Ok((n, r, m))
    }

    /// The stacked law as a single matrix normal.
    pub fn stacked(&self) -> Result<MatrixNormalParams> {
        let (n, r, m) = self.check()?;
        let mut mean = DMatrix::zeros(n + r, m);
        mean.rows_mut(0, n).copy_from(&self.mean_x);
        mean.rows_mut(n, r).copy_from(&self.mean_y);
        let mut cov = DMatrix::zeros(n + r, n + r);
        cov.view_mut((0, 0), (n, n)).copy_from(&self.cov_x);
        cov.view_mut((0, n), (n, r)).copy_from(&self.cov_xy);
        cov.view_mut((n, 0), (r, n))
            .copy_from(&self.cov_xy.transpose());
        cov.view_mut((n, n), (r, r)).copy_from(&self.cov_y);
        MatrixNormalParams::new(mean, cov, self.col_cov.clone())
    }

    /// Marginal law of the `Y` block.
    pub fn marginal_y(&self) -> Result<MatrixNormalParams> {
        self.check()?;
        MatrixNormalParams::new(
            self.mean_y.clone(),
            self.cov_y.clone(),
            self.col_cov.clone(),
        )
    }
}

/// Log-density of `x` under `params`.
pub fn log_pdf(x: &DMatrix<f64>, params: &MatrixNormalParams) -> Result<f64> {
    check_shape("log_pdf argument", params.shape(), x.shape())?;
    let (n, m) = params.shape();
    let diff = x - &params.mean;
    // tr(Σ⁻¹ D Ψ⁻¹ Dᵀ) = ‖A⁻¹ D B⁻ᵀ‖²_F with AAᵀ = Σ, BBᵀ = Ψ.
    let left = params
        .row_chol
        .solve_lower_triangular(&diff)
        .ok_or(Error::Singular {
            what: "row covariance",
        })?;
    let whitened_t = params
        .col_chol
        .solve_lower_triangular(&left.transpose())
        .ok_or(Error::Singular {
            what: "column covariance",
        })?;
    let quad = whitened_t.norm_squared();
    let ln_det_row = log_det_from_factor(&params.row_chol);
    let ln_det_col = log_det_from_factor(&params.col_chol);
    let (nf, mf) = (n as f64, m as f64);
    Ok(-0.5 * nf * mf * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * nf * ln_det_col
        - 0.5 * mf * ln_det_row
        - 0.5 * quad)
}

/// Draws `M + A Z Bᵀ` with `Z` filled row by row from standard normals.
///
/// Row-major filling means the draw consumes the stream in `vec(Zᵀ)` order,
/// which is what a multivariate sampler over `vec(Xᵀ)` would consume.
pub fn sample<R: Rng + ?Sized>(params: &MatrixNormalParams, rng: &mut R) -> DMatrix<f64> {
    let (n, m) = params.shape();
    let mut z = standard_normal_matrix(n, m, rng);
    // diagonal factors (the common isotropic case) reduce to scalings
    if is_diagonal(&params.row_chol) {
        for (mut row, a) in z.row_iter_mut().zip(params.row_chol.diagonal().iter()) {
            row *= *a;
        }
    } else {
        z = &params.row_chol * z;
    }
    if is_diagonal(&params.col_chol) {
        for (mut col, b) in z.column_iter_mut().zip(params.col_chol.diagonal().iter()) {
            col *= *b;
        }
    } else {
        z *= params.col_chol.transpose();
    }
    z + &params.mean
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    a.column_iter()
        .enumerate()
        .all(|(j, col)| col.iter().enumerate().all(|(i, &v)| i == j || v == 0.0))
}

/// `n×m` matrix of independent standard normals, filled row-major.
pub fn standard_normal_matrix<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    z
}

/// Law of `A X B` for full-rank `A` (r×n, r ≤ n) and `B` (m×s, s ≤ m).
pub fn affine_transform(
    params: &MatrixNormalParams,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<MatrixNormalParams> {
    let (n, m) = params.shape();
    if a.ncols() != n || a.nrows() > n {
        return Err(Error::DimensionMismatch {
            context: "affine left factor",
            expected: format!("r x {n} with r <= {n}"),
            got: shape(a.nrows(), a.ncols()),
        });
    }
    if b.nrows() != m || b.ncols() > m {
        return Err(Error::DimensionMismatch {
            context: "affine right factor",
            expected: format!("{m} x s with s <= {m}"),
            got: shape(b.nrows(), b.ncols()),
        });
    }
    check_full_rank(&(a * a.transpose()), "affine left factor")?;
    check_full_rank(&(b.transpose() * b), "affine right factor")?;
    let mean = a * &params.mean * b;
    let row_cov = a * &params.row_cov * a.transpose();
    let col_cov = b.transpose() * &params.col_cov * b;
    MatrixNormalParams::new(mean, row_cov, col_cov)
}

/// Law of `X | Y = y_obs` for a jointly matrix-normal `[X; Y]`.
pub fn conditional(joint: &JointBlockParams, y_obs: &DMatrix<f64>) -> Result<MatrixNormalParams> {
    let (n, r, m) = joint.check()?;
    check_shape("conditioning value", (r, m), y_obs.shape())?;
    let cov_y = symmetrized(joint.cov_y.clone(), "cov_y")?;
    let chol = Cholesky::new(cov_y).ok_or(Error::Singular { what: "cov_y" })?;
    // Σ_Y⁻¹ Σ_XYᵀ, so that gain = (Σ_Y⁻¹ Σ_XYᵀ)ᵀ.
    let gain_t = chol.solve(&joint.cov_xy.transpose());
    let mean = &joint.mean_x + gain_t.transpose() * (y_obs - &joint.mean_y);
    let row_cov = &joint.cov_x - &joint.cov_xy * &gain_t;
    debug_assert_eq!(mean.shape(), (n, m));
    MatrixNormalParams::new(mean, row_cov, joint.col_cov.clone())
}

/// Column-stacking `vec(X)`.
pub fn vec_cols(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

/// Row-stacking `vec(Xᵀ)`, the ordering the matrix normal's `Σ ⊗ Ψ` refers to.
pub fn vec_rows(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x.len(),
        (0..x.nrows()).flat_map(|i| (0..x.ncols()).map(move |j| x[(i, j)])),
    )
}

/// Inverse of [`vec_rows`].
pub fn unvec_rows(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), rows * cols, "unvec_rows length mismatch");
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Log-density of a multivariate normal, via Cholesky.
pub fn mvn_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    check_shape("mvn argument", (mean.len(), 1), (x.len(), 1))?;
    let l = cholesky_lower(cov, "multivariate covariance")?;
    let w = l
        .solve_lower_triangular(&(x - mean))
        .ok_or(Error::Singular {
            what: "multivariate covariance",
        })?;
    let d = x.len() as f64;
    Ok(-0.5 * d * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * log_det_from_factor(&l)
        - 0.5 * w.norm_squared())
}

/// `(S + Sᵀ)/2`, rejecting inputs whose asymmetry exceeds rounding.
pub fn symmetrized(s: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch {
            context: what,
            expected: "square matrix".into(),
            got: shape(s.nrows(), s.ncols()),
        });
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    let scale = s.amax().max(1.0);
    let asym = (&s - s.transpose()).amax();
    if asym > SYMMETRY_TOL * scale * s.nrows().max(1) as f64 {
        return Err(Error::NotPositiveDefinite { what });
    }
    Ok((&s + s.transpose()) * 0.5)
}

/// Lower Cholesky factor or a positive-definiteness error.
pub fn cholesky_lower(s: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(s.clone())
        .map(|c| c.unpack())
        .ok_or(Error::NotPositiveDefinite { what })
}

fn log_det_from_factor(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

fn check_full_rank(gram: &DMatrix<f64>, what: &'static str) -> Result<()> {
    let l = Cholesky::<f64, Dyn>::new(gram.clone())
        .map(|c| c.unpack())
        .ok_or(Error::RankDeficient { what, pivot: 0.0 })?;
    let diag = l.diagonal();
    let max = diag.amax().max(f64::MIN_POSITIVE);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    // pivots of the Gram matrix are squared diagonal entries
    let pivot = (min / max).powi(2);
    if pivot < RANK_PIVOT_TOL {
        return Err(Error::RankDeficient { what, pivot });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        standard_normal_matrix(n, m, rng)
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let a = random_matrix(rng, n, n);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    fn random_params(rng: &mut ChaCha8Rng, n: usize, m: usize) -> MatrixNormalParams {
        let mean = random_matrix(rng, n, m);
        let s = random_spd(rng, n);
        let p = random_spd(rng, m);
        MatrixNormalParams::new(mean, s, p).unwrap()
    }

    #[test]
    fn standard_normal_at_mode() {
        let p = MatrixNormalParams::standard(1, 1);
        let lp = log_pdf(&DMatrix::zeros(1, 1), &p).unwrap();
        assert_relative_eq!(
            lp,
            -0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-15
        );
        assert!((lp + 0.9189).abs() < 1e-4);
    }

    #[test]
    fn log_pdf_matches_vectorized_gaussian_for_all_small_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=3 {
            for m in 1..=3 {
                let p = random_params(&mut rng, n, m);
                let x = random_matrix(&mut rng, n, m);
                let lp = log_pdf(&x, &p).unwrap();
                let oracle =
                    mvn_log_pdf(&vec_rows(&x), &vec_rows(p.mean()), &p.vectorized_cov()).unwrap();
                assert_relative_eq!(lp, oracle, epsilon = 1e-10, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn log_pdf_is_symmetric_about_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 3, 2);
        let d = random_matrix(&mut rng, 3, 2);
        let a = log_pdf(&(p.mean() + &d), &p).unwrap();
        let b = log_pdf(&(p.mean() - &d), &p).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn log_pdf_rejects_bad_shapes_and_covariances() {
        let p = MatrixNormalParams::standard(2, 2);
        assert!(matches!(
            log_pdf(&DMatrix::zeros(2, 3), &p),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            MatrixNormalParams::new(DMatrix::zeros(2, 2), bad, DMatrix::identity(2, 2)),
            Err(Error::NotPositiveDefinite { .. })
        ));
        assert!(matches!(
            MatrixNormalParams::new(
                DMatrix::zeros(2, 2),
                DMatrix::identity(3, 3),
                DMatrix::identity(2, 2)
            ),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sample_is_deterministic_for_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_params(&mut rng, 3, 4);
        let a = sample(&p, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample(&p, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn standard_sample_mean_is_near_zero() {
        let p = MatrixNormalParams::standard(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let count = 100_000;
        let mut acc = DMatrix::zeros(2, 3);
        for _ in 0..count {
            acc += sample(&p, &mut rng);
        }
        acc /= count as f64;
        let bound = 4.0 / (count as f64).sqrt();
        assert!(acc.amax() < bound, "max |mean| = {}", acc.amax());
    }

    #[test]
    fn affine_identity_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng, 3, 2);
        let q = affine_transform(&p, &DMatrix::identity(3, 3), &DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(q.mean(), p.mean(), epsilon = 1e-15);
        assert_relative_eq!(q.row_cov(), p.row_cov(), epsilon = 1e-15);
        assert_relative_eq!(q.col_cov(), p.col_cov(), epsilon = 1e-15);
    }

    #[test]
    fn affine_row_selection_marginalizes() {
        let p = MatrixNormalParams::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let q = affine_transform(&p, &a, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(q.row_cov(), &DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn affine_rejects_rank_deficient_factors() {
        let p = MatrixNormalParams::standard(3, 2);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(
            affine_transform(&p, &a, &DMatrix::identity(2, 2)),
            Err(Error::RankDeficient { .. })
        ));
        let wide = DMatrix::identity(4, 3);
        assert!(matches!(
            affine_transform(&p, &wide, &DMatrix::identity(2, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conditional_independence_and_zero_innovation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let joint = JointBlockParams {
            mean_x: random_matrix(&mut rng, 2, 3),
            mean_y: random_matrix(&mut rng, 2, 3),
            cov_x: random_spd(&mut rng, 2),
            cov_xy: DMatrix::zeros(2, 2),
            cov_y: random_spd(&mut rng, 2),
            col_cov: random_spd(&mut rng, 3),
        };
        let y = random_matrix(&mut rng, 2, 3);
        let c = conditional(&joint, &y).unwrap();
        assert_relative_eq!(c.mean(), &joint.mean_x, epsilon = 1e-14);
        assert_relative_eq!(c.row_cov(), &joint.cov_x, epsilon = 1e-14);

        let mut coupled = joint.clone();
        coupled.cov_xy = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, 0.1, 0.4]);
        let c = conditional(&coupled, &coupled.mean_y.clone()).unwrap();
        assert_relative_eq!(c.mean(), &coupled.mean_x, epsilon = 1e-14);
    }

    #[test]
    fn conditional_rejects_singular_cov_y() {
        let joint = JointBlockParams {
            mean_x: DMatrix::zeros(1, 1),
            mean_y: DMatrix::zeros(2, 1),
            cov_x: DMatrix::identity(1, 1),
            cov_xy: DMatrix::zeros(1, 2),
            cov_y: DMatrix::from_element(2, 2, 1.0),
            col_cov: DMatrix::identity(1, 1),
        };
        assert!(matches!(
            conditional(&joint, &DMatrix::zeros(2, 1)),
            Err(Error::Singular { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn vec_rows_round_trips(n in 1usize..5, m in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_matrix(&mut rng, n, m);
            prop_assert_eq!(unvec_rows(&vec_rows(&x), n, m), x);
        }

        #[test]
        fn chain_rule_holds(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, r, m) = (2, 2, 3);
            let full = MatrixNormalParams::new(
                random_matrix(&mut rng, n + r, m),
                random_spd(&mut rng, n + r),
                random_spd(&mut rng, m),
            ).unwrap();
            let cov = full.row_cov();
            let joint = JointBlockParams {
                mean_x: full.mean().rows(0, n).into_owned(),
                mean_y: full.mean().rows(n, r).into_owned(),
                cov_x: cov.view((0, 0), (n, n)).into_owned(),
                cov_xy: cov.view((0, n), (n, r)).into_owned(),
                cov_y: cov.view((n, n), (r, r)).into_owned(),
                col_cov: full.col_cov().clone(),
            };
            let z = random_matrix(&mut rng, n + r, m);
            let x = z.rows(0, n).into_owned();
            let y = z.rows(n, r).into_owned();
            let lhs = log_pdf(&z, &joint.stacked().unwrap()).unwrap();
            let rhs = log_pdf(&x, &conditional(&joint, &y).unwrap()).unwrap()
                + log_pdf(&y, &joint.marginal_y().unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9, "lhs {} rhs {}", lhs, rhs);
        }

        #[test]
        fn permutation_affine_commutes_with_permuted_samples(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_params(&mut rng, 3, 3);
            let perm_rows = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 0., 0., 1., 1., 0., 0.]);
            let perm_cols = DMatrix::from_row_slice(3, 3, &[0., 0., 1., 1., 0., 0., 0., 1., 0.]);
            let q = affine_transform(&p, &perm_rows, &perm_cols).unwrap();
            // same standard draw pushed through both routes
            let z = random_matrix(&mut rng, 3, 3);
            let x = p.mean() + p.row_factor() * &z * p.col_factor().transpose();
            let permuted = &perm_rows * &x * &perm_cols;
            let lp_direct = log_pdf(&permuted, &q).unwrap();
            let lp_orig = log_pdf(&x, &p).unwrap();
            // permutations have unit Jacobian
            prop_assert!((lp_direct - lp_orig).abs() < 1e-9);
            prop_assert!((q.mean() - &perm_rows * p.mean() * &perm_cols).amax() < 1e-12);
        }
    }
}
