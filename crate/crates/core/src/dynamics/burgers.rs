//! Explicit finite-difference stepper for the forced 2-D viscous Burgers'
//! equation `∂φ/∂t + φ·∇φ = ν∇²φ + f` on the unit square.
//!
//! Cell-centred grid with `grid_n` points per side, forward Euler in time,
//! central differences for the Laplacian and first-order upwind differences
//! for advection. Both velocity channels are packed into one `2n×n` matrix
//! (`φ_x` rows on top of `φ_y` rows); row index is `y`, column index is `x`.

use nalgebra::DMatrix;
use rand::Rng;

use super::MatrixDynamics;
use crate::error::{check_shape, Error, Result};
use crate::stream::{Channel, NoiseStreams};

const DIFFUSION_LIMIT: f64 = 0.25;
const ADVECTION_LIMIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    /// Forces `f₁, f₂` along the `y = 1` row; control is `2×n`.
    Boundary,
    /// Force at every grid point; control is `2n×n`.
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Zero-gradient ghost cells copying the adjacent cell.
    Neumann,
    /// Wrap-around in both directions.
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurgersConfig {
    pub grid_n: usize,
    pub nu: f64,
    pub dt: f64,
    pub control_mode: ControlMode,
    pub substeps: usize,
    pub boundary: BoundaryCondition,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        Self {
            grid_n: 32,
            nu: 0.005,
            dt: 0.001,
            control_mode: ControlMode::Boundary,
            substeps: 1,
            boundary: BoundaryCondition::Neumann,
        }
    }
}

impl BurgersConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_n < 8 {
            return Err(Error::InvalidConfig(format!(
                "grid_n must be at least 8, got {}",
                self.grid_n
            )));
        }
        if !(self.nu > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("nu and dt must be positive".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidConfig("substeps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.grid_n as f64
    }

    pub fn state_shape(&self) -> (usize, usize) {
        (2 * self.grid_n, self.grid_n)
    }

    pub fn control_shape(&self) -> (usize, usize) {
        match self.control_mode {
            ControlMode::Boundary => (2, self.grid_n),
            ControlMode::Pointwise => (2 * self.grid_n, self.grid_n),
        }
    }
}

/// Packed velocity field, `φ_x` stacked above `φ_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct BurgersField {
    packed: DMatrix<f64>,
}

impl BurgersField {
    pub fn from_packed(packed: DMatrix<f64>) -> Result<Self> {
        let n = packed.ncols();
        check_shape("packed Burgers field", (2 * n, n), packed.shape())?;
        Ok(Self { packed })
    }

    pub fn from_channels(phi_x: &DMatrix<f64>, phi_y: &DMatrix<f64>) -> Result<Self> {
        let n = phi_x.ncols();
        check_shape("phi_x", (n, n), phi_x.shape())?;
        check_shape("phi_y", (n, n), phi_y.shape())?;
        let mut packed = DMatrix::zeros(2 * n, n);
        packed.rows_mut(0, n).copy_from(phi_x);
        packed.rows_mut(n, n).copy_from(phi_y);
        Ok(Self { packed })
    }

    pub fn uniform(n: usize, value: f64) -> Self {
        Self {
            packed: DMatrix::from_element(2 * n, n, value),
        }
    }

    pub fn grid_n(&self) -> usize {
        self.packed.ncols()
    }

    pub fn packed(&self) -> &DMatrix<f64> {
        &self.packed
    }

    pub fn into_packed(self) -> DMatrix<f64> {
        self.packed
    }

    pub fn phi_x(&self) -> DMatrix<f64> {
        let n = self.grid_n();
        self.packed.rows(0, n).into_owned()
    }

    pub fn phi_y(&self) -> DMatrix<f64> {
        let n = self.grid_n();
        self.packed.rows(n, n).into_owned()
    }
}

/// Stability numbers of one explicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflDiagnostics {
    /// `ν·dt/dx²`
    pub diffusion: f64,
    /// `max|φ|·dt/dx`
    pub advection: f64,
}

impl CflDiagnostics {
    fn of(field: &DMatrix<f64>, cfg: &BurgersConfig) -> Self {
        let dx = cfg.dx();
        Self {
            diffusion: cfg.nu * cfg.dt / (dx * dx),
            advection: field.amax() * cfg.dt / dx,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.diffusion <= DIFFUSION_LIMIT && self.advection <= ADVECTION_LIMIT
    }
}

/// Advances the field by one plant step `dt`.
pub fn burgers_step(
    field: &BurgersField,
    force: &DMatrix<f64>,
    cfg: &BurgersConfig,
) -> Result<(BurgersField, CflDiagnostics)> {
    let n = field.grid_n();
    if n != cfg.grid_n {
        return Err(Error::DimensionMismatch {
            context: "Burgers field vs config",
            expected: format!("grid_n {}", cfg.grid_n),
            got: format!("grid_n {n}"),
        });
    }
    check_shape("Burgers force", cfg.control_shape(), force.shape())?;
    let diag = CflDiagnostics::of(&field.packed, cfg);
    if !diag.is_stable() || !diag.advection.is_finite() {
        return Err(Error::Cfl {
            diffusion: diag.diffusion,
            advection: diag.advection,
        });
    }
    let mut next = field.packed.clone();
    advance(&field.packed, &mut next, force, cfg);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Burgers field"));
    }
    Ok((BurgersField { packed: next }, diag))
}

fn advance(cur: &DMatrix<f64>, next: &mut DMatrix<f64>, force: &DMatrix<f64>, cfg: &BurgersConfig) {
    let n = cfg.grid_n;
    let rows = 2 * n;
    let inv_dx = 1.0 / cfg.dx();
    let diff_coef = cfg.nu * inv_dx * inv_dx;
    let dt = cfg.dt;
    let src = cur.as_slice();
    let dst = next.as_mut_slice();
    let periodic = cfg.boundary == BoundaryCondition::Periodic;
    // ghost-cell neighbours: wrap-around or clamp to the edge cell
    let lower: Vec<usize> = (0..n)
        .map(|k| match k {
            0 if periodic => n - 1,
            0 => 0,
            k => k - 1,
        })
        .collect();
    let upper: Vec<usize> = (0..n)
        .map(|k| match k {
            k if k + 1 < n => k + 1,
            _ if periodic => 0,
            _ => n - 1,
        })
        .collect();
    let fsrc = force.as_slice();
    let frows = force.nrows();
    for x in 0..n {
        let fcol = &fsrc[x * frows..(x + 1) * frows];
        let col = &src[x * rows..(x + 1) * rows];
        let left = &src[lower[x] * rows..(lower[x] + 1) * rows];
        let right = &src[upper[x] * rows..(upper[x] + 1) * rows];
        let out = &mut dst[x * rows..(x + 1) * rows];
        let (vx, vy) = col.split_at(n);
        for channel in 0..2 {
            let o = channel * n;
            let c = &col[o..o + n];
            let l = &left[o..o + n];
            let r = &right[o..o + n];
            let out = &mut out[o..o + n];
            for y in 0..n {
                let (cy, dy, uy) = (c[y], c[lower[y]], c[upper[y]]);
                let dphi_dx = if vx[y] > 0.0 { cy - l[y] } else { r[y] - cy };
                let dphi_dy = if vy[y] > 0.0 { cy - dy } else { uy - cy };
                let lap = (l[y] + r[y] + dy + uy - 4.0 * cy) * diff_coef;
                let f = match cfg.control_mode {
                    ControlMode::Pointwise => fcol[o + y],
                    ControlMode::Boundary if y == n - 1 => fcol[channel],
                    ControlMode::Boundary => 0.0,
                };
                out[y] = cy + dt * (-(vx[y] * dphi_dx + vy[y] * dphi_dy) * inv_dx + lap + f);
            }
        }
    }
}

/// Smooth random field: four low-wavenumber sine modes per channel with
/// amplitudes drawn uniformly from `[-0.5, 0.5]`.
pub fn make_initial_field(cfg: &BurgersConfig, seed: u64) -> BurgersField {
    const MODES: [(f64, f64); 4] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0)];
    let n = cfg.grid_n;
    let streams = NoiseStreams::new(seed);
    let mut packed = DMatrix::zeros(2 * n, n);
    for channel in 0..2 {
        let mut rng = streams.substream(0, channel, Channel::Init);
        let modes: Vec<(f64, f64, f64, f64)> = MODES
            .iter()
            .map(|&(kx, ky)| {
                let amp = rng.random_range(-0.5..=0.5);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (kx, ky, amp, phase)
            })
            .collect();
        for y in 0..n {
            let yc = (y as f64 + 0.5) / n as f64;
            for x in 0..n {
                let xc = (x as f64 + 0.5) / n as f64;
                packed[(channel * n + y, x)] = modes
                    .iter()
                    .map(|&(kx, ky, amp, phase)| {
                        amp * (std::f64::consts::TAU * (kx * xc + ky * yc) + phase).sin()
                    })
                    .sum();
            }
        }
    }
    BurgersField { packed }
}

/// The Burgers stepper as a [`MatrixDynamics`] model: one call advances
/// `substeps` plant steps under a constant force.
#[derive(Debug, Clone)]
pub struct BurgersDynamics {
    cfg: BurgersConfig,
}

impl BurgersDynamics {
    pub fn new(cfg: BurgersConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &BurgersConfig {
        &self.cfg
    }
}

impl MatrixDynamics for BurgersDynamics {
    fn state_shape(&self) -> (usize, usize) {
        self.cfg.state_shape()
    }

    fn input_shape(&self) -> (usize, usize) {
        self.cfg.control_shape()
    }

    fn step(&self, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut field = BurgersField::from_packed(x.clone())?;
        for _ in 0..self.cfg.substeps {
            field = burgers_step(&field, u, &self.cfg)?.0;
        }
        Ok(field.into_packed())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, mode: ControlMode) -> BurgersConfig {
        BurgersConfig {
            grid_n: n,
            control_mode: mode,
            ..BurgersConfig::default()
        }
    }

    #[test]
    fn zero_and_one_are_equilibria() {
        for bc in [BoundaryCondition::Neumann, BoundaryCondition::Periodic] {
            let c = BurgersConfig {
                boundary: bc,
                ..cfg(16, ControlMode::Boundary)
            };
            let f = DMatrix::zeros(2, 16);
            let (z, _) = burgers_step(&BurgersField::uniform(16, 0.0), &f, &c).unwrap();
            assert!(z.packed().iter().all(|&v| v == 0.0));
            let (o, _) = burgers_step(&BurgersField::uniform(16, 1.0), &f, &c).unwrap();
            assert!(o.packed().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn spike_diffuses_and_matches_substep_refinement() {
        let n = 16;
        let c = cfg(n, ControlMode::Pointwise);
        let mut packed = DMatrix::zeros(2 * n, n);
        let (cy, cx) = (n / 2, n / 2);
        packed[(cy, cx)] = 1.0;
        packed[(n + cy, cx)] = 1.0;
        let field = BurgersField::from_packed(packed).unwrap();
        let f = DMatrix::zeros(2 * n, n);
        let (one, _) = burgers_step(&field, &f, &c).unwrap();
        let p = one.packed();
        assert!(p[(cy, cx)] < 1.0);
        for (dy, dx) in [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)] {
            let y = (cy as isize + dy) as usize;
            let x = (cx as isize + dx) as usize;
            assert!(p[(y, x)] > 0.0, "neighbor ({y},{x}) = {}", p[(y, x)]);
        }
        let fine_cfg = BurgersConfig {
            dt: c.dt / 10.0,
            ..c.clone()
        };
        let mut fine = field.clone();
        for _ in 0..10 {
            fine = burgers_step(&fine, &f, &fine_cfg).unwrap().0;
        }
        let rel = (one.packed() - fine.packed()).norm() / fine.packed().norm();
        assert!(rel < 5.0 * c.dt, "relative error {rel}");
    }

    #[test]
    fn boundary_force_only_touches_top_row() {
        let n = 8;
        let c = cfg(n, ControlMode::Boundary);
        let mut f = DMatrix::zeros(2, n);
        f[(0, 3)] = 2.0;
        f[(1, 5)] = -1.0;
        let (out, _) = burgers_step(&BurgersField::uniform(n, 0.0), &f, &c).unwrap();
        let p = out.packed();
        for r in 0..2 * n {
            for x in 0..n {
                let want = if r == n - 1 && x == 3 {
                    2.0 * c.dt
                } else if r == 2 * n - 1 && x == 5 {
                    -c.dt
                } else {
                    0.0
                };
                assert!((p[(r, x)] - want).abs() < 1e-15, "({r},{x})");
            }
        }
    }

    #[test]
    fn row_uniform_profile_decouples_into_one_dimensional_upwind() {
        // φ_x varies with x only, φ_y ≡ 0, ν = 0: each row follows the 1-D scheme.
        let n = 12;
        let c = BurgersConfig {
            nu: 0.0,
            ..cfg(n, ControlMode::Pointwise)
        };
        let profile: Vec<f64> = (0..n).map(|x| 0.5 + 0.3 * (x as f64 * 0.7).sin()).collect();
        let mut packed = DMatrix::zeros(2 * n, n);
        for y in 0..n {
            for x in 0..n {
                packed[(y, x)] = profile[x];
            }
        }
        let field = BurgersField::from_packed(packed).unwrap();
        let (out, _) = burgers_step(&field, &DMatrix::zeros(2 * n, n), &c).unwrap();
        let inv_dx = 1.0 / c.dx();
        let oned: Vec<f64> = (0..n)
            .map(|x| {
                let u = profile[x];
                let left = profile[x.saturating_sub(1)];
                let right = profile[(x + 1).min(n - 1)];
                let grad = if u > 0.0 { u - left } else { right - u } * inv_dx;
                let lap = (left + right + 2.0 * u - 4.0 * u) * (c.nu * inv_dx * inv_dx);
                u + c.dt * (-u * grad + lap)
            })
            .collect();
        for y in 0..n {
            for x in 0..n {
                assert_eq!(out.packed()[(y, x)], oned[x]);
                assert_eq!(out.packed()[(n + y, x)], 0.0);
            }
        }
    }

    #[test]
    fn cfl_violation_is_reported() {
        let c = BurgersConfig {
            dt: 0.1,
            ..cfg(16, ControlMode::Boundary)
        };
        let err =
            burgers_step(&BurgersField::uniform(16, 1.0), &DMatrix::zeros(2, 16), &c).unwrap_err();
        assert!(matches!(err, Error::Cfl { .. }));
    }

    #[test]
    fn force_shape_is_checked() {
        let c = cfg(8, ControlMode::Boundary);
        assert!(burgers_step(&BurgersField::uniform(8, 0.0), &DMatrix::zeros(16, 8), &c).is_err());
    }

    #[test]
    fn initial_field_is_deterministic_bounded_and_centered() {
        let c = cfg(16, ControlMode::Boundary);
        assert_eq!(make_initial_field(&c, 4), make_initial_field(&c, 4));
        assert_ne!(make_initial_field(&c, 4), make_initial_field(&c, 5));
        let mut mean = 0.0;
        for seed in 0..20 {
            let f = make_initial_field(&c, seed);
            assert!(f.packed().amax() <= 2.0);
            mean += f.packed().mean();
        }
        assert!((mean / 20.0).abs() < 0.1);
    }

    #[test]
    fn substeps_converge_at_first_order() {
        let base = BurgersConfig {
            substeps: 4,
            ..cfg(16, ControlMode::Pointwise)
        };
        let init = make_initial_field(&base, 9).into_packed();
        let force = DMatrix::from_element(32, 16, 0.3);
        let run = |dt: f64, substeps: usize| {
            let m = BurgersDynamics::new(BurgersConfig {
                dt,
                substeps,
                ..base.clone()
            })
            .unwrap();
            m.step(&init, &force).unwrap()
        };
        let coarse = run(base.dt, 4);
        let mid = run(base.dt / 2.0, 8);
        let fine = run(base.dt / 4.0, 16);
        let e1 = (&coarse - &fine).amax();
        let e2 = (&mid - &fine).amax();
        assert!(e1 < 10.0 * base.dt, "coarse error {e1}");
        // halving dt should (at least) roughly halve the error
        assert!(e2 < 0.75 * e1, "e1 {e1} e2 {e2}");
    }
}
