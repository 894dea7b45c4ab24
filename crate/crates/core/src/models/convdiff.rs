//! Periodic 2D convection-diffusion with a dipole-like Gaussian source.
//!
//! Finite volumes on a cell-centered unit square: donor-cell upwind fluxes on
//! face velocities averaged from adjacent centers, central diffusion and
//! forward Euler in time. The flux-difference form conserves the domain
//! integral exactly up to the source contribution.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{restrict_field, Field, Grid};
use crate::pce::ParamBounds;

use super::Problem;

pub const ALPHA: f64 = 0.01;
pub const T_END: f64 = 2.5;
pub const CFL: f64 = 0.8;
pub const BLOWUP: f64 = 1e6;

pub const HF_POINTS: usize = 128;
pub const LF_POINTS: usize = 32;
pub const DT_HF: f64 = 0.0012;
pub const DT_LF: f64 = 0.02;

/// Time step for an `n × n` grid: the two published steps verbatim, otherwise
/// `DT_LF · (32/n)²`, which keeps the diffusion number of the 32² grid.
pub fn default_dt(n: usize) -> f64 {
    match n {
        HF_POINTS => DT_HF,
        LF_POINTS => DT_LF,
        _ => DT_LF * (LF_POINTS as f64 / n as f64).powi(2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvDiffParams {
    pub strength: f64,
    pub width: f64,
    pub x: f64,
    pub y: f64,
}

impl ConvDiffParams {
    pub fn bounds() -> ParamBounds {
        ParamBounds::new(vec![0.01, 0.05, 0.3, 0.55], vec![0.05, 0.08, 0.7, 0.85]).expect("static bounds are valid")
    }

    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        match theta {
            [s, h, x, y] => Ok(ConvDiffParams {
                strength: *s,
                width: *h,
                x: *x,
                y: *y,
            }),
            _ => Err(Error::InvalidArgument(format!(
                "convection-diffusion takes 4 parameters, got {}",
                theta.len()
            ))),
        }
    }
}

/// Source term at one point.
pub fn source_value(p: &ConvDiffParams, x: f64, y: f64) -> f64 {
    let h2 = p.width * p.width;
    let g = |cx: f64, cy: f64| (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * h2)).exp();
    p.strength / (2.0 * PI * h2) * (g(p.x, p.y) - g(p.x - 0.05, p.y - 0.05))
}

pub fn velocity_u(x: f64, y: f64) -> f64 {
    let sc = |z: f64| (PI * z).sin() * (PI * z).cos();
    0.1 - (PI * x).sin().powi(2) * (sc(y - 0.05) - sc(y + 0.05))
}

pub fn velocity_v(x: f64, y: f64) -> f64 {
    (PI * x).sin() * (PI * x).cos() * ((PI * (y - 0.05)).sin().powi(2) - (PI * (y + 0.05)).sin().powi(2))
}

pub fn source_field(p: &ConvDiffParams, grid: &Arc<Grid>) -> Result<Field> {
    Field::from_fn(Arc::clone(grid), |x, y| source_value(p, x, y))
}

pub fn velocity_field(grid: &Arc<Grid>) -> Result<(Field, Field)> {
    Ok((
        Field::from_fn(Arc::clone(grid), velocity_u)?,
        Field::from_fn(Arc::clone(grid), velocity_v)?,
    ))
}

/// An explicit solver bound to one grid and time step.
#[derive(Debug, Clone)]
pub struct ConvDiffSolver {
    grid: Arc<Grid>,
    dt: f64,
    /// Velocity on the face between cell `(i, j)` and `(i+1, j)`.
    u_east: Vec<f64>,
    /// Velocity on the face between cell `(i, j)` and `(i, j+1)`.
    v_north: Vec<f64>,
    u_center: Vec<f64>,
    v_center: Vec<f64>,
}

impl ConvDiffSolver {
    pub fn new(n: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
        }
        let grid = Grid::uniform_2d(n, n)?;
        let (u, v) = velocity_field(&grid)?;
        let (u, v) = (u.into_values(), v.into_values());
        let mut u_east = vec![0.0; grid.len()];
        let mut v_north = vec![0.0; grid.len()];
        for i in 0..n {
            for j in 0..n {
                let k = grid.index(i, j);
                u_east[k] = 0.5 * (u[k] + u[grid.index((i + 1) % n, j)]);
                v_north[k] = 0.5 * (v[k] + v[grid.index(i, (j + 1) % n)]);
            }
        }
        Ok(ConvDiffSolver {
            grid,
            dt,
            u_east,
            v_north,
            u_center: u,
            v_center: v,
        })
    }

    pub fn with_default_dt(n: usize) -> Result<Self> {
        Self::new(n, default_dt(n))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `max(|u|/Δx + |v|/Δy) · Δt` over cell centers.
    pub fn courant(&self) -> f64 {
        let (dx, dy) = self.grid.spacing();
        self.u_center
            .iter()
            .zip(&self.v_center)
            .map(|(u, v)| u.abs() / dx + v.abs() / dy)
            .fold(0.0, f64::max)
            * self.dt
    }

    /// Step sizes used to reach `t_end`: full steps, then one shortened step.
    pub fn schedule(&self, t_end: f64) -> Vec<f64> {
        let n_steps = ((t_end / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let mut steps = vec![self.dt; n_steps];
        steps[n_steps - 1] = t_end - self.dt * (n_steps - 1) as f64;
        steps
    }

    /// `φ(·, t_end)` from a zero initial state under a steady source.
    pub fn solve_with_source(&self, source: &[f64], t_end: f64) -> Result<Field> {
        let n = self.grid.shape().0;
        let (dx, dy) = self.grid.spacing();
        let (kx, ky) = (ALPHA / (dx * dx), ALPHA / (dy * dy));
        let len = self.grid.len();
        let mut phi = vec![0.0; len];
        let mut fx = vec![0.0; len];
        let mut fy = vec![0.0; len];
        let mut next = vec![0.0; len];
        for (step, dt) in self.schedule(t_end).into_iter().enumerate() {
            for i in 0..n {
                let ip = (i + 1) % n;
                for j in 0..n {
                    let jp = (j + 1) % n;
                    let k = i * n + j;
                    let ue = self.u_east[k];
                    fx[k] = if ue > 0.0 { ue * phi[k] } else { ue * phi[ip * n + j] };
                    let vn = self.v_north[k];
                    fy[k] = if vn > 0.0 { vn * phi[k] } else { vn * phi[i * n + jp] };
                }
            }
            let mut peak = 0.0f64;
            for i in 0..n {
                let (ip, im) = ((i + 1) % n, (i + n - 1) % n);
                for j in 0..n {
                    let (jp, jm) = ((j + 1) % n, (j + n - 1) % n);
                    let k = i * n + j;
                    let p = phi[k];
                    let conv = (fx[k] - fx[im * n + j]) / dx + (fy[k] - fy[i * n + jm]) / dy;
                    let diff = kx * (phi[ip * n + j] + phi[im * n + j] - 2.0 * p) + ky * (phi[i * n + jp] + phi[i * n + jm] - 2.0 * p);
                    let v = p + dt * (diff - conv + source[k]);
                    next[k] = v;
                    peak = peak.max(v.abs());
                }
            }
            if !(peak <= BLOWUP) {
                return Err(Error::Instability { step, magnitude: peak });
            }
            std::mem::swap(&mut phi, &mut next);
        }
        Field::new(Arc::clone(&self.grid), phi)
    }

    pub fn solve(&self, p: &ConvDiffParams) -> Result<Field> {
        let s = source_field(p, &self.grid)?;
        self.solve_with_source(s.values(), T_END)
    }
}

/// The 2D benchmark: a fine solver restricted onto a coarse one's grid.
#[derive(Debug, Clone)]
pub struct ConvDiffProblem {
    name: String,
    bounds: ParamBounds,
    hf: ConvDiffSolver,
    lf: ConvDiffSolver,
}

impl ConvDiffProblem {
    /// `hf_n` must be an integer multiple of `lf_n`.
    pub fn new(hf_n: usize, lf_n: usize) -> Result<Self> {
        if hf_n % lf_n != 0 {
            return Err(Error::IncompatibleGrids(format!("{hf_n} is not a multiple of {lf_n}")));
        }
        Ok(ConvDiffProblem {
            name: format!("convdiff_{hf_n}_{lf_n}"),
            bounds: ConvDiffParams::bounds(),
            hf: ConvDiffSolver::with_default_dt(hf_n)?,
            lf: ConvDiffSolver::with_default_dt(lf_n)?,
        })
    }

    /// 128² against 32².
    pub fn standard() -> Self {
        Self::new(HF_POINTS, LF_POINTS).expect("static configuration is valid")
    }

    /// 64² against 16², for quick studies.
    pub fn reduced() -> Self {
        Self::new(64, 16).expect("static configuration is valid")
    }

    pub fn hf_solver(&self) -> &ConvDiffSolver {
        &self.hf
    }

    pub fn lf_solver(&self) -> &ConvDiffSolver {
        &self.lf
    }

    /// HF solution on its own (fine) grid.
    pub fn eval_hf_fine(&self, theta: &[f64]) -> Result<Field> {
        self.bounds.to_normalized(theta)?;
        self.hf.solve(&ConvDiffParams::from_slice(theta)?)
    }
}

impl Problem for ConvDiffProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    fn grid(&self) -> &Arc<Grid> {
        self.lf.grid()
    }

    fn eval_hf(&self, theta: &[f64]) -> Result<Field> {
        restrict_field(&self.eval_hf_fine(theta)?, self.lf.grid())
    }

    fn eval_lf(&self, theta: &[f64]) -> Result<Field> {
        self.bounds.to_normalized(theta)?;
        self.lf.solve(&ConvDiffParams::from_slice(theta)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MID: [f64; 4] = [0.03, 0.065, 0.5, 0.7];

    #[test]
    fn published_steps_and_cfl() {
        assert_eq!(default_dt(32), 0.02);
        assert_eq!(default_dt(128), 0.0012);
        for n in [16, 32, 64, 128] {
            let s = ConvDiffSolver::with_default_dt(n).unwrap();
            assert!(s.courant() <= CFL + 1e-9, "{n}: {}", s.courant());
        }
    }

    #[test]
    fn schedule_lands_on_end_time() {
        let s = ConvDiffSolver::new(16, 0.3).unwrap();
        let steps = s.schedule(T_END);
        assert_eq!(steps.len(), 9);
        assert!((steps.iter().sum::<f64>() - T_END).abs() < 1e-12);
        assert!((steps[8] - 0.1).abs() < 1e-12);
        let s = ConvDiffSolver::with_default_dt(32).unwrap();
        assert_eq!(s.schedule(T_END).len(), 125);
    }

    #[test]
    fn velocity_special_values() {
        // The bracket cancels where cos(2πy) = 0.
        assert!((velocity_u(0.37, 0.25) - 0.1).abs() < 1e-15);
        assert_eq!(velocity_v(0.0, 0.3), 0.0);
    }

    #[test]
    fn velocity_is_discretely_divergence_free_in_the_limit() {
        let h = 1e-5;
        for (x, y) in [(0.2, 0.3), (0.7, 0.9), (0.45, 0.1)] {
            let div = (velocity_u(x + h, y) - velocity_u(x - h, y)) / (2.0 * h)
                + (velocity_v(x, y + h) - velocity_v(x, y - h)) / (2.0 * h);
            assert!(div.abs() < 1e-8, "{div}");
        }
    }

    #[test]
    fn zero_source_stays_zero() {
        let s = ConvDiffSolver::with_default_dt(16).unwrap();
        let p = ConvDiffParams {
            strength: 0.0,
            ..ConvDiffParams::from_slice(&MID).unwrap()
        };
        assert_eq!(s.solve(&p).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn mass_balance() {
        let s = ConvDiffSolver::with_default_dt(32).unwrap();
        let p = ConvDiffParams::from_slice(&MID).unwrap();
        let phi = s.solve(&p).unwrap();
        let src = source_field(&p, s.grid()).unwrap();
        assert!((phi.integral() - T_END * src.integral()).abs() < 1e-8);
    }

    #[test]
    fn interior_source_has_near_zero_mass() {
        let p = ConvDiffParams::from_slice(&MID).unwrap();
        let g = Grid::uniform_2d(1024, 1024).unwrap();
        assert!(source_field(&p, &g).unwrap().integral().abs() < 1e-6);
    }

    #[test]
    fn first_order_in_time() {
        let p = ConvDiffParams::from_slice(&MID).unwrap();
        let src = |s: &ConvDiffSolver| source_field(&p, s.grid()).unwrap();
        let a = ConvDiffSolver::new(16, 0.04).unwrap();
        let b = ConvDiffSolver::new(16, 0.02).unwrap();
        let c = ConvDiffSolver::new(16, 0.01).unwrap();
        let fa = a.solve_with_source(src(&a).values(), 1.0).unwrap();
        let fb = b.solve_with_source(src(&b).values(), 1.0).unwrap();
        let fc = c.solve_with_source(src(&c).values(), 1.0).unwrap();
        let g = a.grid();
        let ratio = g.distance(fa.values(), fb.values()) / g.distance(fb.values(), fc.values());
        assert!((1.5..=2.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn problem_shapes() {
        let prob = ConvDiffProblem::reduced();
        let hf = prob.eval_hf(&MID).unwrap();
        let lf = prob.eval_lf(&MID).unwrap();
        assert_eq!(hf.grid().len(), 256);
        assert_eq!(lf.grid(), hf.grid());
        assert!(hf.values().iter().all(|v| v.is_finite()));
        assert!(prob.eval_lf(&[0.1, 0.065, 0.5, 0.7]).is_err());
    }
}
