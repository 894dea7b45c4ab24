//! Damped pulse `exp(-ax) sin(bx)` and its two cheap approximations.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::pce::ParamBounds;

use super::Problem;

pub const DOMAIN: (f64, f64) = (0.0, 0.1);
pub const DEFAULT_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseCase {
    /// Truncated Taylor series of the phase.
    C1,
    /// Rational (Bhaskara-type) sine approximation.
    C2,
}

impl PulseCase {
    pub fn bounds(self) -> ParamBounds {
        let b = match self {
            PulseCase::C1 => (60.0, 80.0),
            PulseCase::C2 => (30.0, 50.0),
        };
        ParamBounds::new(vec![40.0, b.0], vec![60.0, b.1]).expect("static bounds are valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseParams {
    pub a: f64,
    pub b: f64,
}

impl PulseParams {
    pub fn from_slice(theta: &[f64]) -> Result<Self> {
        match theta {
            [a, b] => Ok(PulseParams { a: *a, b: *b }),
            _ => Err(Error::InvalidArgument(format!("pulse models take 2 parameters, got {}", theta.len()))),
        }
    }
}

pub fn hf_value(x: f64, p: PulseParams) -> f64 {
    (-p.a * x).exp() * (p.b * x).sin()
}

/// `exp(-ax) sin(bx - (bx)³/3! + (bx)⁵/5!)`.
pub fn lf_c1_value(x: f64, p: PulseParams) -> f64 {
    (-p.a * x).exp() * taylor_sine(p.b * x).sin()
}

/// `exp(-ax) (bx - (bx)³/3! + (bx)⁵/5!)`: the series in place of the sine.
pub fn lf_c1_series_value(x: f64, p: PulseParams) -> f64 {
    (-p.a * x).exp() * taylor_sine(p.b * x)
}

fn taylor_sine(z: f64) -> f64 {
    z - z.powi(3) / 6.0 + z.powi(5) / 120.0
}

/// `exp(-ax) · 3.5 g(180 - g) / (15000 - g(180 - g))`, `g = bx·180/π`.
pub fn lf_c2_value(x: f64, p: PulseParams) -> f64 {
    let g = p.b * x * 180.0 / PI;
    let q = g * (180.0 - g);
    (-p.a * x).exp() * 3.5 * q / (15000.0 - q)
}

pub fn pulse_hf(grid: &Arc<Grid>, p: PulseParams) -> Result<Field> {
    Field::from_fn(Arc::clone(grid), |x, _| hf_value(x, p))
}

pub fn pulse_lf_c1(grid: &Arc<Grid>, p: PulseParams) -> Result<Field> {
    Field::from_fn(Arc::clone(grid), |x, _| lf_c1_value(x, p))
}

pub fn pulse_lf_c2(grid: &Arc<Grid>, p: PulseParams) -> Result<Field> {
    Field::from_fn(Arc::clone(grid), |x, _| lf_c2_value(x, p))
}

/// The 1D pulse benchmark for either LF case.
#[derive(Debug, Clone)]
pub struct PulseProblem {
    case: PulseCase,
    series_replaces_sine: bool,
    name: String,
    bounds: ParamBounds,
    grid: Arc<Grid>,
}

impl PulseProblem {
    pub fn new(case: PulseCase) -> Self {
        Self::with_grid(case, Grid::uniform_1d(DEFAULT_POINTS, DOMAIN.0, DOMAIN.1).expect("static grid is valid"))
    }

    pub fn with_grid(case: PulseCase, grid: Arc<Grid>) -> Self {
        let name = match case {
            PulseCase::C1 => "pulse_c1",
            PulseCase::C2 => "pulse_c2",
        };
        PulseProblem {
            case,
            series_replaces_sine: false,
            name: name.into(),
            bounds: case.bounds(),
            grid,
        }
    }

    /// For C1, use the truncated series itself rather than the sine of it.
    pub fn series_replaces_sine(mut self, on: bool) -> Self {
        self.series_replaces_sine = on;
        self
    }

    pub fn case(&self) -> PulseCase {
        self.case
    }

    fn params(&self, theta: &[f64]) -> Result<PulseParams> {
        self.bounds.to_normalized(theta)?;
        PulseParams::from_slice(theta)
    }
}

impl Problem for PulseProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn eval_hf(&self, theta: &[f64]) -> Result<Field> {
        pulse_hf(&self.grid, self.params(theta)?)
    }

    fn eval_lf(&self, theta: &[f64]) -> Result<Field> {
        let p = self.params(theta)?;
        match (self.case, self.series_replaces_sine) {
            (PulseCase::C1, false) => pulse_lf_c1(&self.grid, p),
            (PulseCase::C1, true) => Field::from_fn(Arc::clone(&self.grid), |x, _| lf_c1_series_value(x, p)),
            (PulseCase::C2, _) => pulse_lf_c2(&self.grid, p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_origin_vanish() {
        let p = PulseParams { a: 47.0, b: 66.0 };
        assert_eq!(hf_value(0.0, p), 0.0);
        assert_eq!(lf_c1_value(0.0, p), 0.0);
        assert_eq!(lf_c2_value(0.0, p), 0.0);
    }

    #[test]
    fn scalar_oracles() {
        let p = PulseParams {
            a: 0.0,
            b: PI / (2.0 * 0.05),
        };
        assert!((hf_value(0.05, p) - 1.0).abs() < 1e-15);

        let p = PulseParams { a: 50.0, b: 70.0 };
        assert!((hf_value(0.05, p) - (-2.5f64).exp() * 3.5f64.sin()).abs() < 1e-15);
        let inner: f64 = 7.0 - 343.0 / 6.0 + 16807.0 / 120.0;
        assert!((inner - (7.0 - 57.166_666_666_666_67 + 140.058_333_333_333_33)).abs() < 1e-9);
        assert!((lf_c1_value(0.1, p) - (-5.0f64).exp() * inner.sin()).abs() < 1e-14);

        // g = 90 gives 3.5·8100/(15000 - 8100).
        let b = 90.0 * PI / 180.0 / 0.05;
        let q = lf_c2_value(0.05, PulseParams { a: 0.0, b });
        assert!((q - 3.5 * 8100.0 / 6900.0).abs() < 1e-12);
        assert!((q - 4.1087).abs() < 1e-4);
    }

    #[test]
    fn c1_tracks_hf_near_origin() {
        for a in [40.0, 50.0, 60.0] {
            for b in [60.0, 70.0, 80.0] {
                let p = PulseParams { a, b };
                for i in 0..=50 {
                    let x = 0.005 * i as f64 / 50.0;
                    let hf = hf_value(x, p);
                    // Series in place of the sine: remainder (bx)^7/7!.
                    assert!((lf_c1_series_value(x, p) - hf).abs() <= 1e-6);
                    // Sine of the series: |sin s - sin z| <= |s - z| <= (bx)^3/6.
                    assert!((lf_c1_value(x, p) - hf).abs() <= (b * x).powi(3) / 6.0 + 1e-15);
                }
            }
        }
    }

    #[test]
    fn problem_rejects_out_of_range() {
        let prob = PulseProblem::new(PulseCase::C2);
        assert!(prob.eval_hf(&[50.0, 40.0]).is_ok());
        assert!(matches!(prob.eval_hf(&[50.0, 70.0]), Err(Error::OutOfDomain(_))));
        assert_eq!(prob.grid().len(), 256);
    }

    #[test]
    fn series_variant_differs() {
        let a = PulseProblem::new(PulseCase::C1);
        let b = PulseProblem::new(PulseCase::C1).series_replaces_sine(true);
        let t = [50.0, 70.0];
        assert_ne!(a.eval_lf(&t).unwrap(), b.eval_lf(&t).unwrap());
        assert_eq!(a.eval_hf(&t).unwrap(), b.eval_hf(&t).unwrap());
    }
}
