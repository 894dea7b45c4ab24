//! Gaussian-process regression with an anisotropic Matérn-5/2 kernel.
//!
//! Targets are standardized to zero mean and unit variance before fitting;
//! posterior moments are reported on the original scale. Hyperparameters are
//! fitted by maximum marginal likelihood using multi-start BFGS in a bounded
//! log-space parametrization.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{self, KeyValues};

/// Fixed diagonal jitter added on top of the learned nugget.
pub const JITTER: f64 = 1e-10;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Kernel hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub signal_var: f64,
    pub lengths: Vec<f64>,
    pub nugget: f64,
}

impl Hyper {
    pub fn isotropic(dim: usize, signal_var: f64, length: f64, nugget: f64) -> Self {
        Hyper {
            signal_var,
            lengths: vec![length; dim],
            nugget,
        }
    }
}

/// `σ² (1 + √5 r + 5r²/3) exp(-√5 r)` with `r² = Σ_d ((x_d - y_d)/ℓ_d)²`.
pub fn matern52(x: &[f64], y: &[f64], hyper: &Hyper) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(&hyper.lengths)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    matern52_r(r2.sqrt(), hyper.signal_var)
}

fn matern52_r(r: f64, signal_var: f64) -> f64 {
    let s = SQRT5 * r;
    signal_var * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Bounds and restart settings for maximum-likelihood fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct GpConfig {
    pub n_starts: usize,
    pub length_bounds: (f64, f64),
    pub signal_bounds: (f64, f64),
    pub nugget_bounds: (f64, f64),
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            n_starts: 8,
            length_bounds: (1e-2, 1e1),
            signal_bounds: (1e-3, 1e1),
            nugget_bounds: (1e-8, 1e-1),
            max_iter: 200,
            seed: 0,
        }
    }
}

/// A conditioned GP: training data, hyperparameters and the factorized kernel.
#[derive(Debug, Clone)]
pub struct GpModel {
    inputs: DMatrix<f64>,
    targets: Vec<f64>,
    shift: f64,
    scale: f64,
    hyper: Hyper,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    log_likelihood: f64,
}

/// Fits hyperparameters by multi-start maximum likelihood and conditions on the data.
///
/// `inputs` is `M × n_s` in normalized coordinates.
pub fn fit_gp(inputs: &DMatrix<f64>, targets: &[f64], config: &GpConfig) -> Result<GpModel> {
    let (shift, scale) = validate(inputs, targets)?;
    let y = standardize(targets, shift, scale);
    let space = LogBox::new(inputs.ncols(), config);
    let dists = PairDistances::new(inputs);

    let mut best: Option<(f64, DVector<f64>)> = None;
    for start in space.starts(config.n_starts.max(1), config.seed) {
        let (u, nll) = bfgs(&start, config.max_iter, |u| neg_log_likelihood(&dists, &y, &space.hyper(u), Some(&space.jacobian(u))));
        if nll.is_finite() && best.as_ref().map_or(true, |(b, _)| nll < *b) {
            best = Some((nll, u));
        }
    }
    let (_, u) = best.ok_or_else(|| Error::Numerical("every likelihood start failed".into()))?;
    GpModel::condition(inputs.clone(), targets.to_vec(), space.hyper(&u), shift, scale)
}

impl GpModel {
    /// Conditions on data with given hyperparameters and standardization.
    pub fn condition(inputs: DMatrix<f64>, targets: Vec<f64>, hyper: Hyper, shift: f64, scale: f64) -> Result<Self> {
        if hyper.lengths.len() != inputs.ncols() {
            return Err(Error::InvalidArgument("length-scale count must match input dimension".into()));
        }
        if inputs.nrows() != targets.len() || targets.is_empty() {
            return Err(Error::InvalidArgument("need one target per input row".into()));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument("target scale must be positive".into()));
        }
        let y = standardize(&targets, shift, scale);
        let k = kernel_matrix(&inputs, &hyper);
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Numerical("kernel matrix is not positive definite".into()))?;
        let alpha = chol.solve(&y);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let m = y.len() as f64;
        let log_likelihood = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * m * (2.0 * std::f64::consts::PI).ln();
        Ok(GpModel {
            inputs,
            targets,
            shift,
            scale,
            hyper,
            chol,
            alpha,
            log_likelihood,
        })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// `(shift, scale)` of the target standardization.
    pub fn standardization(&self) -> (f64, f64) {
        (self.shift, self.scale)
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Log marginal likelihood of this model's standardized data under other hyperparameters.
    pub fn log_likelihood_at(&self, hyper: &Hyper) -> f64 {
        let y = standardize(&self.targets, self.shift, self.scale);
        -neg_log_likelihood(&PairDistances::new(&self.inputs), &y, hyper, None).0
    }

    /// Posterior mean and variance on the original target scale.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.posterior_raw(x);
        (m, v.max(0.0))
    }

    /// Posterior moments before clamping the variance at zero.
    pub fn posterior_raw(&self, x: &[f64]) -> (f64, f64) {
        let ks = DVector::from_iterator(
            self.inputs.nrows(),
            self.inputs.row_iter().map(|row| {
                let row: Vec<f64> = row.iter().copied().collect();
                matern52(&row, x, &self.hyper)
            }),
        );
        let mean = ks.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&ks).expect("triangular factor is nonsingular");
        let var = self.hyper.signal_var - v.norm_squared();
        (self.shift + self.scale * mean, var * self.scale * self.scale)
    }

    /// Posterior moments at each row of `points` (`C × n_s`).
    pub fn posterior_many(&self, points: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        let m = self.inputs.nrows();
        let c = points.nrows();
        let mut ks = DMatrix::zeros(m, c);
        let mut a = vec![0.0; self.dim()];
        let mut b = vec![0.0; self.dim()];
        for j in 0..c {
            for d in 0..self.dim() {
                b[d] = points[(j, d)];
            }
            for i in 0..m {
                for d in 0..self.dim() {
                    a[d] = self.inputs[(i, d)];
                }
                ks[(i, j)] = matern52(&a, &b, &self.hyper);
            }
        }
        let means = ks.tr_mul(&self.alpha);
        let l = self.chol.l();
        let v = l.solve_lower_triangular(&ks).expect("triangular factor is nonsingular");
        let s2 = self.scale * self.scale;
        let vars = (0..c)
            .map(|j| ((self.hyper.signal_var - v.column(j).norm_squared()) * s2).max(0.0))
            .collect();
        let means = means.iter().map(|mu| self.shift + self.scale * mu).collect();
        (means, vars)
    }

    /// The same GP conditioned on one extra observation, with hyperparameters
    /// and standardization left unchanged.
    pub fn with_observation(&self, x: &[f64], y: f64) -> Result<GpModel> {
        let m = self.inputs.nrows();
        let mut inputs = self.inputs.clone().insert_row(m, 0.0);
        for (d, v) in x.iter().enumerate() {
            inputs[(m, d)] = *v;
        }
        let mut targets = self.targets.clone();
        targets.push(y);
        GpModel::condition(inputs, targets, self.hyper.clone(), self.shift, self.scale)
    }

    /// Writes hyperparameters to `gp.meta` and training data to `gp_data.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        let mut meta = KeyValues::new();
        meta.set("signal_var", io::fmt_f64(self.hyper.signal_var));
        let lengths: Vec<String> = self.hyper.lengths.iter().map(|l| io::fmt_f64(*l)).collect();
        meta.set("lengths", lengths.join(" "));
        meta.set("nugget", io::fmt_f64(self.hyper.nugget));
        meta.set("jitter", io::fmt_f64(JITTER));
        meta.set("shift", io::fmt_f64(self.shift));
        meta.set("scale", io::fmt_f64(self.scale));
        meta.set("log_likelihood", io::fmt_f64(self.log_likelihood));
        meta.write(&dir.join("gp.meta"))?;
        let n_s = self.dim();
        let mut data = DMatrix::zeros(self.targets.len(), n_s + 1);
        data.columns_mut(0, n_s).copy_from(&self.inputs);
        data.set_column(n_s, &DVector::from_column_slice(&self.targets));
        let mut header: Vec<String> = (1..=n_s).map(|d| format!("xi_{d}")).collect();
        header.push("target".into());
        io::write_matrix_csv(&dir.join("gp_data.csv"), &header, &data)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = KeyValues::read(&dir.join("gp.meta"))?;
        let lengths = meta
            .require("lengths")?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::config("lengths", format!("bad value `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        let hyper = Hyper {
            signal_var: meta.parse_required("signal_var")?,
            lengths,
            nugget: meta.parse_required("nugget")?,
        };
        let (_, data) = io::read_matrix_csv(&dir.join("gp_data.csv"))?;
        let n_s = data.ncols() - 1;
        let inputs = data.columns(0, n_s).into_owned();
        let targets = data.column(n_s).iter().copied().collect();
        GpModel::condition(inputs, targets, hyper, meta.parse_required("shift")?, meta.parse_required("scale")?)
    }
}

fn validate(inputs: &DMatrix<f64>, targets: &[f64]) -> Result<(f64, f64)> {
    if inputs.nrows() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs but {} targets",
            inputs.nrows(),
            targets.len()
        )));
    }
    if targets.len() < 2 {
        return Err(Error::InsufficientData("a GP fit needs at least 2 observations".into()));
    }
    if inputs.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite GP training data".into()));
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 * mean.abs().max(1e-300) { sd } else { 1.0 };
    Ok((mean, scale))
}

fn standardize(targets: &[f64], shift: f64, scale: f64) -> DVector<f64> {
    DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - shift) / scale))
}

fn kernel_matrix(inputs: &DMatrix<f64>, hyper: &Hyper) -> DMatrix<f64> {
    let m = inputs.nrows();
    let rows: Vec<Vec<f64>> = inputs.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = hyper.signal_var + hyper.nugget + JITTER;
        for j in 0..i {
            let v = matern52(&rows[i], &rows[j], hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Squared coordinate differences for every input pair, per dimension.
struct PairDistances {
    m: usize,
    sq: Vec<DMatrix<f64>>,
}

impl PairDistances {
    fn new(inputs: &DMatrix<f64>) -> Self {
        let m = inputs.nrows();
        let sq = (0..inputs.ncols())
            .map(|d| DMatrix::from_fn(m, m, |i, j| (inputs[(i, d)] - inputs[(j, d)]).powi(2)))
            .collect();
        PairDistances { m, sq }
    }
}

/// Negative log likelihood and, when a parameter jacobian is supplied, its
/// gradient with respect to the unconstrained coordinates.
///
/// Hyperparameter order is `[ln σ², ln ℓ_1 .. ln ℓ_d, ln nugget]`; `jac[i]` is
/// `d(ln p_i)/du_i`.
fn neg_log_likelihood(dists: &PairDistances, y: &DVector<f64>, hyper: &Hyper, jac: Option<&[f64]>) -> (f64, Vec<f64>) {
    let m = dists.m;
    let n_s = dists.sq.len();
    let mut r = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let r2: f64 = (0..n_s).map(|d| dists.sq[d][(i, j)] / (hyper.lengths[d] * hyper.lengths[d])).sum();
            r[(i, j)] = r2.sqrt();
        }
    }
    let mut k = r.map(|rij| matern52_r(rij, hyper.signal_var));
    for i in 0..m {
        k[(i, i)] += hyper.nugget + JITTER;
    }
    let Some(chol) = k.clone().cholesky() else {
        return (f64::INFINITY, vec![0.0; n_s + 2]);
    };
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let nll = 0.5 * y.dot(&alpha) + 0.5 * log_det + 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();
    let Some(jac) = jac else {
        return (nll, Vec::new());
    };

    // dL/dp = ½ tr((ααᵀ - K⁻¹) dK/dp); we return -dL/du.
    let w = &alpha * alpha.transpose() - chol.inverse();
    let mut grad = vec![0.0; n_s + 2];
    let mut g_sig = 0.0;
    let mut g_len = vec![0.0; n_s];
    let mut g_nug = 0.0;
    for i in 0..m {
        g_nug += w[(i, i)] * hyper.nugget;
        for j in 0..m {
            let rij = r[(i, j)];
            let kij = matern52_r(rij, hyper.signal_var);
            g_sig += w[(i, j)] * kij;
            if rij > 0.0 {
                let s = SQRT5 * rij;
                let common = hyper.signal_var * (5.0 / 3.0) * (1.0 + s) * (-s).exp();
                for d in 0..n_s {
                    let dk = common * dists.sq[d][(i, j)] / (hyper.lengths[d] * hyper.lengths[d]);
                    g_len[d] += w[(i, j)] * dk;
                }
            }
        }
    }
    grad[0] = -0.5 * g_sig * jac[0];
    for d in 0..n_s {
        grad[1 + d] = -0.5 * g_len[d] * jac[1 + d];
    }
    grad[n_s + 1] = -0.5 * g_nug * jac[n_s + 1];
    (nll, grad)
}

/// Maps unconstrained `u` onto the hyperparameter box through a logistic
/// function in log space.
struct LogBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl LogBox {
    fn new(n_s: usize, cfg: &GpConfig) -> Self {
        let mut lo = vec![cfg.signal_bounds.0.ln()];
        let mut hi = vec![cfg.signal_bounds.1.ln()];
        for _ in 0..n_s {
            lo.push(cfg.length_bounds.0.ln());
            hi.push(cfg.length_bounds.1.ln());
        }
        lo.push(cfg.nugget_bounds.0.ln());
        hi.push(cfg.nugget_bounds.1.ln());
        LogBox { lo, hi }
    }

    fn log_params(&self, u: &DVector<f64>) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, ui)| self.lo[i] + (self.hi[i] - self.lo[i]) * sigmoid(*ui))
            .collect()
    }

    fn hyper(&self, u: &DVector<f64>) -> Hyper {
        let p = self.log_params(u);
        let n = p.len();
        Hyper {
            signal_var: p[0].exp(),
            lengths: p[1..n - 1].iter().map(|v| v.exp()).collect(),
            nugget: p[n - 1].exp(),
        }
    }

    fn jacobian(&self, u: &DVector<f64>) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, ui)| {
                let s = sigmoid(*ui);
                (self.hi[i] - self.lo[i]) * s * (1.0 - s)
            })
            .collect()
    }

    fn to_unconstrained(&self, log_p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            log_p.len(),
            log_p.iter().enumerate().map(|(i, v)| {
                let s = ((v - self.lo[i]) / (self.hi[i] - self.lo[i])).clamp(1e-6, 1.0 - 1e-6);
                (s / (1.0 - s)).ln()
            }),
        )
    }

    /// A fixed central start followed by seeded uniform draws in log space.
    fn starts(&self, n: usize, seed: u64) -> Vec<DVector<f64>> {
        let dim = self.lo.len();
        let mut central: Vec<f64> = vec![0.0; dim];
        central[0] = 0.0;
        for v in central.iter_mut().take(dim - 1).skip(1) {
            *v = 0.5f64.ln();
        }
        central[dim - 1] = 1e-4f64.ln();
        let mut out = vec![self.to_unconstrained(&central)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while out.len() < n {
            let p: Vec<f64> = (0..dim).map(|i| rng.gen_range(self.lo[i]..self.hi[i])).collect();
            out.push(self.to_unconstrained(&p));
        }
        out
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// BFGS with a backtracking Armijo line search. Returns the best point seen
/// and its objective value.
fn bfgs<F>(x0: &DVector<f64>, max_iter: usize, f: F) -> (DVector<f64>, f64)
where
    F: Fn(&DVector<f64>) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.clone();
    let (mut fx, g) = f(&x);
    if !fx.is_finite() {
        return (x, fx);
    }
    let mut g = DVector::from_vec(g);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        if g.amax() < 1e-7 {
            break;
        }
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = -g.norm_squared();
        }
        let max_step = dir.amax();
        let mut step = if max_step > 5.0 { 5.0 / max_step } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &x + &dir * step;
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, DVector::from_vec(gt)));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        let improvement = fx - fn_;
        x = xn;
        g = gn;
        fx = fn_;
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * yv.transpose() * rho;
            let right = &i - &yv * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
        if improvement.abs() < 1e-12 * (1.0 + fx.abs()) {
            break;
        }
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn three_point() -> (DMatrix<f64>, Vec<f64>) {
        (DMatrix::from_row_slice(3, 1, &[-0.7, 0.1, 0.8]), vec![0.2, 0.9, 0.4])
    }

    #[test]
    fn matern_closed_form() {
        let h = Hyper::isotropic(1, 1.0, 1.0, 0.0);
        let expected = (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        assert!((matern52(&[0.0], &[1.0], &h) - expected).abs() < 1e-12);
        assert!((expected - 0.52399).abs() < 1e-5);
        let h2 = Hyper::isotropic(2, 2.5, 0.3, 0.0);
        assert_eq!(matern52(&[0.1, 0.2], &[0.1, 0.2], &h2), 2.5);
        assert!(matern52(&[0.0, 0.0], &[1e3, 0.0], &h2) < 1e-300);
    }

    #[test]
    fn anisotropic_lengths_scale_each_axis() {
        let h = Hyper {
            signal_var: 1.0,
            lengths: vec![2.0, 0.5],
            nugget: 0.0,
        };
        let iso = Hyper::isotropic(1, 1.0, 1.0, 0.0);
        let a = matern52(&[0.0, 0.0], &[1.2, 0.3], &h);
        let r = ((0.6f64).powi(2) + (0.6f64).powi(2)).sqrt();
        assert!((a - matern52(&[0.0], &[r], &iso)).abs() < 1e-14);
    }

    #[test]
    fn posterior_matches_dense_inverse() {
        let (x, y) = three_point();
        let hyper = Hyper::isotropic(1, 1.3, 0.4, 1e-6);
        let (shift, scale) = (0.5, 0.3);
        let gp = GpModel::condition(x.clone(), y.clone(), hyper.clone(), shift, scale).unwrap();

        let k = DMatrix::from_fn(3, 3, |i, j| {
            let base = matern52(&[x[(i, 0)]], &[x[(j, 0)]], &hyper);
            if i == j {
                base + hyper.nugget + JITTER
            } else {
                base
            }
        });
        let kinv = k.try_inverse().unwrap();
        let ys = DVector::from_iterator(3, y.iter().map(|v| (v - shift) / scale));
        for t in [-1.0, -0.2, 0.35, 0.95] {
            let ks = DVector::from_fn(3, |i, _| matern52(&[x[(i, 0)]], &[t], &hyper));
            let mean = shift + scale * (ks.transpose() * &kinv * &ys)[0];
            let var = scale * scale * (hyper.signal_var - (ks.transpose() * &kinv * &ks)[0]);
            let (m, v) = gp.posterior(&[t]);
            assert!((m - mean).abs() < 1e-10, "{m} {mean}");
            assert!((v - var.max(0.0)).abs() < 1e-10, "{v} {var}");
        }
    }

    #[test]
    fn interpolates_training_points_with_small_nugget() {
        let (x, y) = three_point();
        let gp = GpModel::condition(x.clone(), y.clone(), Hyper::isotropic(1, 1.0, 0.5, 1e-8), 0.5, 0.3).unwrap();
        for i in 0..3 {
            let (m, v) = gp.posterior(&[x[(i, 0)]]);
            assert!((m - y[i]).abs() < 1e-4);
            assert!(v < 1e-6);
        }
    }

    #[test]
    fn far_points_revert_to_prior() {
        let (x, y) = three_point();
        let gp = GpModel::condition(x, y, Hyper::isotropic(1, 0.8, 0.1, 1e-6), 0.5, 0.3).unwrap();
        let (m, v) = gp.posterior(&[50.0]);
        assert!((m - 0.5).abs() < 1e-12);
        assert!((v - 0.8 * 0.09).abs() < 1e-12);
    }

    #[test]
    fn constant_targets_give_constant_mean() {
        let x = DMatrix::from_row_slice(4, 2, &[-0.5, 0.1, 0.3, -0.9, 0.8, 0.8, 0.0, 0.0]);
        let gp = fit_gp(&x, &[0.25; 4], &GpConfig::default()).unwrap();
        for p in [[0.1, 0.1], [-1.0, 1.0], [0.7, -0.2]] {
            assert!((gp.posterior(&p).0 - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn mle_beats_every_start() {
        let x = DMatrix::from_row_slice(6, 1, &[-0.9, -0.5, -0.1, 0.2, 0.6, 0.95]);
        let y: Vec<f64> = (0..6).map(|i| (3.0_f64 * x[(i, 0)]).sin()).collect();
        let cfg = GpConfig::default();
        let gp = fit_gp(&x, &y, &cfg).unwrap();
        let space = LogBox::new(1, &cfg);
        for u in space.starts(cfg.n_starts, cfg.seed) {
            assert!(gp.log_likelihood() >= gp.log_likelihood_at(&space.hyper(&u)) - 1e-9);
        }
        assert!((gp.log_likelihood() - gp.log_likelihood_at(gp.hyper())).abs() < 1e-9);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let x = DMatrix::from_row_slice(5, 2, &[-0.9, 0.3, -0.2, -0.7, 0.4, 0.5, 0.8, -0.1, 0.1, 0.9]);
        let y = DVector::from_vec(vec![0.3, -1.1, 0.7, 0.2, -0.4]);
        let space = LogBox::new(2, &GpConfig::default());
        let d = PairDistances::new(&x);
        let u = DVector::from_vec(vec![0.2, -0.4, 0.3, -1.0]);
        let (_, g) = neg_log_likelihood(&d, &y, &space.hyper(&u), Some(&space.jacobian(&u)));
        for i in 0..u.len() {
            let h = 1e-6;
            let mut up = u.clone();
            up[i] += h;
            let mut dn = u.clone();
            dn[i] -= h;
            let fd = (neg_log_likelihood(&d, &y, &space.hyper(&up), None).0
                - neg_log_likelihood(&d, &y, &space.hyper(&dn), None).0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn duplicate_inputs_are_absorbed_by_nugget() {
        let x = DMatrix::from_row_slice(4, 1, &[0.1, 0.1, 0.5, -0.3]);
        let gp = fit_gp(&x, &[1.0, 1.2, 0.3, 0.7], &GpConfig::default()).unwrap();
        assert!(gp.posterior(&[0.1]).0.is_finite());
    }

    #[test]
    fn rejects_non_finite_targets() {
        let x = DMatrix::from_row_slice(2, 1, &[0.1, 0.5]);
        assert!(matches!(
            fit_gp(&x, &[1.0, f64::NAN], &GpConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn believer_update_keeps_hyperparameters() {
        let (x, y) = three_point();
        let gp = GpModel::condition(x, y, Hyper::isotropic(1, 1.0, 0.5, 1e-6), 0.5, 0.3).unwrap();
        let (m, _) = gp.posterior(&[0.5]);
        let g2 = gp.with_observation(&[0.5], m).unwrap();
        assert_eq!(g2.hyper(), gp.hyper());
        assert_eq!(g2.standardization(), gp.standardization());
        assert!(g2.posterior(&[0.5]).1 < 1e-5);
        assert!((g2.posterior(&[0.5]).0 - m).abs() < 1e-6);
    }

    #[test]
    fn save_load_round_trip() {
        let (x, y) = three_point();
        let gp = fit_gp(&x, &y, &GpConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        gp.save(dir.path()).unwrap();
        let back = GpModel::load(dir.path()).unwrap();
        assert_eq!(back.posterior(&[0.3]), gp.posterior(&[0.3]));
    }

    #[test]
    fn posterior_many_matches_pointwise() {
        let x = DMatrix::from_row_slice(4, 2, &[-0.5, 0.1, 0.3, -0.9, 0.8, 0.8, 0.0, 0.0]);
        let gp = GpModel::condition(x, vec![0.1, 0.4, 0.2, 0.9], Hyper::isotropic(2, 1.0, 0.6, 1e-6), 0.4, 0.3).unwrap();
        let pts = DMatrix::from_row_slice(3, 2, &[0.2, 0.2, -1.0, 1.0, 0.8, 0.79]);
        let (ms, vs) = gp.posterior_many(&pts);
        for j in 0..3 {
            let (m, v) = gp.posterior(&[pts[(j, 0)], pts[(j, 1)]]);
            assert!((m - ms[j]).abs() < 1e-12 && (v - vs[j]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn variance_nonnegative_before_clamp(px in -1.0f64..1.0, py in -1.0f64..1.0) {
            let x = DMatrix::from_row_slice(5, 2, &[-0.5, 0.1, 0.3, -0.9, 0.8, 0.8, 0.0, 0.0, -0.9, 0.9]);
            let gp = GpModel::condition(x, vec![0.1, 0.4, 0.2, 0.9, 0.5], Hyper::isotropic(2, 1.0, 0.6, 1e-8), 0.0, 1.0).unwrap();
            let (_, v) = gp.posterior_raw(&[px, py]);
            prop_assert!(v >= -1e-8);
        }

        #[test]
        fn mean_is_linear_in_targets(a in -2.0f64..2.0, b in -2.0f64..2.0, t in -1.0f64..1.0) {
            let (x, _) = three_point();
            let h = Hyper::isotropic(1, 1.0, 0.5, 1e-6);
            let y1 = vec![0.2, -0.3, 0.8];
            let y2 = vec![1.0, 0.4, -0.6];
            let y3: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| a * p + b * q).collect();
            let m = |y: Vec<f64>| GpModel::condition(x.clone(), y, h.clone(), 0.0, 1.0).unwrap().posterior(&[t]).0;
            let lhs = m(y3);
            let rhs = a * m(y1) + b * m(y2);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }
    }
}
