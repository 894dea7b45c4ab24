//! Legendre polynomial chaos: total-order index sets, orthonormal bases,
//! Tikhonov-regularized regression and cross-validated choice of the
//! regularization weight.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::{self, KeyValues};
use crate::linalg::{lstsq_min_norm, psd_pinv_solve};

/// Inputs beyond `1 + DOMAIN_SLACK` in magnitude are rejected.
pub const DOMAIN_SLACK: f64 = 1e-12;

/// Version tag for the multi-index ordering written alongside coefficients.
pub const INDEX_ORDERING: &str = "graded-revlex-v1";

/// Per-coordinate box bounds and the affine map onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ParamBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidArgument("bounds need matching, non-empty lo/hi".into()));
        }
        for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::InvalidArgument(format!("bad bounds for coordinate {i}: [{l}, {h}]")));
            }
        }
        Ok(ParamBounds { lo, hi })
    }

    /// The reference box `[-1, 1]^n`.
    pub fn unit(n: usize) -> Self {
        ParamBounds {
            lo: vec![-1.0; n],
            hi: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// `ξ = 2(θ - lo)/(hi - lo) - 1`, rejecting points outside the box.
    pub fn to_normalized(&self, theta: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                self.dim(),
                theta.len()
            )));
        }
        let xi: Vec<f64> = theta
            .iter()
            .enumerate()
            .map(|(i, t)| 2.0 * (t - self.lo[i]) / (self.hi[i] - self.lo[i]) - 1.0)
            .collect();
        check_unit_box(&xi)?;
        Ok(xi)
    }

    pub fn to_physical(&self, xi: &[f64]) -> Vec<f64> {
        xi.iter()
            .enumerate()
            .map(|(i, x)| self.lo[i] + 0.5 * (x + 1.0) * (self.hi[i] - self.lo[i]))
            .collect()
    }

    /// Renders as `lo:hi` tokens, one per coordinate.
    pub fn tokens(&self) -> Vec<String> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| format!("{}:{}", io::fmt_f64(*l), io::fmt_f64(*h)))
            .collect()
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for t in tokens {
            let t = t.as_ref().trim();
            let (l, h) = t
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("bounds token `{t}` is not `lo:hi`")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad bound `{s}`")))
            };
            lo.push(parse(l)?);
            hi.push(parse(h)?);
        }
        ParamBounds::new(lo, hi)
    }
}

pub(crate) fn check_unit_box(xi: &[f64]) -> Result<()> {
    match xi.iter().position(|x| !(x.abs() <= 1.0 + DOMAIN_SLACK)) {
        Some(i) => Err(Error::OutOfDomain(format!("coordinate {i} = {} lies outside [-1, 1]", xi[i]))),
        None => Ok(()),
    }
}

/// Total-order multi-indices `{β : |β|₁ ≤ p}`.
///
/// Ordered by total degree, then reverse-lexicographically within a degree
/// (so `(1,0)` precedes `(0,1)`); the zero index is first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    n_s: usize,
    degree: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn total_order(n_s: usize, degree: usize) -> Result<Self> {
        if n_s == 0 {
            return Err(Error::InvalidArgument("input dimension must be at least 1".into()));
        }
        let mut indices = Vec::new();
        for d in 0..=degree {
            let mut current = vec![0; n_s];
            push_compositions(d, 0, &mut current, &mut indices);
        }
        Ok(MultiIndexSet { n_s, degree, indices })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_s
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }
}

// Compositions of `remaining` into the slots from `pos` on, largest leading part first.
fn push_compositions(remaining: usize, pos: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    let n = current.len();
    if pos == n - 1 {
        current[pos] = remaining;
        out.push(current.clone());
        current[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        current[pos] = v;
        push_compositions(remaining - v, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Orthonormal Legendre polynomial `sqrt(2d+1) P_d(ξ)` under the uniform
/// density on `[-1, 1]`.
pub fn legendre_orthonormal(degree: usize, xi: f64) -> Result<f64> {
    check_unit_box(&[xi])?;
    let mut table = vec![0.0; degree + 1];
    legendre_table(xi, &mut table);
    Ok(table[degree])
}

/// Fills `out[d] = sqrt(2d+1) P_d(ξ)` for `d < out.len()` via the three-term recurrence.
pub(crate) fn legendre_table(xi: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let mut p_prev = 1.0;
    out[0] = 1.0;
    if out.len() == 1 {
        return;
    }
    let mut p = xi;
    out[1] = 3f64.sqrt() * xi;
    for d in 1..out.len() - 1 {
        let df = d as f64;
        let next = ((2.0 * df + 1.0) * xi * p - df * p_prev) / (df + 1.0);
        p_prev = p;
        p = next;
        out[d + 1] = (2.0 * (df + 1.0) + 1.0).sqrt() * p;
    }
}

/// Evaluates every basis polynomial at one point.
pub(crate) fn basis_row(idx: &MultiIndexSet, xi: &[f64], table: &mut Vec<f64>, out: &mut [f64]) {
    let stride = idx.degree + 1;
    table.resize(stride * idx.n_s, 0.0);
    for (i, &x) in xi.iter().enumerate() {
        legendre_table(x, &mut table[i * stride..(i + 1) * stride]);
    }
    for (j, beta) in idx.indices.iter().enumerate() {
        out[j] = beta
            .iter()
            .enumerate()
            .map(|(i, &b)| table[i * stride + b])
            .product();
    }
}

/// Regression matrix with entries `Ψ_{β^{(j)}}(ξ^{(n)})`.
pub fn basis_matrix(design: &DMatrix<f64>, idx: &MultiIndexSet) -> Result<DMatrix<f64>> {
    if design.ncols() != idx.n_s {
        return Err(Error::InvalidArgument(format!(
            "design has {} columns, basis expects {}",
            design.ncols(),
            idx.n_s
        )));
    }
    check_unit_box(design.as_slice())?;
    let mut a = DMatrix::zeros(design.nrows(), idx.len());
    let mut table = Vec::new();
    let mut row = vec![0.0; idx.len()];
    let mut xi = vec![0.0; idx.n_s];
    for n in 0..design.nrows() {
        for i in 0..idx.n_s {
            xi[i] = design[(n, i)];
        }
        basis_row(idx, &xi, &mut table, &mut row);
        for j in 0..idx.len() {
            a[(n, j)] = row[j];
        }
    }
    Ok(a)
}

/// `ΓᵀΓ` for the `(n_t-1) × n_t` first-difference operator (rows `[.. -1 +1 ..]`).
pub fn first_difference_gram(n_t: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n_t, n_t);
    for r in 0..n_t.saturating_sub(1) {
        g[(r, r)] += 1.0;
        g[(r + 1, r + 1)] += 1.0;
        g[(r, r + 1)] -= 1.0;
        g[(r + 1, r)] -= 1.0;
    }
    g
}

/// `argmin ‖A b - c‖² + τ ‖Γ b‖²`.
///
/// At `τ = 0` the least-squares problem is solved by QR, or by a pseudo-inverse
/// giving the minimum-norm solution when `A` is rank deficient. For `τ > 0` the normal
/// equations are Cholesky-factored, falling back to a pseudo-inverse.
pub fn fit_ridge(a: &DMatrix<f64>, c: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("regularization must be finite and >= 0, got {tau}")));
    }
    if a.nrows() != c.len() {
        return Err(Error::InvalidArgument("row count of A must match length of c".into()));
    }
    if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite regression data".into()));
    }
    if tau == 0.0 {
        return Ok(lstsq_min_norm(a, c));
    }
    let gram = a.tr_mul(a) + first_difference_gram(a.ncols()) * tau;
    let rhs = a.tr_mul(c);
    solve_normal(gram, rhs)
}

fn solve_normal(gram: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = gram.clone().cholesky() {
        return Ok(chol.solve(&rhs));
    }
    Ok(psd_pinv_solve(gram, &rhs))
}

/// Assigns `n` samples to `k` folds through a seeded permutation, round-robin,
/// so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

/// Mean held-out squared error for each candidate `τ`.
pub fn tau_cv_scores(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    tau_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = a.nrows();
    if folds < 2 || n < folds {
        return Err(Error::InvalidArgument(format!("need 2 <= folds <= N, got folds={folds}, N={n}")));
    }
    let assign = fold_assignment(n, folds, seed);
    let mut scores = vec![0.0; tau_grid.len()];
    let gamma = first_difference_gram(a.ncols());
    for f in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assign[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assign[i] == f).collect();
        let a_tr = a.select_rows(&train);
        let c_tr = c.select_rows(&train);
        let a_te = a.select_rows(&test);
        let c_te = c.select_rows(&test);
        let ata = a_tr.tr_mul(&a_tr);
        let atc = a_tr.tr_mul(&c_tr);
        for (t, &tau) in tau_grid.iter().enumerate() {
            let b = if tau == 0.0 {
                lstsq_min_norm(&a_tr, &c_tr)
            } else {
                solve_normal(&ata + &gamma * tau, atc.clone())?
            };
            scores[t] += (&a_te * b - &c_te).norm_squared();
        }
    }
    for s in &mut scores {
        *s /= n as f64;
    }
    Ok(scores)
}

/// Picks the `τ` with the smallest k-fold error; near-ties go to the larger `τ`.
pub fn select_tau(
    a: &DMatrix<f64>,
    c: &DVector<f64>,
    tau_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<f64> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidArgument("empty regularization grid".into()));
    }
    let scores = tau_cv_scores(a, c, tau_grid, folds, seed)?;
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-10;
    let mut chosen = None;
    for (t, &tau) in tau_grid.iter().enumerate() {
        if scores[t] <= best + tol && chosen.map_or(true, |c: f64| tau > c) {
            chosen = Some(tau);
        }
    }
    chosen.ok_or_else(|| Error::Numerical("cross-validation produced no finite score".into()))
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            (0..count)
                .map(|i| 10f64.powf(a + (b - a) * i as f64 / (count - 1) as f64))
                .collect()
        }
    }
}

/// How the regularization weight of a PCE fit is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum TauPolicy {
    Fixed(f64),
    /// k-fold selection on the first mode, reused for every mode.
    CrossValidated { grid: Vec<f64>, folds: usize, seed: u64 },
}

impl Default for TauPolicy {
    fn default() -> Self {
        TauPolicy::CrossValidated {
            grid: log_spaced(1e-8, 1e2, 25),
            folds: 5,
            seed: 0,
        }
    }
}

/// One PCE per KLE mode over a shared index set.
#[derive(Debug, Clone, PartialEq)]
pub struct PceModel {
    index: MultiIndexSet,
    coefficients: DMatrix<f64>,
    tau: f64,
}

impl PceModel {
    pub fn new(index: MultiIndexSet, coefficients: DMatrix<f64>, tau: f64) -> Result<Self> {
        if coefficients.nrows() != index.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficient rows for {} basis terms",
                coefficients.nrows(),
                index.len()
            )));
        }
        if coefficients.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite PCE coefficient".into()));
        }
        Ok(PceModel {
            index,
            coefficients,
            tau,
        })
    }

    /// Fits every column of `zeta` (`N × k_t`) against `design` (`N × n_s`).
    pub fn fit(design: &DMatrix<f64>, zeta: &DMatrix<f64>, index: MultiIndexSet, policy: &TauPolicy) -> Result<Self> {
        let a = basis_matrix(design, &index)?;
        let k_t = zeta.ncols();
        let tau = match policy {
            TauPolicy::Fixed(t) => *t,
            TauPolicy::CrossValidated { grid, folds, seed } => {
                let n = design.nrows();
                if k_t == 0 || n < 2 {
                    grid.first().copied().unwrap_or(0.0)
                } else {
                    select_tau(&a, &zeta.column(0).into_owned(), grid, (*folds).min(n), *seed)?
                }
            }
        };
        let mut coefficients = DMatrix::zeros(index.len(), k_t);
        for k in 0..k_t {
            let b = fit_ridge(&a, &zeta.column(k).into_owned(), tau)?;
            coefficients.set_column(k, &b);
        }
        PceModel::new(index, coefficients, tau)
    }

    pub fn index(&self) -> &MultiIndexSet {
        &self.index
    }

    /// `n_t × k_t`.
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_modes(&self) -> usize {
        self.coefficients.ncols()
    }

    /// `ζ_k(ξ) = Σ_j b_{k,j} Ψ_j(ξ)`.
    pub fn predict(&self, xi: &[f64]) -> Result<Vec<f64>> {
        if xi.len() != self.index.n_s {
            return Err(Error::InvalidArgument(format!(
                "expected {} inputs, got {}",
                self.index.n_s,
                xi.len()
            )));
        }
        check_unit_box(xi)?;
        let mut table = Vec::new();
        let mut row = vec![0.0; self.index.len()];
        basis_row(&self.index, xi, &mut table, &mut row);
        Ok((0..self.n_modes())
            .map(|k| {
                self.coefficients
                    .column(k)
                    .iter()
                    .zip(&row)
                    .map(|(b, psi)| b * psi)
                    .sum()
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        let header: Vec<String> = (1..=self.n_modes()).map(|k| format!("mode_{k}")).collect();
        io::write_matrix_csv(&dir.join("coefficients.csv"), &header, &self.coefficients)?;
        let mut meta = KeyValues::new();
        meta.set("n_s", self.index.n_s);
        meta.set("degree", self.index.degree);
        meta.set("n_t", self.index.len());
        meta.set("k_t", self.n_modes());
        meta.set("tau", io::fmt_f64(self.tau));
        meta.set("ordering", INDEX_ORDERING);
        meta.write(&dir.join("pce.meta"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = KeyValues::read(&dir.join("pce.meta"))?;
        if meta.require("ordering")? != INDEX_ORDERING {
            return Err(Error::config("ordering", "unsupported multi-index ordering"));
        }
        let index = MultiIndexSet::total_order(meta.parse_required("n_s")?, meta.parse_required("degree")?)?;
        let k_t: usize = meta.parse_required("k_t")?;
        let (_, coefficients) = io::read_matrix_csv(&dir.join("coefficients.csv"))?;
        let coefficients = if k_t == 0 { DMatrix::zeros(index.len(), 0) } else { coefficients };
        PceModel::new(index, coefficients, meta.parse_required("tau")?)
    }
}
