//! Discrete Karhunen–Loève expansion of snapshot sets.
//!
//! The weighted eigenproblem `(C W) q = λ q` with `C = S Sᵀ / (N-1)` is solved
//! through the singular pairs of `B = W^{1/2} S / sqrt(N-1)`: eigenvalues are
//! the squared singular values and modes are `W^{-1/2} U`. The singular pairs
//! come from the smaller of the two Gram matrices of `B`, so no `n_g × n_g`
//! covariance is formed when `N < n_g`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::io::{self, KeyValues};
use crate::linalg::left_singular;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGENVALUE_CUTOFF: f64 = 1e-12;

/// Field realizations (one column each) paired with their normalized design.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    grid: Arc<Grid>,
    data: DMatrix<f64>,
    design: DMatrix<f64>,
}

impl SnapshotSet {
    /// `data` is `n_g × N`; `design` is `N × n_s` in normalized coordinates.
    pub fn new(grid: Arc<Grid>, data: DMatrix<f64>, design: DMatrix<f64>) -> Result<Self> {
        if data.nrows() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "snapshot matrix has {} rows but grid has {} points",
                data.nrows(),
                grid.len()
            )));
        }
        if data.ncols() != design.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} snapshots but {} design rows",
                data.ncols(),
                design.nrows()
            )));
        }
        if data.iter().chain(design.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("snapshot set contains non-finite entries".into()));
        }
        Ok(SnapshotSet { grid, data, design })
    }

    pub fn from_fields(grid: Arc<Grid>, fields: &[Field], design: DMatrix<f64>) -> Result<Self> {
        let mut data = DMatrix::zeros(grid.len(), fields.len());
        for (n, f) in fields.iter().enumerate() {
            if **f.grid() != *grid {
                return Err(Error::IncompatibleGrids(format!("snapshot {n} lives on a different grid")));
            }
            data.column_mut(n).copy_from_slice(f.values());
        }
        SnapshotSet::new(grid, data, design)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Number of realizations `N`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn n_params(&self) -> usize {
        self.design.ncols()
    }

    pub fn field(&self, n: usize) -> Field {
        Field::from_parts_unchecked(Arc::clone(&self.grid), self.data.column(n).iter().copied().collect())
    }

    pub fn design_row(&self, n: usize) -> Vec<f64> {
        self.design.row(n).iter().copied().collect()
    }

    pub fn select(&self, indices: &[usize]) -> SnapshotSet {
        SnapshotSet {
            grid: Arc::clone(&self.grid),
            data: self.data.select_columns(indices),
            design: self.design.select_rows(indices),
        }
    }

    /// Appends the columns of `other` (same grid and parameter dimension).
    pub fn concat(&self, other: &SnapshotSet) -> Result<SnapshotSet> {
        if *self.grid != *other.grid {
            return Err(Error::IncompatibleGrids("cannot concatenate snapshot sets on different grids".into()));
        }
        if self.n_params() != other.n_params() {
            return Err(Error::InvalidArgument("parameter dimensions differ".into()));
        }
        let (ng, n1, n2) = (self.grid.len(), self.len(), other.len());
        let mut data = DMatrix::zeros(ng, n1 + n2);
        data.columns_mut(0, n1).copy_from(&self.data);
        data.columns_mut(n1, n2).copy_from(&other.data);
        let mut design = DMatrix::zeros(n1 + n2, self.n_params());
        design.rows_mut(0, n1).copy_from(&self.design);
        design.rows_mut(n1, n2).copy_from(&other.design);
        Ok(SnapshotSet {
            grid: Arc::clone(&self.grid),
            data,
            design,
        })
    }

    /// Column-wise difference `self - other`; designs must match exactly.
    pub fn difference(&self, other: &SnapshotSet) -> Result<SnapshotSet> {
        if *self.grid != *other.grid {
            return Err(Error::IncompatibleGrids("paired snapshots live on different grids".into()));
        }
        if self.design != other.design {
            return Err(Error::Pairing("paired snapshot designs differ".into()));
        }
        Ok(SnapshotSet {
            grid: Arc::clone(&self.grid),
            data: &self.data - &other.data,
            design: self.design.clone(),
        })
    }
}

/// Subtracts the column-wise mean. Returns `(mean, centered)`.
pub fn center_snapshots(snaps: &SnapshotSet) -> Result<(Field, SnapshotSet)> {
    let n = snaps.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("centering needs at least 2 snapshots, got {n}")));
    }
    let mean: DVector<f64> = snaps.data.column_mean();
    let mut centered = snaps.data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let mean = Field::from_parts_unchecked(Arc::clone(&snaps.grid), mean.iter().copied().collect());
    Ok((
        mean,
        SnapshotSet {
            grid: Arc::clone(&snaps.grid),
            data: centered,
            design: snaps.design.clone(),
        },
    ))
}

/// Truncated KLE: mean field, retained spectrum and weighted-orthonormal modes.
#[derive(Debug, Clone, PartialEq)]
pub struct KleBasis {
    mean: Field,
    eigenvalues: Vec<f64>,
    modes: DMatrix<f64>,
    rho: f64,
    spectrum: Vec<f64>,
}

impl KleBasis {
    /// Basis with no retained modes; reconstructs the mean only.
    pub fn mean_only(mean: Field, rho: f64) -> Self {
        let ng = mean.grid().len();
        KleBasis {
            mean,
            eigenvalues: Vec::new(),
            modes: DMatrix::zeros(ng, 0),
            rho,
            spectrum: Vec::new(),
        }
    }

    pub fn mean(&self) -> &Field {
        &self.mean
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.mean.grid()
    }

    /// Retained eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Every eigenvalue above the zero cutoff, including truncated ones.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// `n_g × k_t`, one mode per column.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn total_variance(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    pub(crate) fn with_mean(mut self, mean: Field) -> Self {
        self.mean = mean;
        self
    }

    /// Modes pre-scaled by `sqrt(λ_k)`, the matrix that maps ζ to a centered field.
    pub fn scaled_modes(&self) -> DMatrix<f64> {
        let mut m = self.modes.clone();
        for (k, mut col) in m.column_iter_mut().enumerate() {
            col *= self.eigenvalues[k].sqrt();
        }
        m
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        self.mean.write_csv(&dir.join("mean.csv"))?;
        let ev = DMatrix::from_column_slice(self.spectrum.len(), 1, &self.spectrum);
        io::write_matrix_csv(&dir.join("eigenvalues.csv"), &["eigenvalue".to_string()], &ev)?;
        let header: Vec<String> = (1..=self.n_modes()).map(|k| format!("mode_{k}")).collect();
        io::write_matrix_csv(&dir.join("modes.csv"), &header, &self.modes)?;
        let mut meta = KeyValues::new();
        meta.set("n_g", self.grid().len());
        meta.set("k_t", self.n_modes());
        meta.set("rho", io::fmt_f64(self.rho));
        meta.set("total_variance", io::fmt_f64(self.total_variance()));
        meta.write(&dir.join("kle.meta"))
    }

    pub fn load(dir: &Path, grid: Arc<Grid>) -> Result<Self> {
        let meta = KeyValues::read(&dir.join("kle.meta"))?;
        let k_t: usize = meta.parse_required("k_t")?;
        let rho: f64 = meta.parse_required("rho")?;
        let mean = Field::read_csv(&dir.join("mean.csv"), Arc::clone(&grid))?;
        let (_, ev) = io::read_matrix_csv(&dir.join("eigenvalues.csv"))?;
        let spectrum: Vec<f64> = ev.iter().copied().collect();
        let (_, modes) = io::read_matrix_csv(&dir.join("modes.csv"))?;
        let modes = if k_t == 0 { DMatrix::zeros(grid.len(), 0) } else { modes };
        if modes.nrows() != grid.len() || modes.ncols() != k_t || spectrum.len() < k_t {
            return Err(Error::data(dir.join("modes.csv"), 1, "mode matrix does not match metadata"));
        }
        Ok(KleBasis {
            mean,
            eigenvalues: spectrum[..k_t].to_vec(),
            modes,
            rho,
            spectrum,
        })
    }
}

/// Fits the KLE of a centered snapshot set, retaining the smallest number of
/// modes whose cumulative eigenvalue fraction reaches `rho`.
///
/// The returned basis carries a zero mean; callers attach the centering mean
/// they subtracted (see [`fit_kle_with_mean`]).
pub fn fit_kle(centered: &SnapshotSet, rho: f64) -> Result<KleBasis> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("variance fraction must be in (0, 1], got {rho}")));
    }
    let n = centered.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("KLE needs at least 2 snapshots, got {n}")));
    }
    let grid = Arc::clone(centered.grid());
    let zero_mean = Field::zeros(Arc::clone(&grid));
    if centered.data.iter().all(|&v| v == 0.0) {
        return Ok(KleBasis::mean_only(zero_mean, rho));
    }

    let scale = 1.0 / ((n - 1) as f64).sqrt();
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let mut b = centered.data.clone();
    for (i, mut row) in b.row_iter_mut().enumerate() {
        row *= sqrt_w[i] * scale;
    }
    let truncate = |all: &[f64]| -> usize {
        let lambda_max = all.first().copied().unwrap_or(0.0);
        if !(lambda_max > 0.0) {
            return 0;
        }
        let eligible = all.iter().take_while(|&&l| l >= EIGENVALUE_CUTOFF * lambda_max).count();
        let threshold = rho * all.iter().sum::<f64>() * (1.0 - 1e-12);
        let mut cum = 0.0;
        for (k, l) in all.iter().take(eligible).enumerate() {
            cum += l;
            if cum >= threshold {
                return k + 1;
            }
        }
        eligible
    };
    let (all, u) = left_singular(&b, truncate);
    let k_t = u.ncols();
    if k_t == 0 {
        return Ok(KleBasis::mean_only(zero_mean, rho));
    }
    let eligible = all.iter().take_while(|&&l| l >= EIGENVALUE_CUTOFF * all[0]).count();

    let mut modes = DMatrix::zeros(grid.len(), k_t);
    for slot in 0..k_t {
        let mut col = modes.column_mut(slot);
        for i in 0..grid.len() {
            col[i] = u[(i, slot)] / sqrt_w[i];
        }
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) });
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }

    Ok(KleBasis {
        mean: zero_mean,
        eigenvalues: all[..k_t].to_vec(),
        modes,
        rho,
        spectrum: all[..eligible].to_vec(),
    })
}

/// Centers `snaps` and fits the KLE, attaching the snapshot mean.
///
/// Fluctuations at the rounding level of the data (below `64 ε max|y|`) are
/// treated as zero variance, giving a mean-only basis.
pub fn fit_kle_with_mean(snaps: &SnapshotSet, rho: f64) -> Result<(KleBasis, SnapshotSet)> {
    let (mean, centered) = center_snapshots(snaps)?;
    let scale = snaps.data.amax();
    if centered.data.amax() <= 64.0 * f64::EPSILON * scale {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidArgument(format!("variance fraction must be in (0, 1], got {rho}")));
        }
        return Ok((KleBasis::mean_only(mean, rho), centered));
    }
    let basis = fit_kle(&centered, rho)?.with_mean(mean);
    Ok((basis, centered))
}

/// Modal coefficients `ζ_k = λ_k^{-1/2} Σ_j w_j y0_j q_kj` of a centered field.
pub fn project_coefficients(basis: &KleBasis, centered_field: &Field) -> Result<Vec<f64>> {
    if **centered_field.grid() != **basis.grid() {
        return Err(Error::IncompatibleGrids("field and KLE basis use different grids".into()));
    }
    check_spectrum(basis)?;
    let w = basis.grid().weights();
    let y = centered_field.values();
    Ok((0..basis.n_modes())
        .map(|k| {
            let q = basis.modes.column(k);
            let dot: f64 = (0..w.len()).map(|j| w[j] * y[j] * q[j]).sum();
            dot / basis.eigenvalues[k].sqrt()
        })
        .collect())
}

/// Projects every column of a centered snapshot set; returns `N × k_t`.
pub fn project_snapshots(basis: &KleBasis, centered: &SnapshotSet) -> Result<DMatrix<f64>> {
    if **centered.grid() != **basis.grid() {
        return Err(Error::IncompatibleGrids("snapshots and KLE basis use different grids".into()));
    }
    check_spectrum(basis)?;
    let mut wq = basis.modes.clone();
    let w = basis.grid().weights();
    for (k, mut col) in wq.column_iter_mut().enumerate() {
        let inv = 1.0 / basis.eigenvalues[k].sqrt();
        for (j, v) in col.iter_mut().enumerate() {
            *v *= w[j] * inv;
        }
    }
    Ok(centered.data.transpose() * wq)
}

fn check_spectrum(basis: &KleBasis) -> Result<()> {
    match basis.eigenvalues.iter().position(|&l| !(l > 0.0)) {
        Some(mode) => Err(Error::DegenerateMode {
            mode,
            eigenvalue: basis.eigenvalues[mode],
        }),
        None => Ok(()),
    }
}

/// `mean·[include_mean] + Σ_k sqrt(λ_k) q_k ζ_k`.
pub fn reconstruct(basis: &KleBasis, zeta: &[f64], include_mean: bool) -> Result<Field> {
    if zeta.len() != basis.n_modes() {
        return Err(Error::InvalidArgument(format!(
            "expected {} coefficients, got {}",
            basis.n_modes(),
            zeta.len()
        )));
    }
    let mut out: Vec<f64> = if include_mean {
        basis.mean.values().to_vec()
    } else {
        vec![0.0; basis.grid().len()]
    };
    for (k, &z) in zeta.iter().enumerate() {
        let a = basis.eigenvalues[k].sqrt() * z;
        for (o, q) in out.iter_mut().zip(basis.modes.column(k).iter()) {
            *o += a * q;
        }
    }
    Ok(Field::from_parts_unchecked(Arc::clone(basis.grid()), out))
}
