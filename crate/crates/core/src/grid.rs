//! Spatial grids with quadrature weights, scalar fields on them, and the
//! fine-to-coarse restriction used to pair two-grid fidelities.
//!
//! 1D grids are node-based with composite-trapezoid weights. 2D grids are
//! cell-centered on the unit square with uniform weights, so that an integer
//! coarsening ratio partitions the fine cells into exact blocks.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{self, KeyValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    /// Equispaced nodes including both endpoints, trapezoid weights.
    Nodal1d,
    /// Cell-centered tensor grid, periodic adjacency.
    CellCentered2d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    kind: GridKind,
    nx: usize,
    ny: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    x: Vec<f64>,
    y: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Equispaced 1D nodes on `[lo, hi]` with trapezoid weights.
    pub fn uniform_1d(n_g: usize, lo: f64, hi: f64) -> Result<Arc<Grid>> {
        if n_g < 2 {
            return Err(Error::InvalidArgument(format!("1D grid needs at least 2 points, got {n_g}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("degenerate interval [{lo}, {hi}]")));
        }
        let h = (hi - lo) / (n_g - 1) as f64;
        let x: Vec<f64> = (0..n_g)
            .map(|i| if i == n_g - 1 { hi } else { lo + i as f64 * h })
            .collect();
        let mut weights = vec![h; n_g];
        weights[0] = 0.5 * h;
        weights[n_g - 1] = 0.5 * h;
        Ok(Arc::new(Grid {
            kind: GridKind::Nodal1d,
            nx: n_g,
            ny: 1,
            lo: [lo, 0.0],
            hi: [hi, 0.0],
            x,
            y: vec![0.0],
            weights,
        }))
    }

    /// Cell-centered `n_x × n_y` grid on the unit square.
    pub fn uniform_2d(n_x: usize, n_y: usize) -> Result<Arc<Grid>> {
        if n_x < 2 || n_y < 2 {
            return Err(Error::InvalidArgument(format!(
                "2D grid extents must be at least 2, got {n_x}x{n_y}"
            )));
        }
        let x = (0..n_x).map(|i| (i as f64 + 0.5) / n_x as f64).collect();
        let y = (0..n_y).map(|j| (j as f64 + 0.5) / n_y as f64).collect();
        let w = 1.0 / (n_x * n_y) as f64;
        Ok(Arc::new(Grid {
            kind: GridKind::CellCentered2d,
            nx: n_x,
            ny: n_y,
            lo: [0.0, 0.0],
            hi: [1.0, 1.0],
            x,
            y,
            weights: vec![w; n_x * n_y],
        }))
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            GridKind::Nodal1d => 1,
            GridKind::CellCentered2d => 2,
        }
    }

    /// Logical extents; `(n, 1)` for 1D grids.
    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_periodic(&self) -> bool {
        self.kind == GridKind::CellCentered2d
    }

    pub fn x_coords(&self) -> &[f64] {
        &self.x
    }

    pub fn y_coords(&self) -> &[f64] {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> (f64, f64) {
        match self.kind {
            GridKind::Nodal1d => ((self.hi[0] - self.lo[0]) / (self.nx - 1) as f64, 0.0),
            GridKind::CellCentered2d => (1.0 / self.nx as f64, 1.0 / self.ny as f64),
        }
    }

    /// Row-major linear index; `i` runs along x.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    /// Coordinates of linear point `k` (`y` is 0 for 1D grids).
    pub fn point(&self, k: usize) -> (f64, f64) {
        (self.x[k / self.ny], self.y[k % self.ny])
    }

    /// Total measure of the domain.
    pub fn measure(&self) -> f64 {
        match self.kind {
            GridKind::Nodal1d => self.hi[0] - self.lo[0],
            GridKind::CellCentered2d => (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1]),
        }
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Weighted L2 norm `sqrt(sum_j w_j v_j^2)`.
    pub fn norm(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        self.weights
            .iter()
            .zip(values)
            .map(|(w, v)| w * v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Weighted L2 norm of `a - b`.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.len());
        debug_assert_eq!(b.len(), self.len());
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("dim", self.dim());
        kv.set(
            "kind",
            match self.kind {
                GridKind::Nodal1d => "nodal_trapezoid",
                GridKind::CellCentered2d => "cell_centered",
            },
        );
        kv.set("nx", self.nx);
        kv.set("ny", self.ny);
        kv.set("x_lo", io::fmt_f64(self.lo[0]));
        kv.set("x_hi", io::fmt_f64(self.hi[0]));
        if self.dim() == 2 {
            kv.set("y_lo", io::fmt_f64(self.lo[1]));
            kv.set("y_hi", io::fmt_f64(self.hi[1]));
        }
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Arc<Grid>> {
        let dim: usize = kv.parse_required("dim")?;
        match dim {
            1 => Grid::uniform_1d(
                kv.parse_required("nx")?,
                kv.parse_required("x_lo")?,
                kv.parse_required("x_hi")?,
            ),
            2 => {
                let grid = Grid::uniform_2d(kv.parse_required("nx")?, kv.parse_required("ny")?)?;
                for (key, expect) in [("x_lo", 0.0), ("x_hi", 1.0), ("y_lo", 0.0), ("y_hi", 1.0)] {
                    if kv.parse_or(key, expect)? != expect {
                        return Err(Error::config(key, "2D grids are defined on the unit square"));
                    }
                }
                Ok(grid)
            }
            other => Err(Error::config("dim", format!("unsupported grid dimension {other}"))),
        }
    }

    pub fn write_meta(&self, path: &Path) -> Result<()> {
        self.to_key_values().write(path)
    }

    pub fn read_meta(path: &Path) -> Result<Arc<Grid>> {
        Grid::from_key_values(&KeyValues::read(path)?)
    }
}

/// One scalar per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values but grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite field value at point {k}")));
        }
        Ok(Field { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        Field {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.point(k);
                f(x, y)
            })
            .collect();
        Field::new(grid, values)
    }

    pub(crate) fn from_parts_unchecked(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field { grid, values }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn norm(&self) -> f64 {
        self.grid.norm(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Writes a one-column CSV with header `value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 22 + 6);
        out.push_str("value\n");
        for v in &self.values {
            out.push_str(&io::fmt_f64(*v));
            out.push('\n');
        }
        io::write_text(path, &out)
    }

    pub fn read_csv(path: &Path, grid: Arc<Grid>) -> Result<Self> {
        let (header, m) = io::read_matrix_csv(path)?;
        if header != ["value"] {
            return Err(Error::data(path, 1, "expected a single `value` column"));
        }
        if m.nrows() != grid.len() {
            return Err(Error::data(
                path,
                m.nrows() + 1,
                format!("expected {} rows, found {}", grid.len(), m.nrows()),
            ));
        }
        Field::new(grid, m.as_slice().to_vec())
    }
}

/// Block-averages a fine cell-centered field onto a nested coarse grid.
pub fn restrict_field(fine: &Field, coarse: &Arc<Grid>) -> Result<Field> {
    let fg = fine.grid();
    if fg.kind() != GridKind::CellCentered2d || coarse.kind() != GridKind::CellCentered2d {
        return Err(Error::IncompatibleGrids("restriction needs two cell-centered 2D grids".into()));
    }
    let (fx, fy) = fg.shape();
    let (cx, cy) = coarse.shape();
    if fx % cx != 0 || fy % cy != 0 {
        return Err(Error::IncompatibleGrids(format!(
            "fine extents {fx}x{fy} are not integer multiples of {cx}x{cy}"
        )));
    }
    let (rx, ry) = (fx / cx, fy / cy);
    let inv = 1.0 / (rx * ry) as f64;
    let src = fine.values();
    let mut out = vec![0.0; coarse.len()];
    for ci in 0..cx {
        for cj in 0..cy {
            let mut acc = 0.0;
            for di in 0..rx {
                let row = fg.index(ci * rx + di, cj * ry);
                acc += src[row..row + ry].iter().sum::<f64>();
            }
            out[coarse.index(ci, cj)] = acc * inv;
        }
    }
    Ok(Field::from_parts_unchecked(Arc::clone(coarse), out))
}
