//! Validated snapshot bundles from externally produced runs, and a
//! [`Problem`] that answers evaluations from them.
//!
//! Input layout: an LF and an HF design CSV, a `grid.meta`, and a snapshot
//! directory holding, per fidelity and QoI, either one matrix file
//! `{lf|hf}_{qoi}.csv` (grid points × runs) or one field file per run
//! `{lf|hf}_{qoi}_{row}.csv` with a single `value` column. Every HF design row
//! must also appear in the LF design. A written bundle is itself valid input.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::crossval::BifidelityData;
use crate::design::{read_design_csv, write_design_csv};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::io::{self, KeyValues};
use crate::kle::SnapshotSet;
use crate::models::Problem;
use crate::pce::ParamBounds;

const MATCH_TOL: f64 = 1e-12;

/// Runs of one or more QoIs on a shared grid and shared designs.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    grid: Arc<Grid>,
    bounds: ParamBounds,
    qois: Vec<String>,
    lf_design: DMatrix<f64>,
    hf_design: DMatrix<f64>,
    lf: Vec<DMatrix<f64>>,
    hf: Vec<DMatrix<f64>>,
}

/// Where [`Bundle::ingest`] reads from.
#[derive(Debug, Clone)]
pub struct IngestSources {
    pub grid_meta: PathBuf,
    pub lf_design: PathBuf,
    pub hf_design: PathBuf,
    pub snapshots: PathBuf,
    /// Needed when the designs hold physical `theta_*` columns.
    pub bounds: Option<ParamBounds>,
}

impl IngestSources {
    /// Sources that re-read a written bundle.
    pub fn from_bundle(dir: &Path) -> Self {
        IngestSources {
            grid_meta: dir.join("grid.meta"),
            lf_design: dir.join("design_lf.csv"),
            hf_design: dir.join("design_hf.csv"),
            snapshots: dir.to_path_buf(),
            bounds: None,
        }
    }
}

/// Reads either a normalized design (`#bounds` row, `xi_*` columns) or a
/// physical one (`theta_*` columns, needs `bounds`). Returns the normalized
/// rows, the bounds and the file line of the first row.
pub fn read_any_design(path: &Path, bounds: Option<&ParamBounds>) -> Result<(DMatrix<f64>, ParamBounds, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.starts_with("#bounds") {
        let (points, b) = read_design_csv(path)?;
        if let Some(given) = bounds {
            if *given != b {
                return Err(Error::data(path, 1, "design bounds differ from the requested bounds"));
            }
        }
        for (i, row) in points.row_iter().enumerate() {
            if row.iter().any(|v| v.abs() > 1.0) {
                return Err(Error::data(path, i + 3, "normalized coordinate outside [-1, 1]"));
            }
        }
        return Ok((points, b, 3));
    }
    let (header, physical) = io::read_matrix_csv(path)?;
    if !header.iter().enumerate().all(|(d, h)| *h == format!("theta_{}", d + 1)) {
        return Err(Error::data(path, 1, "expected columns theta_1..theta_n"));
    }
    let b = bounds
        .cloned()
        .ok_or_else(|| Error::config("bounds", format!("{} holds physical values; parameter bounds are required", path.display())))?;
    if b.dim() != header.len() {
        return Err(Error::data(path, 1, format!("{} columns for {} parameters", header.len(), b.dim())));
    }
    let mut points = DMatrix::zeros(physical.nrows(), b.dim());
    for i in 0..physical.nrows() {
        let theta: Vec<f64> = physical.row(i).iter().copied().collect();
        let xi = b.to_normalized(&theta).map_err(|e| Error::data(path, i + 2, e.to_string()))?;
        for d in 0..b.dim() {
            points[(i, d)] = xi[d];
        }
    }
    Ok((points, b, 2))
}

fn check_duplicates(points: &DMatrix<f64>, path: &Path, first_line: usize) -> Result<()> {
    for i in 0..points.nrows() {
        for j in 0..i {
            if (points.row(i) - points.row(j)).amax() <= MATCH_TOL {
                return Err(Error::data(
                    path,
                    first_line + i,
                    format!("duplicates the design row on line {}", first_line + j),
                ));
            }
        }
    }
    Ok(())
}

fn find_row(points: &DMatrix<f64>, xi: &[f64]) -> Option<usize> {
    (0..points.nrows()).find(|&i| points.row(i).iter().zip(xi).all(|(a, b)| (a - b).abs() <= MATCH_TOL))
}

/// QoI names present in a snapshot directory, sorted.
fn discover_qois(dir: &Path) -> Result<Vec<String>> {
    let mut names = BTreeSet::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".csv") else { continue };
        for prefix in ["lf_", "hf_"] {
            if let Some(rest) = stem.strip_prefix(prefix) {
                let qoi = match rest.rsplit_once('_') {
                    Some((q, idx)) if idx.chars().all(|c| c.is_ascii_digit()) && !idx.is_empty() => q,
                    _ => rest,
                };
                if !qoi.is_empty() {
                    names.insert(qoi.to_string());
                }
            }
        }
    }
    if names.is_empty() {
        return Err(Error::data(dir, 0, "no `lf_<qoi>` or `hf_<qoi>` snapshot files found"));
    }
    Ok(names.into_iter().collect())
}

fn read_snapshot_block(dir: &Path, fidelity: &str, qoi: &str, grid: &Arc<Grid>, n_runs: usize) -> Result<DMatrix<f64>> {
    let matrix = dir.join(format!("{fidelity}_{qoi}.csv"));
    if matrix.exists() {
        let (_, m) = io::read_matrix_csv(&matrix)?;
        if m.nrows() != grid.len() {
            return Err(Error::data(
                &matrix,
                m.nrows() + 1,
                format!("{} grid rows, expected {}", m.nrows(), grid.len()),
            ));
        }
        if m.ncols() != n_runs {
            return Err(Error::data(&matrix, 1, format!("{} run columns, design has {n_runs} rows", m.ncols())));
        }
        return Ok(m);
    }
    let mut m = DMatrix::zeros(grid.len(), n_runs);
    for r in 0..n_runs {
        let path = dir.join(format!("{fidelity}_{qoi}_{r:03}.csv"));
        if !path.exists() {
            return Err(Error::data(&path, 0, format!("missing snapshot for design row {r}")));
        }
        let f = Field::read_csv(&path, Arc::clone(grid))?;
        m.column_mut(r).copy_from_slice(f.values());
    }
    let extra = dir.join(format!("{fidelity}_{qoi}_{n_runs:03}.csv"));
    if extra.exists() {
        return Err(Error::data(&extra, 0, format!("snapshot beyond the {n_runs} design rows")));
    }
    Ok(m)
}

impl Bundle {
    pub fn new(
        grid: Arc<Grid>,
        bounds: ParamBounds,
        qois: Vec<String>,
        lf_design: DMatrix<f64>,
        hf_design: DMatrix<f64>,
        lf: Vec<DMatrix<f64>>,
        hf: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n_q = qois.len();
        if n_q == 0 || lf.len() != n_q || hf.len() != n_q {
            return Err(Error::InvalidArgument("one LF and one HF block per QoI are required".into()));
        }
        if lf_design.ncols() != bounds.dim() || hf_design.ncols() != bounds.dim() {
            return Err(Error::InvalidArgument("design width does not match the bounds".into()));
        }
        for q in 0..n_q {
            if lf[q].shape() != (grid.len(), lf_design.nrows()) || hf[q].shape() != (grid.len(), hf_design.nrows()) {
                return Err(Error::InvalidArgument(format!("QoI `{}` block shape does not match grid and design", qois[q])));
            }
            if lf[q].iter().chain(hf[q].iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("QoI `{}` holds non-finite values", qois[q])));
            }
        }
        for i in 0..hf_design.nrows() {
            let xi: Vec<f64> = hf_design.row(i).iter().copied().collect();
            if find_row(&lf_design, &xi).is_none() {
                return Err(Error::Pairing(format!("HF run {i} has no LF run at the same design point")));
            }
        }
        Ok(Bundle {
            grid,
            bounds,
            qois,
            lf_design,
            hf_design,
            lf,
            hf,
        })
    }

    /// Reads and validates external runs.
    pub fn ingest(src: &IngestSources) -> Result<Self> {
        let grid = Grid::read_meta(&src.grid_meta)?;
        let (lf_design, bounds, lf_line) = read_any_design(&src.lf_design, src.bounds.as_ref())?;
        let (hf_design, hf_bounds, hf_line) = read_any_design(&src.hf_design, Some(&bounds))?;
        debug_assert_eq!(bounds, hf_bounds);
        check_duplicates(&lf_design, &src.lf_design, lf_line)?;
        check_duplicates(&hf_design, &src.hf_design, hf_line)?;
        for i in 0..hf_design.nrows() {
            let xi: Vec<f64> = hf_design.row(i).iter().copied().collect();
            if find_row(&lf_design, &xi).is_none() {
                return Err(Error::data(&src.hf_design, hf_line + i, "HF design row has no matching LF design row"));
            }
        }
        let qois = discover_qois(&src.snapshots)?;
        let mut lf = Vec::new();
        let mut hf = Vec::new();
        for q in &qois {
            lf.push(read_snapshot_block(&src.snapshots, "lf", q, &grid, lf_design.nrows())?);
            hf.push(read_snapshot_block(&src.snapshots, "hf", q, &grid, hf_design.nrows())?);
        }
        Bundle::new(grid, bounds, qois, lf_design, hf_design, lf, hf)
    }

    /// Writes the bundle; the output directory's prior bundle files are replaced.
    pub fn write(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        self.grid.write_meta(&dir.join("grid.meta"))?;
        write_design_csv(&dir.join("design_lf.csv"), &self.lf_design, &self.bounds)?;
        write_design_csv(&dir.join("design_hf.csv"), &self.hf_design, &self.bounds)?;
        let header = |n: usize| -> Vec<String> { (0..n).map(|r| format!("run_{r}")).collect() };
        let mut meta = KeyValues::new();
        meta.set("qois", self.qois.join(" "));
        meta.set("n_lf", self.lf_design.nrows());
        meta.set("n_hf", self.hf_design.nrows());
        meta.set("bounds", self.bounds.tokens().join(" "));
        for (q, name) in self.qois.iter().enumerate() {
            for (fid, m) in [("lf", &self.lf[q]), ("hf", &self.hf[q])] {
                let file = format!("{fid}_{name}.csv");
                let text = io::matrix_csv_string(&header(m.ncols()), m);
                meta.set(&format!("digest.{file}"), io::digest(text.as_bytes()));
                io::write_text(&dir.join(&file), &text)?;
            }
        }
        meta.write(&dir.join("bundle.meta"))
    }

    /// Reads a bundle written by [`Bundle::write`], verifying file digests.
    pub fn read(dir: &Path) -> Result<Self> {
        let meta = KeyValues::read(&dir.join("bundle.meta"))?;
        let names: Vec<String> = meta.require("qois")?.split_whitespace().map(String::from).collect();
        for name in &names {
            for fid in ["lf", "hf"] {
                let file = format!("{fid}_{name}.csv");
                let expect = meta.require(&format!("digest.{file}"))?;
                if io::file_digest(&dir.join(&file))? != expect {
                    return Err(Error::data(dir.join(&file), 0, "digest does not match bundle.meta"));
                }
            }
        }
        let bundle = Bundle::ingest(&IngestSources::from_bundle(dir))?;
        if bundle.qois != names {
            return Err(Error::data(dir.join("bundle.meta"), 1, "QoI list does not match the snapshot files"));
        }
        Ok(bundle)
    }

    /// Adds runs from `other`, which must cover the same QoIs on the same
    /// grid and bounds. Rows already present are rejected.
    pub fn append(&mut self, other: &Bundle) -> Result<()> {
        if *self.grid != *other.grid {
            return Err(Error::IncompatibleGrids("appended runs use a different grid".into()));
        }
        if self.bounds != other.bounds {
            return Err(Error::InvalidArgument("appended runs use different bounds".into()));
        }
        if self.qois != other.qois {
            return Err(Error::InvalidArgument(format!(
                "appended QoIs {:?} differ from {:?}",
                other.qois, self.qois
            )));
        }
        let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str| -> Result<DMatrix<f64>> {
            for i in 0..b.nrows() {
                let xi: Vec<f64> = b.row(i).iter().copied().collect();
                if let Some(j) = find_row(a, &xi) {
                    return Err(Error::InvalidArgument(format!("appended {what} row {i} duplicates existing row {j}")));
                }
            }
            let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
            m.rows_mut(0, a.nrows()).copy_from(a);
            m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
            Ok(m)
        };
        let lf_design = stack(&self.lf_design, &other.lf_design, "LF")?;
        let hf_design = stack(&self.hf_design, &other.hf_design, "HF")?;
        let join = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
            m.columns_mut(0, a.ncols()).copy_from(a);
            m.columns_mut(a.ncols(), b.ncols()).copy_from(b);
            m
        };
        let lf = self.lf.iter().zip(&other.lf).map(|(a, b)| join(a, b)).collect();
        let hf = self.hf.iter().zip(&other.hf).map(|(a, b)| join(a, b)).collect();
        *self = Bundle::new(Arc::clone(&self.grid), self.bounds.clone(), self.qois.clone(), lf_design, hf_design, lf, hf)?;
        Ok(())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn qois(&self) -> &[String] {
        &self.qois
    }

    pub fn lf_design(&self) -> &DMatrix<f64> {
        &self.lf_design
    }

    pub fn hf_design(&self) -> &DMatrix<f64> {
        &self.hf_design
    }

    pub fn n_lf(&self) -> usize {
        self.lf_design.nrows()
    }

    pub fn n_hf(&self) -> usize {
        self.hf_design.nrows()
    }

    /// One training set per QoI, pairing each HF run with its LF run.
    pub fn to_data(&self) -> Result<Vec<BifidelityData>> {
        let pairs: Vec<usize> = (0..self.n_hf())
            .map(|i| {
                let xi: Vec<f64> = self.hf_design.row(i).iter().copied().collect();
                find_row(&self.lf_design, &xi).expect("pairing validated on construction")
            })
            .collect();
        (0..self.qois.len())
            .map(|q| {
                let lf = SnapshotSet::new(Arc::clone(&self.grid), self.lf[q].clone(), self.lf_design.clone())?;
                let hf = SnapshotSet::new(Arc::clone(&self.grid), self.hf[q].clone(), self.hf_design.clone())?;
                BifidelityData::new(lf, hf, pairs.clone(), vec![false; pairs.len()])
            })
            .collect()
    }

    fn fields_at(&self, design: &DMatrix<f64>, blocks: &[DMatrix<f64>], theta: &[f64], what: &str) -> Result<Vec<Field>> {
        let xi = self.bounds.to_normalized(theta)?;
        let row = find_row(design, &xi).ok_or_else(|| {
            Error::ModelEvaluation(format!(
                "no external {what} run at theta = {:?}; ingest it with `--append` and resume",
                theta
            ))
        })?;
        blocks
            .iter()
            .map(|m| Field::new(Arc::clone(&self.grid), m.column(row).iter().copied().collect()))
            .collect()
    }
}

/// A [`Problem`] whose models are lookups into ingested runs.
#[derive(Debug, Clone)]
pub struct ExternalProblem {
    name: String,
    bundle: Bundle,
}

impl ExternalProblem {
    pub fn new(bundle: Bundle) -> Self {
        ExternalProblem {
            name: "external".into(),
            bundle,
        }
    }

    pub fn bundle(&self) -> &Bundle {
        &self.bundle
    }
}

impl Problem for ExternalProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn bounds(&self) -> &ParamBounds {
        &self.bundle.bounds
    }

    fn grid(&self) -> &Arc<Grid> {
        &self.bundle.grid
    }

    fn n_qoi(&self) -> usize {
        self.bundle.qois.len()
    }

    fn eval_hf(&self, theta: &[f64]) -> Result<Field> {
        Ok(self.eval_hf_all(theta)?.swap_remove(0))
    }

    fn eval_lf(&self, theta: &[f64]) -> Result<Field> {
        Ok(self.eval_lf_all(theta)?.swap_remove(0))
    }

    fn eval_hf_all(&self, theta: &[f64]) -> Result<Vec<Field>> {
        self.bundle.fields_at(&self.bundle.hf_design, &self.bundle.hf, theta, "HF")
    }

    fn eval_lf_all(&self, theta: &[f64]) -> Result<Vec<Field>> {
        self.bundle.fields_at(&self.bundle.lf_design, &self.bundle.lf, theta, "LF")
    }
}

/// Evaluates `problem` at every row of a normalized design and writes one
/// field file per run and QoI in the ingestion naming scheme, plus
/// `design_lf.csv`, `design_hf.csv`, `grid.meta` and `manifest.meta`.
pub fn export_model_runs(problem: &dyn Problem, design: &DMatrix<f64>, hf: bool, lf: bool, dir: &Path) -> Result<()> {
    use rayon::prelude::*;
    io::create_dir(dir)?;
    let bounds = problem.bounds();
    let runs: Vec<(Vec<Field>, Vec<Field>)> = (0..design.nrows())
        .into_par_iter()
        .map(|r| {
            let xi: Vec<f64> = design.row(r).iter().copied().collect();
            let theta = bounds.to_physical(&xi);
            let h = if hf { problem.eval_hf_all(&theta)? } else { Vec::new() };
            let l = if lf { problem.eval_lf_all(&theta)? } else { Vec::new() };
            Ok((h, l))
        })
        .collect::<Result<_>>()?;
    for (r, (h, l)) in runs.iter().enumerate() {
        for (q, f) in h.iter().enumerate() {
            f.write_csv(&dir.join(format!("hf_q{q}_{r:03}.csv")))?;
        }
        for (q, f) in l.iter().enumerate() {
            f.write_csv(&dir.join(format!("lf_q{q}_{r:03}.csv")))?;
        }
    }
    problem.grid().write_meta(&dir.join("grid.meta"))?;
    let empty = DMatrix::zeros(0, design.ncols());
    write_design_csv(&dir.join("design_lf.csv"), if lf { design } else { &empty }, bounds)?;
    write_design_csv(&dir.join("design_hf.csv"), if hf { design } else { &empty }, bounds)?;
    let mut manifest = KeyValues::new();
    manifest.set("problem", problem.name());
    manifest.set("runs", design.nrows());
    manifest.set("qois", problem.n_qoi());
    manifest.set("hf", hf);
    manifest.set("lf", lf);
    manifest.set("bounds", bounds.tokens().join(" "));
    manifest.write(&dir.join("manifest.meta"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::latin_hypercube;
    use crate::models::{PulseCase, PulseProblem};

    fn exported(n_lf: usize, n_hf: usize) -> (tempfile::TempDir, PulseProblem) {
        let p = PulseProblem::with_grid(PulseCase::C2, Grid::uniform_1d(32, 0.0, 0.1).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let design = latin_hypercube(n_lf, 2, 3).points;
        export_model_runs(&p, &design, false, true, dir.path()).unwrap();
        let hf_dir = dir.path().join("hf_runs");
        export_model_runs(&p, &design.rows(0, n_hf).into_owned(), true, false, &hf_dir).unwrap();
        for r in 0..n_hf {
            let name = format!("hf_q0_{r:03}.csv");
            fs::rename(hf_dir.join(&name), dir.path().join(&name)).unwrap();
        }
        fs::copy(hf_dir.join("design_hf.csv"), dir.path().join("design_hf.csv")).unwrap();
        (dir, p)
    }

    #[test]
    fn full_sized_pilot_is_accepted() {
        let (dir, p) = exported(200, 15);
        let b = Bundle::ingest(&IngestSources::from_bundle(dir.path())).unwrap();
        assert_eq!((b.n_lf(), b.n_hf()), (200, 15));
        assert_eq!(b.qois(), ["q0"]);
        let data = b.to_data().unwrap();
        assert_eq!(data[0].pair_lf(), (0..15).collect::<Vec<_>>().as_slice());
        let ext = ExternalProblem::new(b);
        let xi: Vec<f64> = ext.bundle().hf_design().row(4).iter().copied().collect();
        let theta = p.bounds().to_physical(&xi);
        assert_eq!(ext.eval_hf(&theta).unwrap(), p.eval_hf(&theta).unwrap());
        assert_eq!(ext.eval_lf(&theta).unwrap(), p.eval_lf(&theta).unwrap());
        let centre = p.bounds().to_physical(&[0.0, 0.0]);
        assert!(matches!(ext.eval_hf(&centre), Err(Error::ModelEvaluation(_))));
    }

    #[test]
    fn reingesting_is_byte_identical() {
        let (dir, _) = exported(12, 4);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        Bundle::ingest(&IngestSources::from_bundle(dir.path())).unwrap().write(a.path()).unwrap();
        Bundle::read(a.path()).unwrap().write(b.path()).unwrap();
        for f in ["grid.meta", "design_lf.csv", "design_hf.csv", "lf_q0.csv", "hf_q0.csv", "bundle.meta"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn non_finite_entry_reports_file_and_line() {
        let (dir, _) = exported(6, 2);
        let bad = dir.path().join("lf_q0_003.csv");
        let mut text = fs::read_to_string(&bad).unwrap();
        text = text.replacen('\n', "\nNaN\n", 1);
        let lines: Vec<&str> = text.lines().collect();
        fs::write(&bad, lines[..33].join("\n") + "\n").unwrap();
        match Bundle::ingest(&IngestSources::from_bundle(dir.path())) {
            Err(Error::Data { path, line, .. }) => {
                assert_eq!(path, bad);
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn count_and_duplicate_errors() {
        let (dir, _) = exported(6, 2);
        fs::remove_file(dir.path().join("lf_q0_005.csv")).unwrap();
        assert!(matches!(Bundle::ingest(&IngestSources::from_bundle(dir.path())), Err(Error::Data { .. })));

        let (dir, _) = exported(6, 2);
        let path = dir.path().join("design_lf.csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[6] = lines[3].clone();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        match Bundle::ingest(&IngestSources::from_bundle(dir.path())) {
            Err(Error::Data { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("line 4"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn physical_designs_need_bounds() {
        let (dir, p) = exported(5, 2);
        let (xi, bounds) = read_design_csv(&dir.path().join("design_lf.csv")).unwrap();
        let mut text = String::from("theta_1,theta_2\n");
        for r in 0..xi.nrows() {
            let t = bounds.to_physical(&[xi[(r, 0)], xi[(r, 1)]]);
            text.push_str(&format!("{},{}\n", t[0], t[1]));
        }
        let phys = dir.path().join("physical.csv");
        fs::write(&phys, text).unwrap();
        let mut src = IngestSources::from_bundle(dir.path());
        src.lf_design = phys;
        assert!(matches!(Bundle::ingest(&src), Err(Error::Config { .. })));
        src.bounds = Some(p.bounds().clone());
        let b = Bundle::ingest(&src).unwrap();
        assert!((b.lf_design() - xi).amax() < 1e-12);
    }

    #[test]
    fn append_extends_and_rejects_repeats() {
        let (dir, _) = exported(8, 3);
        let mut b = Bundle::ingest(&IngestSources::from_bundle(dir.path())).unwrap();
        let (dir2, _) = {
            let p = PulseProblem::with_grid(PulseCase::C2, Grid::uniform_1d(32, 0.0, 0.1).unwrap());
            let d = tempfile::tempdir().unwrap();
            let design = latin_hypercube(2, 2, 77).points;
            export_model_runs(&p, &design, true, true, d.path()).unwrap();
            (d, p)
        };
        let extra = Bundle::ingest(&IngestSources::from_bundle(dir2.path())).unwrap();
        b.append(&extra).unwrap();
        assert_eq!((b.n_lf(), b.n_hf()), (10, 5));
        assert!(b.append(&extra).is_err());
        let data = b.to_data().unwrap();
        assert_eq!(data[0].pair_lf(), &[0, 1, 2, 8, 9]);
    }
}
