//! Cross-validated and oracle-based relative error estimates.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::design::random_design;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{self, fmt_f64, KeyValues};
use crate::kle::SnapshotSet;
use crate::models::Problem;
use crate::pce::{fold_assignment, ParamBounds};
use crate::surrogate::{BifidelitySurrogate, ComponentConfig, FieldSurrogate, KlePceComponent};

/// Weighted-L2 relative error `‖truth - pred‖ / ‖truth‖`.
///
/// The denominator is floored at `1e-12 max|truth|`; an identically zero truth
/// field falls back to the absolute error.
pub fn relative_error(grid: &Grid, truth: &[f64], pred: &[f64]) -> f64 {
    let num = grid.distance(truth, pred);
    let scale = truth.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return num;
    }
    num / grid.norm(truth).max(1e-12 * scale)
}

/// All LF runs plus the paired HF runs of a bifidelity training set.
#[derive(Debug, Clone, PartialEq)]
pub struct BifidelityData {
    lf: SnapshotSet,
    hf: SnapshotSet,
    pair_lf: Vec<usize>,
    exclusive: Vec<bool>,
}

impl BifidelityData {
    /// `pair_lf[i]` is the LF run sharing the design point of HF run `i`;
    /// `exclusive[i]` marks LF runs that exist only because of that pair.
    pub fn new(lf: SnapshotSet, hf: SnapshotSet, pair_lf: Vec<usize>, exclusive: Vec<bool>) -> Result<Self> {
        if pair_lf.len() != hf.len() || exclusive.len() != hf.len() {
            return Err(Error::Pairing(format!(
                "{} HF runs but {} pair indices and {} exclusivity flags",
                hf.len(),
                pair_lf.len(),
                exclusive.len()
            )));
        }
        if **lf.grid() != **hf.grid() {
            return Err(Error::IncompatibleGrids("LF and HF snapshots live on different grids".into()));
        }
        let mut seen = vec![false; lf.len()];
        for (i, &j) in pair_lf.iter().enumerate() {
            if j >= lf.len() || seen[j] {
                return Err(Error::Pairing(format!("HF run {i} points at invalid or reused LF run {j}")));
            }
            seen[j] = true;
            if lf.design().row(j) != hf.design().row(i) {
                return Err(Error::Pairing(format!("HF run {i} and LF run {j} have different design points")));
            }
        }
        Ok(BifidelityData {
            lf,
            hf,
            pair_lf,
            exclusive,
        })
    }

    /// Pairs are the first `n_hf` LF runs, none exclusive.
    pub fn from_leading_pairs(lf: SnapshotSet, hf: SnapshotSet) -> Result<Self> {
        let n = hf.len();
        BifidelityData::new(lf, hf, (0..n).collect(), vec![false; n])
    }

    pub fn lf(&self) -> &SnapshotSet {
        &self.lf
    }

    pub fn hf(&self) -> &SnapshotSet {
        &self.hf
    }

    pub fn pair_lf(&self) -> &[usize] {
        &self.pair_lf
    }

    pub fn exclusive(&self) -> &[bool] {
        &self.exclusive
    }

    pub fn n_pairs(&self) -> usize {
        self.hf.len()
    }

    /// LF runs at the HF design points, in HF order.
    pub fn paired_lf(&self) -> SnapshotSet {
        self.lf.select(&self.pair_lf)
    }

    /// Appends a new pair whose LF run is also new (and hence exclusive).
    pub fn push_pair(&mut self, lf: &SnapshotSet, hf: &SnapshotSet) -> Result<()> {
        if lf.design() != hf.design() {
            return Err(Error::Pairing("new LF and HF runs have different design points".into()));
        }
        let start = self.lf.len();
        self.lf = self.lf.concat(lf)?;
        self.hf = self.hf.concat(hf)?;
        self.pair_lf.extend(start..start + lf.len());
        self.exclusive.extend(std::iter::repeat(true).take(lf.len()));
        Ok(())
    }

    pub fn build(&self, bounds: &ParamBounds, config: &ComponentConfig) -> Result<BifidelitySurrogate> {
        BifidelitySurrogate::build(&self.lf, &self.hf, &self.paired_lf(), bounds, config)
    }
}

/// Settings for cross-validated error estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub component: ComponentConfig,
    /// Keep held-out pairs' exclusive LF runs in the LF component.
    pub retain_exclusive_lf: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            component: ComponentConfig::default(),
            retain_exclusive_lf: false,
        }
    }
}

/// Per-sample held-out errors with their fold map.
#[derive(Debug, Clone, PartialEq)]
pub struct CvErrors {
    /// `None` where the fold could not be rebuilt.
    pub errors: Vec<Option<f64>>,
    pub folds: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    /// Normalized design of the HF samples, one row each.
    pub design: DMatrix<f64>,
}

impl CvErrors {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn n_missing(&self) -> usize {
        self.errors.iter().filter(|e| e.is_none()).count()
    }

    /// Mean over available samples.
    pub fn mean(&self) -> Option<f64> {
        let v: Vec<f64> = self.errors.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Design rows and errors of the samples with an available error.
    pub fn available(&self) -> (DMatrix<f64>, Vec<f64>) {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.errors[i].is_some()).collect();
        let targets = idx.iter().map(|&i| self.errors[i].unwrap_or_default()).collect();
        (self.design.select_rows(&idx), targets)
    }

    /// Columns: `index`, `theta_1..`, `fold`, `eps` (empty when missing).
    pub fn to_csv(&self, bounds: &ParamBounds) -> String {
        let mut out = String::from("index");
        for d in 1..=self.design.ncols() {
            out.push_str(&format!(",theta_{d}"));
        }
        out.push_str(",fold,eps\n");
        for i in 0..self.len() {
            let xi: Vec<f64> = self.design.row(i).iter().copied().collect();
            out.push_str(&i.to_string());
            for t in bounds.to_physical(&xi) {
                out.push(',');
                out.push_str(&fmt_f64(t));
            }
            out.push_str(&format!(",{},", self.folds[i]));
            if let Some(e) = self.errors[i] {
                out.push_str(&fmt_f64(e));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path, bounds: &ParamBounds) -> Result<()> {
        io::write_text(path, &self.to_csv(bounds))
    }

    /// Reads the `eps` column of a file written by [`CvErrors::write_csv`].
    pub fn read_eps(path: &Path) -> Result<Vec<Option<f64>>> {
        let mut reader = csv::ReaderBuilder::new()
            .from_path(path)
            .map_err(|e| Error::data(path, 1, e.to_string()))?;
        let col = reader
            .headers()?
            .iter()
            .position(|h| h == "eps")
            .ok_or_else(|| Error::data(path, 1, "missing `eps` column"))?;
        let mut out = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let raw = rec.get(col).unwrap_or("");
            out.push(if raw.is_empty() {
                None
            } else {
                Some(io::parse_f64(raw, path, line)?)
            });
        }
        Ok(out)
    }
}

/// k-fold relative errors of the bifidelity surrogate at each paired HF sample.
pub fn kfold_errors(data: &BifidelityData, bounds: &ParamBounds, k: usize, seed: u64, config: &CvConfig) -> Result<CvErrors> {
    let n = data.n_pairs();
    if k < 2 || n < k {
        return Err(Error::InvalidArgument(format!("need 2 <= k <= N_pairs, got k={k}, N_pairs={n}")));
    }
    let folds = fold_assignment(n, k, seed);
    let errors = fold_errors(data, bounds, &folds, k, config)?;
    Ok(CvErrors {
        errors,
        folds,
        k,
        seed,
        design: data.hf.design().clone(),
    })
}

/// Leave-one-out relative errors.
pub fn loo_errors(data: &BifidelityData, bounds: &ParamBounds, config: &CvConfig) -> Result<CvErrors> {
    let n = data.n_pairs();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("leave-one-out needs at least 2 pairs, got {n}")));
    }
    let folds: Vec<usize> = (0..n).collect();
    let errors = fold_errors(data, bounds, &folds, n, config)?;
    Ok(CvErrors {
        errors,
        folds,
        k: n,
        seed: 0,
        design: data.hf.design().clone(),
    })
}

fn fold_errors(data: &BifidelityData, bounds: &ParamBounds, folds: &[usize], k: usize, config: &CvConfig) -> Result<Vec<Option<f64>>> {
    let n = data.n_pairs();
    let full_lf = KlePceComponent::build(&data.lf, bounds, &config.component)?;
    let paired_lf = data.paired_lf();
    let grid = Arc::clone(data.hf.grid());
    let per_fold: Vec<Vec<(usize, Option<f64>)>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            match fold_prediction(data, bounds, config, &full_lf, &paired_lf, &train, &test) {
                Ok(pred) => test
                    .iter()
                    .enumerate()
                    .map(|(c, &i)| {
                        let truth = data.hf.data().column(i);
                        let p = pred.column(c);
                        (i, Some(relative_error(&grid, truth.as_slice(), p.as_slice())))
                    })
                    .collect(),
                Err(e) => {
                    log::warn!("fold {f} skipped: {e}");
                    test.iter().map(|&i| (i, None)).collect()
                }
            }
        })
        .collect();
    let mut errors = vec![None; n];
    for (i, e) in per_fold.into_iter().flatten() {
        errors[i] = e;
    }
    Ok(errors)
}

fn fold_prediction(
    data: &BifidelityData,
    bounds: &ParamBounds,
    config: &CvConfig,
    full_lf: &KlePceComponent,
    paired_lf: &SnapshotSet,
    train: &[usize],
    test: &[usize],
) -> Result<DMatrix<f64>> {
    let drop: Vec<usize> = if config.retain_exclusive_lf {
        Vec::new()
    } else {
        test.iter().filter(|&&i| data.exclusive[i]).map(|&i| data.pair_lf[i]).collect()
    };
    let lf = if drop.is_empty() {
        full_lf.clone()
    } else {
        let keep: Vec<usize> = (0..data.lf.len()).filter(|j| !drop.contains(j)).collect();
        KlePceComponent::build(&data.lf.select(&keep), bounds, &config.component)?
    };
    let diff = data.hf.select(train).difference(&paired_lf.select(train))?;
    let delta = KlePceComponent::build(&diff, bounds, &config.component)?;
    let surr = BifidelitySurrogate::from_components(lf, delta)?;
    surr.predict_many_xi(&data.hf.design().select_rows(test))
}

/// How held-out errors are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMode {
    KFold(usize),
    Loo,
}

impl CvMode {
    /// `kfold:<k>` or `loo`.
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim() {
            "loo" => Some(CvMode::Loo),
            other => other.strip_prefix("kfold:")?.parse().ok().map(CvMode::KFold),
        }
    }
}

impl std::fmt::Display for CvMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CvMode::KFold(k) => write!(f, "kfold:{k}"),
            CvMode::Loo => write!(f, "loo"),
        }
    }
}

/// Held-out errors averaged over QoIs that share one design. A sample is
/// missing if any QoI is missing it.
pub fn cv_errors(qois: &[BifidelityData], bounds: &ParamBounds, mode: CvMode, seed: u64, config: &CvConfig) -> Result<CvErrors> {
    let first = qois
        .first()
        .ok_or_else(|| Error::InvalidArgument("no QoIs given".into()))?;
    for (q, d) in qois.iter().enumerate().skip(1) {
        if d.hf.design() != first.hf.design() || d.lf.design() != first.lf.design() {
            return Err(Error::Pairing(format!("QoI {q} uses a different design than QoI 0")));
        }
    }
    let per: Vec<CvErrors> = qois
        .iter()
        .map(|d| match mode {
            CvMode::KFold(k) => kfold_errors(d, bounds, k, seed, config),
            CvMode::Loo => loo_errors(d, bounds, config),
        })
        .collect::<Result<_>>()?;
    if per.len() == 1 {
        return Ok(per.into_iter().next().expect("one QoI"));
    }
    let n = first.n_pairs();
    let errors = (0..n)
        .map(|i| {
            let mut sum = 0.0;
            for e in &per {
                sum += e.errors[i]?;
            }
            Some(sum / per.len() as f64)
        })
        .collect();
    let head = &per[0];
    Ok(CvErrors {
        errors,
        folds: head.folds.clone(),
        k: head.k,
        seed: head.seed,
        design: head.design.clone(),
    })
}

/// LOO errors averaged over several QoIs that share one design.
pub fn multi_qoi_loo_errors(qois: &[BifidelityData], bounds: &ParamBounds, config: &CvConfig) -> Result<CvErrors> {
    cv_errors(qois, bounds, CvMode::Loo, 0, config)
}

/// Where the integrated error is sampled in the normalized box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quadrature {
    /// Tensor grid of cell midpoints with `per_dim` cells per dimension.
    Grid { per_dim: usize },
    /// Uniform random draws.
    MonteCarlo { samples: usize, seed: u64 },
}

impl Quadrature {
    pub fn nodes(self, n_s: usize) -> DMatrix<f64> {
        match self {
            Quadrature::Grid { per_dim } => {
                let total = per_dim.pow(n_s as u32);
                DMatrix::from_fn(total, n_s, |r, c| {
                    let i = (r / per_dim.pow((n_s - 1 - c) as u32)) % per_dim;
                    -1.0 + (2 * i + 1) as f64 / per_dim as f64
                })
            }
            Quadrature::MonteCarlo { samples, seed } => random_design(samples, n_s, seed).points,
        }
    }
}

/// Cached HF truth at quadrature nodes, reusable across surrogates.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    grid: Arc<Grid>,
    nodes: DMatrix<f64>,
    truth: DMatrix<f64>,
    skipped: usize,
}

/// Integrated relative error with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratedError {
    pub mean: f64,
    pub std_error: f64,
    pub nodes: usize,
    pub skipped: usize,
}

impl IntegratedError {
    /// More than 1% of the oracle evaluations failed.
    pub fn flagged(&self) -> bool {
        self.skipped * 100 > self.nodes + self.skipped
    }
}

impl ReferenceSet {
    /// Evaluates the HF model at every node; failing nodes are dropped and counted.
    pub fn build(problem: &dyn Problem, rule: Quadrature) -> Result<Self> {
        let bounds = problem.bounds();
        let all = rule.nodes(bounds.dim());
        let results: Vec<Option<Vec<f64>>> = (0..all.nrows())
            .into_par_iter()
            .map(|r| {
                let xi: Vec<f64> = all.row(r).iter().copied().collect();
                match problem.eval_hf(&bounds.to_physical(&xi)) {
                    Ok(f) => Some(f.into_values()),
                    Err(e) => {
                        log::warn!("oracle failed at node {r}: {e}");
                        None
                    }
                }
            })
            .collect();
        let kept: Vec<usize> = (0..all.nrows()).filter(|&r| results[r].is_some()).collect();
        let n_g = problem.grid().len();
        let mut truth = DMatrix::zeros(n_g, kept.len());
        for (c, &r) in kept.iter().enumerate() {
            if let Some(v) = &results[r] {
                truth.column_mut(c).copy_from_slice(v);
            }
        }
        Ok(ReferenceSet {
            grid: Arc::clone(problem.grid()),
            nodes: all.select_rows(&kept),
            truth,
            skipped: all.nrows() - kept.len(),
        })
    }

    /// Writes `nodes.csv`, `truth.csv` and `reference.meta` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        let n_s = self.nodes.ncols();
        let node_header: Vec<String> = (1..=n_s).map(|d| format!("xi_{d}")).collect();
        io::write_matrix_csv(&dir.join("nodes.csv"), &node_header, &self.nodes)?;
        let truth_header: Vec<String> = (0..self.truth.ncols()).map(|c| format!("node_{c}")).collect();
        io::write_matrix_csv(&dir.join("truth.csv"), &truth_header, &self.truth)?;
        let mut meta = KeyValues::new();
        meta.set("skipped", self.skipped);
        meta.set("nodes", self.nodes.nrows());
        meta.set("digest.truth", io::file_digest(&dir.join("truth.csv"))?);
        meta.write(&dir.join("reference.meta"))
    }

    /// Reads a set written by [`ReferenceSet::save`].
    pub fn load(dir: &Path, grid: &Arc<Grid>) -> Result<Self> {
        let meta = KeyValues::read(&dir.join("reference.meta"))?;
        let truth_path = dir.join("truth.csv");
        if io::file_digest(&truth_path)? != meta.require("digest.truth")? {
            return Err(Error::data(&truth_path, 0, "digest does not match reference.meta"));
        }
        let (_, nodes) = io::read_matrix_csv(&dir.join("nodes.csv"))?;
        let (_, truth) = io::read_matrix_csv(&truth_path)?;
        if truth.nrows() != grid.len() || truth.ncols() != nodes.nrows() {
            return Err(Error::data(&truth_path, 1, "truth matrix does not match grid and nodes"));
        }
        Ok(ReferenceSet {
            grid: Arc::clone(grid),
            nodes,
            truth,
            skipped: meta.parse_required("skipped")?,
        })
    }

    pub fn nodes(&self) -> &DMatrix<f64> {
        &self.nodes
    }

    pub fn truth(&self) -> &DMatrix<f64> {
        &self.truth
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Relative error of the surrogate at each retained node.
    pub fn pointwise_errors(&self, surr: &dyn FieldSurrogate) -> Result<Vec<f64>> {
        if **surr.grid() != *self.grid {
            return Err(Error::IncompatibleGrids("surrogate and reference use different grids".into()));
        }
        const CHUNK: usize = 2048;
        let m = self.nodes.nrows();
        let mut out = Vec::with_capacity(m);
        for start in (0..m).step_by(CHUNK) {
            let len = CHUNK.min(m - start);
            let pred = surr.predict_many_xi(&self.nodes.rows(start, len).into_owned())?;
            for c in 0..len {
                let truth = self.truth.column(start + c);
                out.push(relative_error(&self.grid, truth.as_slice(), pred.column(c).as_slice()));
            }
        }
        Ok(out)
    }

    pub fn integrated_error(&self, surr: &dyn FieldSurrogate) -> Result<IntegratedError> {
        let e = self.pointwise_errors(surr)?;
        let m = e.len();
        if m == 0 {
            return Err(Error::InsufficientData("every oracle evaluation failed".into()));
        }
        let mean = e.iter().sum::<f64>() / m as f64;
        let var = if m > 1 {
            e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64
        } else {
            0.0
        };
        Ok(IntegratedError {
            mean,
            std_error: (var / m as f64).sqrt(),
            nodes: m,
            skipped: self.skipped,
        })
    }
}

/// One-shot integrated relative error against an oracle model.
pub fn integrated_relative_error(surr: &dyn FieldSurrogate, problem: &dyn Problem, rule: Quadrature) -> Result<IntegratedError> {
    ReferenceSet::build(problem, rule)?.integrated_error(surr)
}
