//! KLE+PCE field surrogates and their additive bifidelity combination.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::design::random_design;
use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::io::{self, KeyValues};
use crate::kle::{fit_kle_with_mean, project_snapshots, KleBasis, SnapshotSet};
use crate::pce::{basis_matrix, MultiIndexSet, ParamBounds, PceModel, TauPolicy};

/// Settings shared by every KLE+PCE component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentConfig {
    pub rho: f64,
    pub degree: usize,
    pub tau: TauPolicy,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        ComponentConfig {
            rho: 0.99,
            degree: 3,
            tau: TauPolicy::default(),
        }
    }
}

/// Anything that maps normalized parameters to fields on a fixed grid.
pub trait FieldSurrogate {
    fn grid(&self) -> &Arc<Grid>;

    fn bounds(&self) -> &ParamBounds;

    /// Predictions at each row of `xi` (`C × n_s`, normalized); returns `n_g × C`.
    fn predict_many_xi(&self, xi: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    fn predict_xi(&self, xi: &[f64]) -> Result<Field> {
        let m = self.predict_many_xi(&DMatrix::from_row_slice(1, xi.len(), xi))?;
        Field::new(Arc::clone(self.grid()), m.column(0).iter().copied().collect())
    }

    /// Prediction at a physical parameter point.
    fn predict(&self, theta: &[f64]) -> Result<Field> {
        let xi = self.bounds().to_normalized(theta)?;
        self.predict_xi(&xi)
    }
}

/// Mean field, truncated KLE basis and one PCE per retained mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KlePceComponent {
    basis: KleBasis,
    pce: PceModel,
    bounds: ParamBounds,
    n_train: usize,
}

impl KlePceComponent {
    /// Centers, fits the KLE at `rho`, projects the training coefficients and
    /// regresses them on the normalized design.
    pub fn build(snaps: &SnapshotSet, bounds: &ParamBounds, config: &ComponentConfig) -> Result<Self> {
        if snaps.n_params() != bounds.dim() {
            return Err(Error::InvalidArgument(format!(
                "design has {} columns but bounds have {}",
                snaps.n_params(),
                bounds.dim()
            )));
        }
        let (basis, centered) = fit_kle_with_mean(snaps, config.rho)?;
        let index = MultiIndexSet::total_order(bounds.dim(), config.degree)?;
        let zeta = project_snapshots(&basis, &centered)?;
        let pce = PceModel::fit(snaps.design(), &zeta, index, &config.tau)?;
        Ok(KlePceComponent {
            basis,
            pce,
            bounds: bounds.clone(),
            n_train: snaps.len(),
        })
    }

    pub fn basis(&self) -> &KleBasis {
        &self.basis
    }

    pub fn pce(&self) -> &PceModel {
        &self.pce
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Predicted modal coefficients (`C × k_t`) at normalized points.
    pub fn coefficients_many(&self, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = basis_matrix(xi, self.pce.index())?;
        Ok(a * self.pce.coefficients())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.basis.save(&dir.join("kle"))?;
        self.pce.save(&dir.join("pce"))?;
        let mut meta = KeyValues::new();
        meta.set("bounds", self.bounds.tokens().join(" "));
        meta.set("n_train", self.n_train);
        meta.write(&dir.join("component.meta"))
    }

    pub fn load(dir: &Path, grid: Arc<Grid>) -> Result<Self> {
        let meta = KeyValues::read(&dir.join("component.meta"))?;
        let tokens: Vec<&str> = meta.require("bounds")?.split_whitespace().collect();
        let basis = KleBasis::load(&dir.join("kle"), grid)?;
        let pce = PceModel::load(&dir.join("pce"))?;
        if pce.n_modes() != basis.n_modes() {
            return Err(Error::data(dir.join("pce/pce.meta"), 1, "PCE mode count differs from KLE"));
        }
        Ok(KlePceComponent {
            basis,
            pce,
            bounds: ParamBounds::from_tokens(&tokens)?,
            n_train: meta.parse_required("n_train")?,
        })
    }

    /// Hex digest over every file of a saved component.
    fn digest_dir(dir: &Path) -> Result<String> {
        let files = [
            "component.meta",
            "kle/mean.csv",
            "kle/eigenvalues.csv",
            "kle/modes.csv",
            "kle/kle.meta",
            "pce/coefficients.csv",
            "pce/pce.meta",
        ];
        let mut all = String::new();
        for f in files {
            all.push_str(&io::file_digest(&dir.join(f))?);
        }
        Ok(io::digest(all.as_bytes()))
    }
}

impl FieldSurrogate for KlePceComponent {
    fn grid(&self) -> &Arc<Grid> {
        self.basis.grid()
    }

    fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    fn predict_many_xi(&self, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n_g = self.grid().len();
        let c = xi.nrows();
        let mean = self.basis.mean().values();
        let mut out = DMatrix::from_fn(n_g, c, |i, _| mean[i]);
        if self.n_modes() > 0 {
            let z = self.coefficients_many(xi)?;
            out += self.basis.scaled_modes() * z.transpose();
        } else {
            basis_matrix(xi, self.pce.index())?;
        }
        Ok(out)
    }
}

/// LF surrogate plus discrepancy surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct BifidelitySurrogate {
    lf: KlePceComponent,
    delta: KlePceComponent,
}

impl BifidelitySurrogate {
    /// `lf_snaps` trains the LF component; the discrepancy component is trained
    /// on `paired_hf - paired_lf`, which must share their design exactly.
    pub fn build(
        lf_snaps: &SnapshotSet,
        paired_hf: &SnapshotSet,
        paired_lf: &SnapshotSet,
        bounds: &ParamBounds,
        config: &ComponentConfig,
    ) -> Result<Self> {
        if **lf_snaps.grid() != **paired_hf.grid() {
            return Err(Error::IncompatibleGrids("LF and HF snapshots live on different grids".into()));
        }
        let diff = paired_hf.difference(paired_lf)?;
        let lf = KlePceComponent::build(lf_snaps, bounds, config)?;
        let delta = KlePceComponent::build(&diff, bounds, config)?;
        Ok(BifidelitySurrogate { lf, delta })
    }

    pub fn from_components(lf: KlePceComponent, delta: KlePceComponent) -> Result<Self> {
        if **lf.grid() != **delta.grid() {
            return Err(Error::IncompatibleGrids("components live on different grids".into()));
        }
        if lf.bounds != delta.bounds {
            return Err(Error::InvalidArgument("components use different parameter bounds".into()));
        }
        Ok(BifidelitySurrogate { lf, delta })
    }

    pub fn lf(&self) -> &KlePceComponent {
        &self.lf
    }

    pub fn delta(&self) -> &KlePceComponent {
        &self.delta
    }

    /// LF runs used by the LF component.
    pub fn n_lf_runs(&self) -> usize {
        self.lf.n_train
    }

    /// HF runs (one per discrepancy snapshot).
    pub fn n_hf_runs(&self) -> usize {
        self.delta.n_train
    }

    /// Writes `lf/`, `delta/`, `grid.meta` and a `manifest.meta` with digests.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::create_dir(dir)?;
        self.grid().write_meta(&dir.join("grid.meta"))?;
        self.lf.save(&dir.join("lf"))?;
        self.delta.save(&dir.join("delta"))?;
        let mut m = KeyValues::new();
        m.set("bounds", self.lf.bounds.tokens().join(" "));
        m.set("rho", io::fmt_f64(self.lf.basis.rho()));
        m.set("degree", self.lf.pce.index().degree());
        m.set("tau_lf", io::fmt_f64(self.lf.pce.tau()));
        m.set("tau_delta", io::fmt_f64(self.delta.pce.tau()));
        m.set("n_lf", self.lf.n_train);
        m.set("n_delta", self.delta.n_train);
        m.set("k_lf", self.lf.n_modes());
        m.set("k_delta", self.delta.n_modes());
        m.set("lf_digest", KlePceComponent::digest_dir(&dir.join("lf"))?);
        m.set("delta_digest", KlePceComponent::digest_dir(&dir.join("delta"))?);
        m.write(&dir.join("manifest.meta"))
    }

    /// Loads a bundle written by [`BifidelitySurrogate::save`], verifying digests.
    pub fn load(dir: &Path) -> Result<Self> {
        let grid = Grid::read_meta(&dir.join("grid.meta"))?;
        let m = KeyValues::read(&dir.join("manifest.meta"))?;
        for part in ["lf", "delta"] {
            let key = format!("{part}_digest");
            if KlePceComponent::digest_dir(&dir.join(part))? != m.require(&key)? {
                return Err(Error::data(dir.join("manifest.meta"), 1, format!("{part} component digest mismatch")));
            }
        }
        let lf = KlePceComponent::load(&dir.join("lf"), Arc::clone(&grid))?;
        let delta = KlePceComponent::load(&dir.join("delta"), grid)?;
        BifidelitySurrogate::from_components(lf, delta)
    }
}

impl FieldSurrogate for BifidelitySurrogate {
    fn grid(&self) -> &Arc<Grid> {
        self.lf.grid()
    }

    fn bounds(&self) -> &ParamBounds {
        &self.lf.bounds
    }

    fn predict_many_xi(&self, xi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.lf.predict_many_xi(xi)? + self.delta.predict_many_xi(xi)?)
    }
}

/// Pointwise Monte-Carlo mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct UqSummary {
    pub mean: Field,
    pub std: Field,
    pub samples: usize,
}

/// Propagates `m` uniform draws over the parameter box through the surrogate.
pub fn propagate_uq(surr: &dyn FieldSurrogate, m: usize, seed: u64) -> Result<UqSummary> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("forward UQ needs at least 2 samples, got {m}")));
    }
    let xi = random_design(m, surr.bounds().dim(), seed).points;
    let pred = surr.predict_many_xi(&xi)?;
    summarize(surr.grid(), &pred)
}

/// Pointwise mean and `(N-1)`-normalized standard deviation of the columns.
pub fn summarize(grid: &Arc<Grid>, samples: &DMatrix<f64>) -> Result<UqSummary> {
    let n = samples.ncols();
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 samples".into()));
    }
    let mut mean = vec![0.0; grid.len()];
    let mut std = vec![0.0; grid.len()];
    for i in 0..grid.len() {
        let row = samples.row(i);
        let mu = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
        mean[i] = mu;
        std[i] = var.sqrt();
    }
    Ok(UqSummary {
        mean: Field::new(Arc::clone(grid), mean)?,
        std: Field::new(Arc::clone(grid), std)?,
        samples: n,
    })
}

/// Per-point Pearson correlation between paired LF and HF snapshots; `None`
/// where either side has zero variance.
pub fn correlation_field(lf: &SnapshotSet, hf: &SnapshotSet) -> Result<Vec<Option<f64>>> {
    if lf.design() != hf.design() {
        return Err(Error::Pairing("LF and HF designs differ".into()));
    }
    if **lf.grid() != **hf.grid() {
        return Err(Error::IncompatibleGrids("LF and HF snapshots live on different grids".into()));
    }
    let n = lf.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("correlation needs at least 3 samples, got {n}")));
    }
    let (a, b) = (lf.data(), hf.data());
    Ok((0..a.nrows())
        .map(|i| {
            let (ra, rb) = (a.row(i), b.row(i));
            let ma = ra.iter().sum::<f64>() / n as f64;
            let mb = rb.iter().sum::<f64>() / n as f64;
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for k in 0..n {
                let (da, db) = (ra[k] - ma, rb[k] - mb);
                sab += da * db;
                saa += da * da;
                sbb += db * db;
            }
            if saa > 0.0 && sbb > 0.0 {
                Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
            } else {
                None
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::latin_hypercube;
    use crate::pce::legendre_orthonormal;

    fn grid() -> Arc<Grid> {
        Grid::uniform_1d(40, 0.0, 1.0).unwrap()
    }

    fn snapshots(design: &DMatrix<f64>, f: impl Fn(f64, &[f64]) -> f64) -> SnapshotSet {
        let g = grid();
        let data = DMatrix::from_fn(g.len(), design.nrows(), |i, n| {
            let xi: Vec<f64> = design.row(n).iter().copied().collect();
            f(g.x_coords()[i], &xi)
        });
        SnapshotSet::new(g, data, design.clone()).unwrap()
    }

    fn fixed(rho: f64) -> ComponentConfig {
        ComponentConfig {
            rho,
            degree: 3,
            tau: TauPolicy::Fixed(0.0),
        }
    }

    #[test]
    fn constant_snapshots_predict_constant() {
        let d = latin_hypercube(12, 2, 1).points;
        let s = snapshots(&d, |_, _| 2.5);
        let c = KlePceComponent::build(&s, &ParamBounds::unit(2), &ComponentConfig::default()).unwrap();
        assert_eq!(c.n_modes(), 0);
        let p = c.predict_xi(&[0.3, -0.8]).unwrap();
        assert!(p.values().iter().all(|v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn single_mode_linear_truth_is_reproduced() {
        let d = latin_hypercube(15, 2, 2).points;
        let s = snapshots(&d, |x, xi| 1.0 + x * x + (2.0 * x).sin() * (0.7 * xi[0] - 0.4 * xi[1]));
        let c = KlePceComponent::build(&s, &ParamBounds::unit(2), &fixed(0.999)).unwrap();
        assert_eq!(c.n_modes(), 1);
        for n in 0..s.len() {
            let p = c.predict_xi(&s.design_row(n)).unwrap();
            let truth = s.field(n);
            assert!(s.grid().distance(p.values(), truth.values()) < 1e-6);
        }
        let p = c.predict_xi(&[0.11, 0.93]).unwrap();
        let expected: Vec<f64> = s
            .grid()
            .x_coords()
            .iter()
            .map(|x| 1.0 + x * x + (2.0 * x).sin() * (0.7 * 0.11 - 0.4 * 0.93))
            .collect();
        assert!(s.grid().distance(p.values(), &expected) < 1e-8);
    }

    #[test]
    fn identical_fidelities_give_lf_surrogate() {
        let d = latin_hypercube(20, 2, 3).points;
        let lf = snapshots(&d, |x, xi| (x * (3.0 + xi[0])).sin() * (1.0 + 0.3 * xi[1]));
        let pairs: Vec<usize> = (0..6).collect();
        let plf = lf.select(&pairs);
        let bounds = ParamBounds::unit(2);
        let surr = BifidelitySurrogate::build(&lf, &plf, &plf, &bounds, &ComponentConfig::default()).unwrap();
        assert_eq!(surr.delta().n_modes(), 0);
        assert!(surr.delta().basis().mean().max_abs() == 0.0);
        let xi = [0.2, -0.1];
        assert_eq!(surr.predict_xi(&xi).unwrap().values(), surr.lf().predict_xi(&xi).unwrap().values());
    }

    #[test]
    fn constant_offset_discrepancy() {
        let d = latin_hypercube(20, 2, 4).points;
        let lf = snapshots(&d, |x, xi| x * xi[0] + xi[1]);
        let idx: Vec<usize> = (0..5).collect();
        let plf = lf.select(&idx);
        let mut hf_data = plf.data().clone();
        hf_data.add_scalar_mut(0.75);
        let phf = SnapshotSet::new(Arc::clone(plf.grid()), hf_data, plf.design().clone()).unwrap();
        let surr = BifidelitySurrogate::build(&lf, &phf, &plf, &ParamBounds::unit(2), &ComponentConfig::default()).unwrap();
        assert_eq!(surr.delta().n_modes(), 0);
        assert!(surr.delta().basis().mean().values().iter().all(|v| (v - 0.75).abs() < 1e-14));
        assert_eq!(surr.n_lf_runs(), 20);
        assert_eq!(surr.n_hf_runs(), 5);
    }

    #[test]
    fn pairing_and_domain_errors() {
        let d = latin_hypercube(10, 2, 5).points;
        let lf = snapshots(&d, |x, xi| x + xi[0]);
        let a = lf.select(&[0, 1, 2]);
        let b = lf.select(&[3, 4, 5]);
        let bounds = ParamBounds::unit(2);
        assert!(matches!(
            BifidelitySurrogate::build(&lf, &a, &b, &bounds, &ComponentConfig::default()),
            Err(Error::Pairing(_))
        ));
        let c = KlePceComponent::build(&lf, &bounds, &ComponentConfig::default()).unwrap();
        assert!(matches!(c.predict_xi(&[1.5, 0.0]), Err(Error::OutOfDomain(_))));
        let phys = ParamBounds::new(vec![40.0, 60.0], vec![60.0, 80.0]).unwrap();
        let c = KlePceComponent::build(&lf, &phys, &ComponentConfig::default()).unwrap();
        assert!(matches!(c.predict(&[39.0, 70.0]), Err(Error::OutOfDomain(_))));
        assert!(c.predict(&[50.0, 70.0]).is_ok());
    }

    #[test]
    fn interpolates_paired_training_points() {
        // Ten points exactly determine a cubic total-order fit in 2D.
        let d = latin_hypercube(10, 2, 6).points;
        let lf = snapshots(&d, |x, xi| (x + xi[0]).cos() + x * xi[1]);
        let hf = snapshots(&d, |x, xi| (x + xi[0]).cos() + x * xi[1] + 0.1 * x * x * xi[0] * xi[1] + 0.05 * legendre_orthonormal(3, xi[1]).unwrap() * x);
        let surr = BifidelitySurrogate::build(&lf, &hf, &lf, &ParamBounds::unit(2), &fixed(1.0)).unwrap();
        for n in 0..10 {
            let p = surr.predict_xi(&hf.design_row(n)).unwrap();
            let rel = hf.grid().distance(p.values(), hf.field(n).values()) / hf.field(n).norm();
            assert!(rel < 1e-6, "{n}: {rel}");
        }
    }

    #[test]
    fn prediction_is_additive_and_deterministic() {
        let d = latin_hypercube(30, 2, 7).points;
        let lf = snapshots(&d, |x, xi| (x * (2.0 + xi[0])).sin());
        let idx: Vec<usize> = (0..8).collect();
        let plf = lf.select(&idx);
        let hf = snapshots(&plf.design().clone(), |x, xi| (x * (2.0 + xi[0])).sin() + 0.2 * x * xi[1]);
        let surr = BifidelitySurrogate::build(&lf, &hf, &plf, &ParamBounds::unit(2), &ComponentConfig::default()).unwrap();
        let xi = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.9, 0.4, 0.5, 0.5]);
        let all = surr.predict_many_xi(&xi).unwrap();
        let parts = surr.lf().predict_many_xi(&xi).unwrap() + surr.delta().predict_many_xi(&xi).unwrap();
        assert_eq!(all, parts);
        assert_eq!(all, surr.predict_many_xi(&xi).unwrap());
        let one = surr.predict_xi(&[-0.9, 0.4]).unwrap();
        for i in 0..one.values().len() {
            assert!((one.values()[i] - all[(i, 1)]).abs() < 1e-14);
        }
    }

    #[test]
    fn uq_statistics() {
        let d = latin_hypercube(12, 2, 1).points;
        let s = snapshots(&d, |_, _| 1.5);
        let c = KlePceComponent::build(&s, &ParamBounds::unit(2), &ComponentConfig::default()).unwrap();
        let uq = propagate_uq(&c, 50, 3).unwrap();
        assert!(uq.std.values().iter().all(|v| *v == 0.0));

        let g = Grid::uniform_1d(2, 0.0, 1.0).unwrap();
        let samples = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, -2.0, 2.0]);
        let sm = summarize(&g, &samples).unwrap();
        assert_eq!(sm.mean.values(), &[2.0, 0.0]);
        assert!((sm.std.values()[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!((sm.std.values()[1] - 8f64.sqrt()).abs() < 1e-15);

        let lf = snapshots(&d, |x, xi| x * xi[0]);
        let c = KlePceComponent::build(&lf, &ParamBounds::unit(2), &ComponentConfig::default()).unwrap();
        assert_eq!(propagate_uq(&c, 100, 9).unwrap(), propagate_uq(&c, 100, 9).unwrap());
    }

    #[test]
    fn correlation_limits() {
        let d = latin_hypercube(10, 2, 8).points;
        let lf = snapshots(&d, |x, xi| x * (xi[0] + xi[1] * xi[1]));
        let mut hf = lf.data() * 2.0;
        hf.add_scalar_mut(1.0);
        let hf = SnapshotSet::new(Arc::clone(lf.grid()), hf, d.clone()).unwrap();
        let r = correlation_field(&lf, &hf).unwrap();
        assert!(r.iter().all(|v| v.map_or(true, |v| (v - 1.0).abs() < 1e-12)));
        let neg = SnapshotSet::new(Arc::clone(lf.grid()), -lf.data(), d).unwrap();
        let r = correlation_field(&lf, &neg).unwrap();
        assert!(r.iter().flatten().all(|v| (v + 1.0).abs() < 1e-12));
        // x = 0 has zero variance on both sides.
        assert_eq!(r[0], None);
    }

    #[test]
    fn save_load_round_trip() {
        let d = latin_hypercube(25, 2, 9).points;
        let lf = snapshots(&d, |x, xi| (x * (2.0 + xi[0])).sin() + xi[1]);
        let idx: Vec<usize> = (0..6).collect();
        let plf = lf.select(&idx);
        let hf = snapshots(&plf.design().clone(), |x, xi| (x * (2.0 + xi[0])).sin() + xi[1] + 0.1 * x * xi[0]);
        let surr = BifidelitySurrogate::build(&lf, &hf, &plf, &ParamBounds::unit(2), &ComponentConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        surr.save(dir.path()).unwrap();
        let back = BifidelitySurrogate::load(dir.path()).unwrap();
        let xi = [0.3, 0.1];
        assert_eq!(back.predict_xi(&xi).unwrap(), surr.predict_xi(&xi).unwrap());

        io::write_text(&dir.path().join("delta/pce/pce.meta"), "tampered = 1\n").unwrap();
        assert!(BifidelitySurrogate::load(dir.path()).is_err());
    }
}
