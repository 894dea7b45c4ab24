//! Plot-ready data from campaign directories: error curves, per-point CV
//! heatmaps, test-error histograms, UQ bands and LF/HF correlation fields.

use std::path::{Path, PathBuf};

use crate::crossval::CvErrors;
use crate::design::{derive_seed, read_design_csv};
use crate::driver::{cross_policy_test, histogram, load_campaign, stage_dir, CampaignResult};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::{self, fmt_f64, KeyValues};
use crate::surrogate::{correlation_field, propagate_uq, FieldSurrogate, UqSummary};

const HISTOGRAM_BINS: usize = 20;

/// One stage's stored CV errors, or why it could not be read.
#[derive(Debug, Clone)]
pub struct StageErrors {
    pub stage: usize,
    pub n_hf: usize,
    pub cv: std::result::Result<Vec<Option<f64>>, String>,
    pub mu: Option<f64>,
    pub mu_se: Option<f64>,
}

/// Reads every stage directory; unreadable stages are kept with their error.
pub fn stage_errors(dir: &Path) -> Vec<StageErrors> {
    let mut out = Vec::new();
    for stage in 0.. {
        let sd = stage_dir(dir, stage);
        if !sd.exists() {
            break;
        }
        let read = || -> std::result::Result<(usize, Vec<Option<f64>>, Option<f64>, Option<f64>), Error> {
            let meta = KeyValues::read(&sd.join("stage.meta"))?;
            let eps = CvErrors::read_eps(&sd.join("cv_errors.csv"))?;
            let n_hf: usize = meta.parse_required("n_hf")?;
            if eps.len() != n_hf {
                return Err(Error::data(sd.join("cv_errors.csv"), 0, format!("{} errors for {n_hf} HF runs", eps.len())));
            }
            Ok((n_hf, eps, meta.parse_value("mu.mean")?, meta.parse_value("mu.std_error")?))
        };
        out.push(match read() {
            Ok((n_hf, eps, mu, mu_se)) => StageErrors {
                stage,
                n_hf,
                cv: Ok(eps),
                mu,
                mu_se,
            },
            Err(e) => {
                log::warn!("stage {stage} skipped: {e}");
                StageErrors {
                    stage,
                    n_hf: 0,
                    cv: Err(e.to_string()),
                    mu: None,
                    mu_se: None,
                }
            }
        });
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Columns: `stage,n_hf,cv_mean,mu_eps,mu_se,status`.
pub fn error_vs_stage_csv(stages: &[StageErrors]) -> String {
    let mut out = String::from("stage,n_hf,cv_mean,mu_eps,mu_se,status\n");
    for s in stages {
        match &s.cv {
            Ok(eps) => {
                let avail: Vec<f64> = eps.iter().flatten().copied().collect();
                let mean = (!avail.is_empty()).then(|| avail.iter().sum::<f64>() / avail.len() as f64);
                out.push_str(&format!(
                    "{},{},{},{},{},ok\n",
                    s.stage,
                    s.n_hf,
                    opt(mean),
                    opt(s.mu),
                    opt(s.mu_se)
                ));
            }
            Err(_) => out.push_str(&format!("{},,,,,corrupt\n", s.stage)),
        }
    }
    out
}

/// Rows are HF points in acquisition order, columns are stages; a point's
/// cell is empty before it was acquired or when its fold failed.
pub fn cv_heatmap_csv(stages: &[StageErrors], design: &nalgebra::DMatrix<f64>, bounds: &crate::pce::ParamBounds) -> String {
    let n_s = design.ncols();
    let mut out = String::from("index");
    for d in 1..=n_s {
        out.push_str(&format!(",theta_{d}"));
    }
    for s in stages.iter().filter(|s| s.cv.is_ok()) {
        out.push_str(&format!(",stage_{:03}", s.stage));
    }
    out.push('\n');
    for i in 0..design.nrows() {
        let xi: Vec<f64> = design.row(i).iter().copied().collect();
        out.push_str(&i.to_string());
        for v in bounds.to_physical(&xi) {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        for s in stages {
            if let Ok(eps) = &s.cv {
                out.push(',');
                out.push_str(&opt(eps.get(i).copied().flatten()));
            }
        }
        out.push('\n');
    }
    out
}

/// Columns: coordinates, then `{name}_mean,{name}_std,{name}_lo,{name}_hi`
/// per summary, with bands at mean ± one standard deviation.
pub fn uq_bands_csv(grid: &Grid, summaries: &[(&str, &UqSummary)]) -> String {
    let mut out = String::from(if grid.dim() == 1 { "x" } else { "x,y" });
    for (name, _) in summaries {
        out.push_str(&format!(",{name}_mean,{name}_std,{name}_lo,{name}_hi"));
    }
    out.push('\n');
    for k in 0..grid.len() {
        let (x, y) = grid.point(k);
        out.push_str(&fmt_f64(x));
        if grid.dim() == 2 {
            out.push(',');
            out.push_str(&fmt_f64(y));
        }
        for (_, s) in summaries {
            let m = s.mean.values()[k];
            let sd = s.std.values()[k];
            for v in [m, sd, m - sd, m + sd] {
                out.push(',');
                out.push_str(&fmt_f64(v));
            }
        }
        out.push('\n');
    }
    out
}

/// Columns: coordinates and `rho` (empty where either fidelity is constant).
pub fn correlation_csv(grid: &Grid, rho: &[Option<f64>]) -> String {
    let mut out = String::from(if grid.dim() == 1 { "x,rho\n" } else { "x,y,rho\n" });
    for (k, r) in rho.iter().enumerate() {
        let (x, y) = grid.point(k);
        if grid.dim() == 1 {
            out.push_str(&format!("{},{}\n", fmt_f64(x), opt(*r)));
        } else {
            out.push_str(&format!("{},{},{}\n", fmt_f64(x), fmt_f64(y), opt(*r)));
        }
    }
    out
}

/// Columns: `source,bin_lo,bin_hi,count`.
pub fn histogram_csv(rows: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("source,bin_lo,bin_hi,count\n");
    for (source, values) in rows {
        let hi = values.iter().copied().filter(|v| v.is_finite()).fold(0.0_f64, f64::max);
        let hi = if hi > 0.0 { hi } else { 1.0 };
        for (lo, up, c) in histogram(values, HISTOGRAM_BINS, 0.0, hi) {
            out.push_str(&format!("{source},{},{},{c}\n", fmt_f64(lo), fmt_f64(up)));
        }
    }
    out
}

/// What [`write_report`] produced.
#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub stages: usize,
    /// Stages that could not be read.
    pub corrupt: Vec<usize>,
    pub files: Vec<PathBuf>,
}

/// Writes every report file for the campaign in `dir` into `out`.
///
/// With `against`, the histogram holds each campaign's final-surrogate errors
/// on the other's acquired points; otherwise it holds the final-stage CV errors.
pub fn write_report(dir: &Path, out: &Path, against: Option<&Path>, uq_samples: usize) -> Result<ReportSummary> {
    io::create_dir(out)?;
    let stages = stage_errors(dir);
    if stages.is_empty() {
        return Err(Error::data(dir, 0, "no stage directories found"));
    }
    let corrupt: Vec<usize> = stages.iter().filter(|s| s.cv.is_err()).map(|s| s.stage).collect();
    let mut files = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let path = out.join(name);
        io::write_text(&path, &text)?;
        files.push(path);
        Ok(())
    };
    emit("error_vs_stage.csv", error_vs_stage_csv(&stages))?;

    let last_ok = stages.iter().rev().find(|s| s.cv.is_ok()).map(|s| s.stage);
    let (design, bounds) = match last_ok {
        Some(s) => read_design_csv(&stage_dir(dir, s).join("design_hf.csv"))?,
        None => return Err(Error::data(dir, 0, "every stage is corrupt")),
    };
    emit("cv_heatmap.csv", cv_heatmap_csv(&stages, &design, &bounds))?;

    let campaign = match load_campaign(dir) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("campaign state unreadable ({e}); histogram, UQ and correlation files not written");
            return Ok(ReportSummary {
                stages: stages.len(),
                corrupt,
                files,
            });
        }
    };
    let hist_rows = match against {
        Some(other) => {
            let other = load_campaign(other)?;
            let ab = cross_policy_test(&campaign, &other)?;
            let ba = cross_policy_test(&other, &campaign)?;
            vec![
                (format!("{}_on_{}", campaign.config.policy, other.config.policy), ab.errors),
                (format!("{}_on_{}", other.config.policy, campaign.config.policy), ba.errors),
            ]
        }
        None => {
            let eps = campaign
                .history
                .final_stage()
                .map(|s| s.cv.errors.iter().flatten().copied().collect())
                .unwrap_or_default();
            vec![("cv_final".to_string(), eps)]
        }
    };
    emit("test_histogram.csv", histogram_csv(&hist_rows))?;

    let (bf, lf) = final_uq(&campaign, uq_samples)?;
    let grid = campaign.data[0].lf().grid();
    emit("uq_bands.csv", uq_bands_csv(grid, &[("bf", &bf), ("lf", &lf)]))?;

    let d = &campaign.data[0];
    let rho = correlation_field(&d.paired_lf(), d.hf())?;
    emit("correlation.csv", correlation_csv(grid, &rho))?;

    Ok(ReportSummary {
        stages: stages.len(),
        corrupt,
        files,
    })
}

/// UQ summaries of the final bifidelity surrogate and its LF component alone,
/// from the same parameter draws.
pub fn final_uq(campaign: &CampaignResult, samples: usize) -> Result<(UqSummary, UqSummary)> {
    let seed = derive_seed(campaign.config.seed, u64::MAX);
    let s = &campaign.surrogates[0];
    let bf = propagate_uq(s as &dyn FieldSurrogate, samples, seed)?;
    let lf = propagate_uq(s.lf() as &dyn FieldSurrogate, samples, seed)?;
    Ok((bf, lf))
}

/// Forward-UQ comparison of one surrogate against its LF component and,
/// when a model is available, Monte-Carlo statistics of the HF model.
#[derive(Debug, Clone)]
pub struct UqStudy {
    pub bf: UqSummary,
    pub lf: UqSummary,
    pub hf: Option<UqSummary>,
    /// Weighted-L2 distances of the BF and LF means to the HF mean.
    pub bf_to_hf: Option<f64>,
    pub lf_to_hf: Option<f64>,
}

impl UqStudy {
    pub fn bands_csv(&self) -> String {
        let mut rows: Vec<(&str, &UqSummary)> = vec![("bf", &self.bf), ("lf", &self.lf)];
        if let Some(h) = &self.hf {
            rows.push(("hf", h));
        }
        uq_bands_csv(self.bf.mean.grid(), &rows)
    }

    pub fn summary(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("samples", self.bf.samples);
        if let (Some(b), Some(l)) = (self.bf_to_hf, self.lf_to_hf) {
            kv.set("bf_to_hf", fmt_f64(b));
            kv.set("lf_to_hf", fmt_f64(l));
        }
        kv
    }
}

/// Propagates `samples` uniform parameter draws through the surrogate, its
/// LF component and (if given) the HF model, all at the same draws.
pub fn uq_study(
    surrogate: &crate::surrogate::BifidelitySurrogate,
    problem: Option<&dyn crate::models::Problem>,
    samples: usize,
    seed: u64,
) -> Result<UqStudy> {
    let bf = propagate_uq(surrogate as &dyn FieldSurrogate, samples, seed)?;
    let lf = propagate_uq(surrogate.lf() as &dyn FieldSurrogate, samples, seed)?;
    let hf = match problem {
        None => None,
        Some(p) => {
            use rayon::prelude::*;
            let xi = crate::design::random_design(samples, p.n_params(), seed).points;
            let cols: Vec<Vec<f64>> = (0..samples)
                .into_par_iter()
                .map(|r| {
                    let x: Vec<f64> = xi.row(r).iter().copied().collect();
                    p.eval_hf(&p.bounds().to_physical(&x)).map(|f| f.into_values())
                })
                .collect::<Result<_>>()?;
            let m = nalgebra::DMatrix::from_fn(p.grid().len(), samples, |i, j| cols[j][i]);
            Some(crate::surrogate::summarize(p.grid(), &m)?)
        }
    };
    let dist = |a: &UqSummary| hf.as_ref().map(|h| h.mean.grid().distance(a.mean.values(), h.mean.values()));
    Ok(UqStudy {
        bf_to_hf: dist(&bf),
        lf_to_hf: dist(&lf),
        bf,
        lf,
        hf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossval::CvMode;
    use crate::driver::{run_campaign, CampaignConfig, Policy};
    use crate::grid::Field;
    use crate::models::{Problem, PulseCase, PulseProblem};

    fn problem() -> PulseProblem {
        PulseProblem::with_grid(PulseCase::C2, Grid::uniform_1d(48, 0.0, 0.1).unwrap())
    }

    fn config(budget: usize, policy: Policy) -> CampaignConfig {
        CampaignConfig {
            n_lf_pilot: 25,
            n_hf_pilot: 4,
            budget,
            cv_mode: CvMode::KFold(4),
            policy,
            ..CampaignConfig::default()
        }
    }

    fn read_table(path: &Path) -> Vec<Vec<String>> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.split(',').map(String::from).collect())
            .collect()
    }

    #[test]
    fn pilot_only_heatmap_has_one_stage_column() {
        let dir = tempfile::tempdir().unwrap();
        run_campaign(&config(4, Policy::EiMax), &problem(), None, Some(dir.path())).unwrap();
        let out = dir.path().join("report");
        let r = write_report(dir.path(), &out, None, 100).unwrap();
        assert_eq!(r.stages, 1);
        let t = read_table(&out.join("cv_heatmap.csv"));
        assert_eq!(t[0], ["index", "theta_1", "theta_2", "stage_000"]);
        assert_eq!(t.len(), 5);
    }

    #[test]
    fn heatmap_cells_equal_stored_errors() {
        let dir = tempfile::tempdir().unwrap();
        run_campaign(&config(7, Policy::EiMax), &problem(), None, Some(dir.path())).unwrap();
        let out = dir.path().join("report");
        write_report(dir.path(), &out, None, 100).unwrap();
        let t = read_table(&out.join("cv_heatmap.csv"));
        assert_eq!(t[0].len(), 3 + 4);
        assert_eq!(t.len(), 1 + 7);
        for stage in 0..4 {
            let stored = CvErrors::read_eps(&stage_dir(dir.path(), stage).join("cv_errors.csv")).unwrap();
            for (i, row) in t[1..].iter().enumerate() {
                let cell = &row[3 + stage];
                match stored.get(i) {
                    Some(Some(e)) => assert_eq!(cell.parse::<f64>().unwrap().to_bits(), e.to_bits()),
                    _ => assert!(cell.is_empty()),
                }
            }
        }
        let curve = read_table(&out.join("error_vs_stage.csv"));
        assert_eq!(curve.len(), 5);
        assert!(curve[1..].iter().all(|r| r[5] == "ok"));
    }

    #[test]
    fn corrupt_stage_is_flagged() {
        let dir = tempfile::tempdir().unwrap();
        run_campaign(&config(6, Policy::Random), &problem(), None, Some(dir.path())).unwrap();
        std::fs::write(stage_dir(dir.path(), 1).join("cv_errors.csv"), "garbage").unwrap();
        let out = dir.path().join("report");
        let r = write_report(dir.path(), &out, None, 50).unwrap();
        assert_eq!(r.corrupt, vec![1]);
        let curve = read_table(&out.join("error_vs_stage.csv"));
        assert_eq!(curve[2][5], "corrupt");
        let heat = read_table(&out.join("cv_heatmap.csv"));
        assert_eq!(heat[0].len(), 3 + 2);
    }

    #[test]
    fn constant_surrogate_has_zero_std_band() {
        let g = Grid::uniform_1d(5, 0.0, 1.0).unwrap();
        let s = UqSummary {
            mean: Field::new(g.clone(), vec![2.0; 5]).unwrap(),
            std: Field::zeros(g.clone()),
            samples: 10,
        };
        let text = uq_bands_csv(&g, &[("bf", &s)]);
        let t: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
        assert_eq!(t[0], ["x", "bf_mean", "bf_std", "bf_lo", "bf_hi"]);
        assert!(t[1..].iter().all(|r| r[2] == "0" && r[3] == "2" && r[4] == "2"));
    }

    #[test]
    fn cross_policy_histogram_and_outputs_reingest() {
        let p = problem();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_campaign(&config(7, Policy::EiMax), &p, None, Some(a.path())).unwrap();
        run_campaign(&config(7, Policy::Random), &p, None, Some(b.path())).unwrap();
        let out = a.path().join("report");
        write_report(a.path(), &out, Some(b.path()), 200).unwrap();
        let h = read_table(&out.join("test_histogram.csv"));
        let total: usize = h[1..].iter().filter(|r| r[0] == "ei_max_on_random").map(|r| r[3].parse::<usize>().unwrap()).sum();
        assert_eq!(total, 3);
        for f in ["error_vs_stage.csv", "uq_bands.csv", "correlation.csv"] {
            assert!(out.join(f).exists());
        }
        let (_, m) = io::read_matrix_csv(&out.join("uq_bands.csv")).unwrap();
        assert_eq!(m.nrows(), p.grid().len());
        let again = io::matrix_csv_string(&io::read_matrix_csv(&out.join("uq_bands.csv")).unwrap().0, &m);
        assert_eq!(again, std::fs::read_to_string(out.join("uq_bands.csv")).unwrap());
    }
}
