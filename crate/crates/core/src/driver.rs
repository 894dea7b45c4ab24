//! Active-learning campaigns: pilot build, cross-validation, GP fit, acquisition,
//! model evaluation and rebuild, with per-stage persistence and resume.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::acquisition::{kriging_believer_batch, AcquisitionConfig, AcquisitionResult, Objective};
use crate::crossval::{cv_errors, relative_error, BifidelityData, CvConfig, CvErrors, CvMode, IntegratedError, ReferenceSet};
use crate::design::{derive_seed, latin_hypercube, maximin_subset, random_design, read_design_csv, write_design_csv, RNG_NAME};
use crate::error::{Error, Result};
use crate::gpr::{fit_gp, GpConfig, Hyper};
use crate::grid::Grid;
use crate::io::{self, fmt_f64, KeyValues};
use crate::kle::SnapshotSet;
use crate::models::Problem;
use crate::pce::{log_spaced, ParamBounds, TauPolicy};
use crate::surrogate::{BifidelitySurrogate, ComponentConfig, FieldSurrogate};

const STREAM_PILOT: u64 = 0;
const STREAM_CV: u64 = 1;
const STREAM_GP: u64 = 1 << 20;
const STREAM_RANDOM: u64 = 2 << 20;

/// How new HF points are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Maximize expected improvement of the CV error.
    EiMax,
    /// Anti-informative control: minimize it.
    EiMin,
    /// Uniform random points.
    Random,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::EiMax, Policy::Random, Policy::EiMin];

    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim() {
            "ei_max" => Some(Policy::EiMax),
            "ei_min" => Some(Policy::EiMin),
            "random" => Some(Policy::Random),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Policy::EiMax => "ei_max",
            Policy::EiMin => "ei_min",
            Policy::Random => "random",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// When the acquisition loop stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopGuard {
    /// Acquire only while a full batch fits: `N_HF + q <= B`.
    FullBatches,
    /// Acquire while `N_HF < B`, possibly ending at `B + q - 1`.
    AllowOvershoot,
}

impl LoopGuard {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim() {
            "full_batches" => Some(LoopGuard::FullBatches),
            "allow_overshoot" => Some(LoopGuard::AllowOvershoot),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LoopGuard::FullBatches => "full_batches",
            LoopGuard::AllowOvershoot => "allow_overshoot",
        }
    }

    pub fn allows(self, n_hf: usize, q: usize, budget: usize) -> bool {
        match self {
            LoopGuard::FullBatches => n_hf + q <= budget,
            LoopGuard::AllowOvershoot => n_hf < budget,
        }
    }
}

/// Everything a campaign needs besides the problem itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub n_lf_pilot: usize,
    pub n_hf_pilot: usize,
    /// Total HF evaluations, pilot included.
    pub budget: usize,
    pub batch: usize,
    pub cv_mode: CvMode,
    pub cv: CvConfig,
    pub gp: GpConfig,
    /// Fit the GP to `ln ε` instead of `ε`.
    pub gp_log_targets: bool,
    pub acquisition: AcquisitionConfig,
    pub policy: Policy,
    pub guard: LoopGuard,
    pub seed: u64,
    /// Halt after persisting this stage, leaving its acquisitions unevaluated.
    pub stop_after_stage: Option<usize>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            n_lf_pilot: 200,
            n_hf_pilot: 5,
            budget: 65,
            batch: 1,
            cv_mode: CvMode::KFold(5),
            cv: CvConfig::default(),
            gp: GpConfig::default(),
            gp_log_targets: false,
            acquisition: AcquisitionConfig::default(),
            policy: Policy::EiMax,
            guard: LoopGuard::FullBatches,
            seed: 0,
            stop_after_stage: None,
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(Error::config(key, msg));
        if self.n_hf_pilot < 2 {
            return fail("pilot.n_hf", format!("need at least 2 pilot HF runs, got {}", self.n_hf_pilot));
        }
        if self.n_hf_pilot > self.n_lf_pilot {
            return fail("pilot.n_hf", "pilot HF runs must be a subset of the LF pilot".into());
        }
        if self.n_hf_pilot > self.budget {
            return fail("budget", format!("budget {} is below the pilot HF count {}", self.budget, self.n_hf_pilot));
        }
        if self.batch == 0 {
            return fail("batch", "batch size must be at least 1".into());
        }
        if let CvMode::KFold(k) = self.cv_mode {
            if k < 2 || k > self.n_hf_pilot {
                return fail("cv.mode", format!("k = {k} must lie in [2, pilot HF count]"));
            }
        }
        if !(self.cv.component.rho > 0.0 && self.cv.component.rho <= 1.0) {
            return fail("rho", format!("must be in (0, 1], got {}", self.cv.component.rho));
        }
        Ok(())
    }

    /// Number of acquisition rounds the loop guard permits.
    pub fn planned_rounds(&self) -> usize {
        let mut n = self.n_hf_pilot;
        let mut rounds = 0;
        while self.guard.allows(n, self.batch, self.budget) {
            n += self.batch;
            rounds += 1;
        }
        rounds
    }

    /// Flat key-value form; the inverse of [`CampaignConfig::from_key_values`].
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("pilot.n_lf", self.n_lf_pilot);
        kv.set("pilot.n_hf", self.n_hf_pilot);
        kv.set("budget", self.budget);
        kv.set("batch", self.batch);
        kv.set("cv.mode", self.cv_mode);
        kv.set("cv.retain_exclusive_lf", self.cv.retain_exclusive_lf);
        kv.set("rho", fmt_f64(self.cv.component.rho));
        kv.set("degree", self.cv.component.degree);
        match &self.cv.component.tau {
            TauPolicy::Fixed(t) => kv.set("tau.fixed", fmt_f64(*t)),
            TauPolicy::CrossValidated { grid, folds, seed } => {
                let g: Vec<String> = grid.iter().map(|t| fmt_f64(*t)).collect();
                kv.set("tau.grid", g.join(" "));
                kv.set("tau.folds", folds);
                kv.set("tau.seed", seed);
            }
        }
        kv.set("gp.starts", self.gp.n_starts);
        kv.set("gp.length_bounds", format!("{}:{}", fmt_f64(self.gp.length_bounds.0), fmt_f64(self.gp.length_bounds.1)));
        kv.set("gp.signal_bounds", format!("{}:{}", fmt_f64(self.gp.signal_bounds.0), fmt_f64(self.gp.signal_bounds.1)));
        kv.set("gp.nugget_bounds", format!("{}:{}", fmt_f64(self.gp.nugget_bounds.0), fmt_f64(self.gp.nugget_bounds.1)));
        kv.set("gp.max_iter", self.gp.max_iter);
        kv.set("gp.log_targets", self.gp_log_targets);
        kv.set("acq.candidates", self.acquisition.n_candidates);
        kv.set("acq.refine", self.acquisition.n_refine);
        kv.set("acq.min_separation", fmt_f64(self.acquisition.min_separation));
        kv.set("policy", self.policy);
        kv.set("guard", self.guard.name());
        kv.set("seed", self.seed);
        kv.set("rng", RNG_NAME);
        kv
    }

    /// Reads campaign keys, defaulting any that are absent.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = CampaignConfig::default();
        let pair = |key: &str, default: (f64, f64)| -> Result<(f64, f64)> {
            match kv.get(key) {
                None => Ok(default),
                Some(raw) => {
                    let (a, b) = raw
                        .split_once(':')
                        .ok_or_else(|| Error::config(key, format!("expected `lo:hi`, got `{raw}`")))?;
                    let p = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::config(key, format!("bad number `{s}`")));
                    Ok((p(a)?, p(b)?))
                }
            }
        };
        let tau = if let Some(t) = kv.parse_value::<f64>("tau.fixed")? {
            TauPolicy::Fixed(t)
        } else {
            let grid = match kv.get("tau.grid") {
                Some(raw) => raw
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|_| Error::config("tau.grid", format!("bad number `{t}`"))))
                    .collect::<Result<Vec<_>>>()?,
                None => log_spaced(1e-8, 1e2, 25),
            };
            TauPolicy::CrossValidated {
                grid,
                folds: kv.parse_or("tau.folds", 5)?,
                seed: kv.parse_or("tau.seed", 0)?,
            }
        };
        let cv_mode = match kv.get("cv.mode") {
            None => d.cv_mode,
            Some(raw) => CvMode::parse(raw).ok_or_else(|| Error::config("cv.mode", format!("expected `kfold:<k>` or `loo`, got `{raw}`")))?,
        };
        let policy = match kv.get("policy") {
            None => d.policy,
            Some(raw) => Policy::parse(raw).ok_or_else(|| Error::config("policy", format!("unknown policy `{raw}`")))?,
        };
        let guard = match kv.get("guard") {
            None => d.guard,
            Some(raw) => LoopGuard::parse(raw).ok_or_else(|| Error::config("guard", format!("unknown guard `{raw}`")))?,
        };
        if let Some(rng) = kv.get("rng") {
            if rng != RNG_NAME {
                return Err(Error::config("rng", format!("only `{RNG_NAME}` is supported")));
            }
        }
        let cfg = CampaignConfig {
            n_lf_pilot: kv.parse_or("pilot.n_lf", d.n_lf_pilot)?,
            n_hf_pilot: kv.parse_or("pilot.n_hf", d.n_hf_pilot)?,
            budget: kv.parse_or("budget", d.budget)?,
            batch: kv.parse_or("batch", d.batch)?,
            cv_mode,
            cv: CvConfig {
                component: ComponentConfig {
                    rho: kv.parse_or("rho", d.cv.component.rho)?,
                    degree: kv.parse_or("degree", d.cv.component.degree)?,
                    tau,
                },
                retain_exclusive_lf: kv.parse_or("cv.retain_exclusive_lf", d.cv.retain_exclusive_lf)?,
            },
            gp: GpConfig {
                n_starts: kv.parse_or("gp.starts", d.gp.n_starts)?,
                length_bounds: pair("gp.length_bounds", d.gp.length_bounds)?,
                signal_bounds: pair("gp.signal_bounds", d.gp.signal_bounds)?,
                nugget_bounds: pair("gp.nugget_bounds", d.gp.nugget_bounds)?,
                max_iter: kv.parse_or("gp.max_iter", d.gp.max_iter)?,
                seed: 0,
            },
            gp_log_targets: kv.parse_or("gp.log_targets", d.gp_log_targets)?,
            acquisition: AcquisitionConfig {
                n_candidates: kv.parse_or("acq.candidates", d.acquisition.n_candidates)?,
                n_refine: kv.parse_or("acq.refine", d.acquisition.n_refine)?,
                min_separation: kv.parse_or("acq.min_separation", d.acquisition.min_separation)?,
            },
            policy,
            guard,
            seed: kv.parse_or("seed", d.seed)?,
            stop_after_stage: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// GP fit summary of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct GpSummary {
    pub hyper: Hyper,
    pub log_likelihood: f64,
    pub shift: f64,
    pub scale: f64,
}

/// One stage of Algorithm-style active learning: the surrogate after `stage`
/// acquisition rounds, its CV errors and what it chose next.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub n_hf: usize,
    pub n_lf: usize,
    pub cv: CvErrors,
    pub mu: Option<IntegratedError>,
    /// Retained modes and regularization of the first QoI's components.
    pub k_lf: usize,
    pub k_delta: usize,
    pub tau_lf: f64,
    pub tau_delta: f64,
    pub gp: Option<GpSummary>,
    pub acquired: Option<AcquisitionResult>,
    pub wall_seconds: f64,
}

/// Stage records in order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AlHistory {
    pub stages: Vec<StageRecord>,
}

impl AlHistory {
    pub fn final_stage(&self) -> Option<&StageRecord> {
        self.stages.last()
    }

    /// `μ_ε` per stage (`None` without a reference).
    pub fn mu_series(&self) -> Vec<Option<f64>> {
        self.stages.iter().map(|s| s.mu.map(|m| m.mean)).collect()
    }

    /// Deterministic per-stage metrics table (no timings).
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("stage,n_hf,n_lf,cv_mean,cv_missing,mu_eps,mu_se,mu_skipped,k_lf,k_delta,tau_lf,tau_delta,n_acquired,n_fallback\n");
        for s in &self.stages {
            let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
            let n_acq = s.acquired.as_ref().map_or(0, |a| a.len());
            let n_fb = s.acquired.as_ref().map_or(0, |a| a.fallback.iter().filter(|f| **f).count());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                s.stage,
                s.n_hf,
                s.n_lf,
                opt(s.cv.mean()),
                s.cv.n_missing(),
                opt(s.mu.map(|m| m.mean)),
                opt(s.mu.map(|m| m.std_error)),
                s.mu.map_or(String::new(), |m| m.skipped.to_string()),
                s.k_lf,
                s.k_delta,
                fmt_f64(s.tau_lf),
                fmt_f64(s.tau_delta),
                n_acq,
                n_fb
            ));
        }
        out
    }
}

/// Final state of a campaign.
#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub bounds: ParamBounds,
    pub history: AlHistory,
    /// One training set per QoI.
    pub data: Vec<BifidelityData>,
    /// Final surrogate per QoI.
    pub surrogates: Vec<BifidelitySurrogate>,
}

impl CampaignResult {
    /// Normalized HF points added by acquisition (pilot excluded).
    pub fn acquired_points(&self) -> DMatrix<f64> {
        let d = self.data[0].hf().design();
        let n0 = self.config.n_hf_pilot.min(d.nrows());
        d.rows(n0, d.nrows() - n0).into_owned()
    }
}

/// Space-filling pilot: an LHS of LF runs and a maximin subset of it for HF.
pub fn pilot_design(config: &CampaignConfig, n_s: usize) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let lf = latin_hypercube(config.n_lf_pilot, n_s, derive_seed(config.seed, STREAM_PILOT)).points;
    let pairs = maximin_subset(&lf, config.n_hf_pilot)?;
    Ok((lf, pairs))
}

/// Evaluates every QoI of both fidelities at normalized points, in parallel.
pub fn evaluate_points(problem: &dyn Problem, xi: &DMatrix<f64>, hf: bool, lf: bool) -> Result<(Vec<SnapshotSet>, Vec<SnapshotSet>)> {
    let bounds = problem.bounds();
    let grid = problem.grid();
    let runs: Vec<(Vec<_>, Vec<_>)> = (0..xi.nrows())
        .into_par_iter()
        .map(|r| {
            let x: Vec<f64> = xi.row(r).iter().copied().collect();
            let theta = bounds.to_physical(&x);
            let h = if hf { problem.eval_hf_all(&theta)? } else { Vec::new() };
            let l = if lf { problem.eval_lf_all(&theta)? } else { Vec::new() };
            Ok((h, l))
        })
        .collect::<Result<_>>()
        .map_err(|e: Error| match e {
            Error::ModelEvaluation(_) => e,
            other => Error::ModelEvaluation(other.to_string()),
        })?;
    let n_q = problem.n_qoi();
    let collect = |pick: &dyn Fn(&(Vec<crate::grid::Field>, Vec<crate::grid::Field>)) -> &Vec<crate::grid::Field>| -> Result<Vec<SnapshotSet>> {
        (0..n_q)
            .map(|q| {
                let fields: Vec<_> = runs.iter().map(|r| pick(r)[q].clone()).collect();
                SnapshotSet::from_fields(Arc::clone(grid), &fields, xi.clone())
            })
            .collect()
    };
    let hs = if hf { collect(&|r| &r.0)? } else { Vec::new() };
    let ls = if lf { collect(&|r| &r.1)? } else { Vec::new() };
    Ok((hs, ls))
}

/// Runs the models at the pilot design and assembles one data set per QoI.
pub fn pilot_data(problem: &dyn Problem, config: &CampaignConfig) -> Result<Vec<BifidelityData>> {
    let (lf_design, pairs) = pilot_design(config, problem.n_params())?;
    let (_, lf) = evaluate_points(problem, &lf_design, false, true)?;
    let (hf, _) = evaluate_points(problem, &lf_design.select_rows(&pairs), true, false)?;
    lf.into_iter()
        .zip(hf)
        .map(|(l, h)| BifidelityData::new(l, h, pairs.clone(), vec![false; pairs.len()]))
        .collect()
}

/// Builds the stage-`stage` surrogates, computes CV errors and `μ_ε`, and
/// (if `acquire`) fits the GP and picks the next batch.
pub fn evaluate_stage(
    config: &CampaignConfig,
    data: &[BifidelityData],
    bounds: &ParamBounds,
    reference: Option<&ReferenceSet>,
    stage: usize,
    acquire: bool,
) -> Result<(StageRecord, Vec<BifidelitySurrogate>)> {
    let start = Instant::now();
    let surrogates: Vec<BifidelitySurrogate> = data
        .iter()
        .map(|d| d.build(bounds, &config.cv.component))
        .collect::<Result<_>>()?;
    let cv = cv_errors(data, bounds, config.cv_mode, derive_seed(config.seed, STREAM_CV), &config.cv)?;
    let mu = match reference {
        Some(r) => Some(r.integrated_error(&surrogates[0])?),
        None => None,
    };
    let (gp, acquired) = if acquire {
        acquire_batch(config, &cv, stage)?
    } else {
        (None, None)
    };
    let s0 = &surrogates[0];
    let record = StageRecord {
        stage,
        n_hf: data[0].n_pairs(),
        n_lf: data[0].lf().len(),
        cv,
        mu,
        k_lf: s0.lf().n_modes(),
        k_delta: s0.delta().n_modes(),
        tau_lf: s0.lf().pce().tau(),
        tau_delta: s0.delta().pce().tau(),
        gp,
        acquired,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((record, surrogates))
}

fn acquire_batch(config: &CampaignConfig, cv: &CvErrors, stage: usize) -> Result<(Option<GpSummary>, Option<AcquisitionResult>)> {
    let q = config.batch;
    let n_s = cv.design.ncols();
    if config.policy == Policy::Random {
        let points = random_design(q, n_s, derive_seed(config.seed, STREAM_RANDOM + stage as u64)).points;
        let acq = AcquisitionResult {
            points,
            ei: vec![f64::NAN; q],
            incumbents: vec![f64::NAN; q],
            believed: vec![f64::NAN; q],
            fallback: vec![false; q],
        };
        return Ok((None, Some(acq)));
    }
    let (inputs, mut targets) = cv.available();
    if targets.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "stage {stage}: only {} CV errors available for the GP",
            targets.len()
        )));
    }
    if config.gp_log_targets {
        for t in &mut targets {
            *t = t.max(f64::MIN_POSITIVE).ln();
        }
    }
    let gp_cfg = GpConfig {
        seed: derive_seed(config.seed, STREAM_GP + stage as u64),
        ..config.gp.clone()
    };
    let model = fit_gp(&inputs, &targets, &gp_cfg)?;
    let eps_star = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let objective = match config.policy {
        Policy::EiMin => Objective::Minimize,
        _ => Objective::Maximize,
    };
    let acq = kriging_believer_batch(&model, eps_star, q, objective, &config.acquisition)?;
    for (i, fb) in acq.fallback.iter().enumerate() {
        if *fb {
            log::warn!("stage {stage}: EI vanished for pick {i}; took the maximum-variance point");
        }
    }
    let (shift, scale) = model.standardization();
    let summary = GpSummary {
        hyper: model.hyper().clone(),
        log_likelihood: model.log_likelihood(),
        shift,
        scale,
    };
    Ok((Some(summary), Some(acq)))
}

/// Runs a campaign from a model-generated pilot.
pub fn run_campaign(
    config: &CampaignConfig,
    problem: &dyn Problem,
    reference: Option<&ReferenceSet>,
    out: Option<&Path>,
) -> Result<CampaignResult> {
    config.validate()?;
    if let Some(dir) = out {
        ensure_fresh(dir)?;
    }
    let data = pilot_data(problem, config)?;
    drive(config, problem, reference, out, data, AlHistory::default())
}

/// Runs a campaign from externally supplied pilot data (one set per QoI).
pub fn run_campaign_with_pilot(
    config: &CampaignConfig,
    problem: &dyn Problem,
    reference: Option<&ReferenceSet>,
    out: Option<&Path>,
    pilot: Vec<BifidelityData>,
) -> Result<CampaignResult> {
    config.validate()?;
    if pilot.len() != problem.n_qoi() {
        return Err(Error::Pairing(format!("{} pilot QoIs for a problem with {}", pilot.len(), problem.n_qoi())));
    }
    if let Some(dir) = out {
        ensure_fresh(dir)?;
    }
    drive(config, problem, reference, out, pilot, AlHistory::default())
}

/// Continues a campaign persisted in `dir` from its last complete stage.
pub fn resume_campaign(
    config: &CampaignConfig,
    problem: &dyn Problem,
    reference: Option<&ReferenceSet>,
    dir: &Path,
) -> Result<CampaignResult> {
    config.validate()?;
    let saved = CampaignConfig::from_key_values(&KeyValues::read(&dir.join("campaign.meta"))?)?;
    let comparable = CampaignConfig {
        stop_after_stage: None,
        ..config.clone()
    };
    if saved != comparable {
        return Err(Error::config("campaign.meta", "stored configuration differs from the requested one"));
    }
    let (data, history) = load_progress(dir, problem.grid(), problem.bounds(), problem.n_qoi())?;
    if history.stages.is_empty() {
        return Err(Error::data(dir.join("stage_000/stage.meta"), 0, "no complete stage to resume from"));
    }
    drive(config, problem, reference, Some(dir), data, history)
}

fn ensure_fresh(dir: &Path) -> Result<()> {
    if dir.join("stage_000").exists() {
        return Err(Error::config(
            "out",
            format!("{} already holds a campaign; use resume", dir.display()),
        ));
    }
    io::create_dir(dir)
}

fn drive(
    config: &CampaignConfig,
    problem: &dyn Problem,
    reference: Option<&ReferenceSet>,
    out: Option<&Path>,
    mut data: Vec<BifidelityData>,
    mut history: AlHistory,
) -> Result<CampaignResult> {
    let bounds = problem.bounds().clone();
    if let Some(dir) = out {
        config.to_key_values().write(&dir.join("campaign.meta"))?;
        if history.stages.is_empty() {
            save_pilot(dir, &data, &bounds)?;
        }
    }
    let mut surrogates = Vec::new();
    // A resumed history ends with a persisted stage whose acquisitions are still pending.
    let mut pending = history.stages.last().and_then(|s| s.acquired.clone());
    let mut stage = history.stages.len();
    loop {
        if let Some(acq) = pending.take() {
            let (hf, lf) = evaluate_points(problem, &acq.points, true, true)?;
            for (q, d) in data.iter_mut().enumerate() {
                d.push_pair(&lf[q], &hf[q])?;
            }
            if let Some(dir) = out {
                save_added(&stage_dir(dir, stage), &lf, &hf)?;
            }
        } else if stage > 0 {
            break;
        }
        let acquire = config.guard.allows(data[0].n_pairs(), config.batch, config.budget);
        let (record, surr) = evaluate_stage(config, &data, &bounds, reference, stage, acquire)?;
        log::info!(
            "stage {stage}: N_HF={} cv_mean={:?} mu={:?}",
            record.n_hf,
            record.cv.mean(),
            record.mu.map(|m| m.mean)
        );
        if let Some(dir) = out {
            save_stage(&stage_dir(dir, stage), &record, &data, &bounds)?;
        }
        pending = record.acquired.clone();
        history.stages.push(record);
        if let Some(dir) = out {
            io::write_text(&dir.join("metrics.csv"), &history.metrics_csv())?;
        }
        surrogates = surr;
        if config.stop_after_stage == Some(stage) {
            break;
        }
        stage += 1;
        if pending.is_none() {
            break;
        }
    }
    if surrogates.is_empty() {
        surrogates = data
            .iter()
            .map(|d| d.build(&bounds, &config.cv.component))
            .collect::<Result<_>>()?;
    }
    if let Some(dir) = out {
        for (q, s) in surrogates.iter().enumerate() {
            s.save(&dir.join(surrogate_dir_name(q, surrogates.len())))?;
        }
    }
    Ok(CampaignResult {
        config: config.clone(),
        bounds,
        history,
        data,
        surrogates,
    })
}

pub fn surrogate_dir_name(q: usize, n_q: usize) -> String {
    if n_q == 1 {
        "surrogate".into()
    } else {
        format!("surrogate_q{q}")
    }
}

pub fn stage_dir(root: &Path, stage: usize) -> PathBuf {
    root.join(format!("stage_{stage:03}"))
}

fn snapshot_header(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("run_{i}")).collect()
}

fn save_pilot(dir: &Path, data: &[BifidelityData], bounds: &ParamBounds) -> Result<()> {
    let s0 = stage_dir(dir, 0);
    io::create_dir(&s0)?;
    data[0].lf().grid().write_meta(&dir.join("grid.meta"))?;
    for (q, d) in data.iter().enumerate() {
        io::write_matrix_csv(&s0.join(format!("lf_q{q}.csv")), &snapshot_header(d.lf().len()), d.lf().data())?;
        io::write_matrix_csv(&s0.join(format!("hf_q{q}.csv")), &snapshot_header(d.hf().len()), d.hf().data())?;
    }
    write_design_csv(&s0.join("pilot_design_lf.csv"), data[0].lf().design(), bounds)?;
    let d = &data[0];
    let mut pairs = String::from("pair_lf,exclusive\n");
    for (j, e) in d.pair_lf().iter().zip(d.exclusive()) {
        pairs.push_str(&format!("{j},{}\n", u8::from(*e)));
    }
    io::write_text(&s0.join("pairs.csv"), &pairs)
}

fn save_added(dir: &Path, lf: &[SnapshotSet], hf: &[SnapshotSet]) -> Result<()> {
    io::create_dir(dir)?;
    for q in 0..lf.len() {
        io::write_matrix_csv(&dir.join(format!("added_lf_q{q}.csv")), &snapshot_header(lf[q].len()), lf[q].data())?;
        io::write_matrix_csv(&dir.join(format!("added_hf_q{q}.csv")), &snapshot_header(hf[q].len()), hf[q].data())?;
    }
    let header: Vec<String> = (1..=lf[0].n_params()).map(|d| format!("xi_{d}")).collect();
    io::write_matrix_csv(&dir.join("added_design.csv"), &header, lf[0].design())
}

fn save_stage(dir: &Path, r: &StageRecord, data: &[BifidelityData], bounds: &ParamBounds) -> Result<()> {
    io::create_dir(dir)?;
    write_design_csv(&dir.join("design_lf.csv"), data[0].lf().design(), bounds)?;
    write_design_csv(&dir.join("design_hf.csv"), data[0].hf().design(), bounds)?;
    r.cv.write_csv(&dir.join("cv_errors.csv"), bounds)?;
    if let Some(g) = &r.gp {
        let n_s = g.hyper.lengths.len();
        let mut header = vec!["signal_var".to_string()];
        header.extend((1..=n_s).map(|d| format!("length_{d}")));
        header.extend(["nugget", "log_likelihood", "shift", "scale"].map(String::from));
        let mut row = vec![g.hyper.signal_var];
        row.extend(&g.hyper.lengths);
        row.extend([g.hyper.nugget, g.log_likelihood, g.shift, g.scale]);
        io::write_matrix_csv(&dir.join("gp.csv"), &header, &DMatrix::from_row_slice(1, row.len(), &row))?;
    }
    if let Some(a) = &r.acquired {
        io::write_text(&dir.join("acquisition.csv"), &acquisition_csv(a, bounds))?;
        write_design_csv(&dir.join("acquired_design.csv"), &a.points, bounds)?;
    }
    let mut meta = KeyValues::new();
    meta.set("stage", r.stage);
    meta.set("n_hf", r.n_hf);
    meta.set("n_lf", r.n_lf);
    meta.set("cv.k", r.cv.k);
    meta.set("cv.seed", r.cv.seed);
    if let Some(m) = r.mu {
        meta.set("mu.mean", fmt_f64(m.mean));
        meta.set("mu.std_error", fmt_f64(m.std_error));
        meta.set("mu.nodes", m.nodes);
        meta.set("mu.skipped", m.skipped);
    }
    meta.set("k_lf", r.k_lf);
    meta.set("k_delta", r.k_delta);
    meta.set("tau_lf", fmt_f64(r.tau_lf));
    meta.set("tau_delta", fmt_f64(r.tau_delta));
    meta.set("wall_seconds", fmt_f64(r.wall_seconds));
    meta.write(&dir.join("stage.meta"))
}

/// Columns: `index`, `theta_*`, `xi_*`, `ei`, `incumbent`, `believed`, `fallback`.
pub fn acquisition_csv(a: &AcquisitionResult, bounds: &ParamBounds) -> String {
    let n_s = a.points.ncols();
    let mut out = String::from("index");
    for d in 1..=n_s {
        out.push_str(&format!(",theta_{d}"));
    }
    for d in 1..=n_s {
        out.push_str(&format!(",xi_{d}"));
    }
    out.push_str(",ei,incumbent,believed,fallback\n");
    for i in 0..a.len() {
        let xi = a.point(i);
        out.push_str(&i.to_string());
        for v in bounds.to_physical(&xi).into_iter().chain(xi.iter().copied()) {
            out.push(',');
            out.push_str(&fmt_f64(v));
        }
        for v in [a.ei[i], a.incumbents[i], a.believed[i]] {
            out.push(',');
            if v.is_finite() {
                out.push_str(&fmt_f64(v));
            }
        }
        out.push_str(&format!(",{}\n", u8::from(a.fallback[i])));
    }
    out
}

fn read_acquisition(path: &Path, n_s: usize) -> Result<AcquisitionResult> {
    let mut reader = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| Error::data(path, 1, e.to_string()))?;
    let mut rows = Vec::new();
    let (mut ei, mut inc, mut bel, mut fb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 1 + 2 * n_s + 4 {
            return Err(Error::data(path, line, "unexpected column count"));
        }
        for d in 0..n_s {
            rows.push(io::parse_f64(&rec[1 + n_s + d], path, line)?);
        }
        let opt = |raw: &str| -> Result<f64> {
            if raw.is_empty() {
                Ok(f64::NAN)
            } else {
                io::parse_f64(raw, path, line)
            }
        };
        ei.push(opt(&rec[1 + 2 * n_s])?);
        inc.push(opt(&rec[2 + 2 * n_s])?);
        bel.push(opt(&rec[3 + 2 * n_s])?);
        fb.push(&rec[4 + 2 * n_s] == "1");
    }
    Ok(AcquisitionResult {
        points: DMatrix::from_row_slice(ei.len(), n_s, &rows),
        ei,
        incumbents: inc,
        believed: bel,
        fallback: fb,
    })
}

fn read_snapshots(path: &Path, grid: &Arc<Grid>, design: DMatrix<f64>) -> Result<SnapshotSet> {
    let (_, m) = io::read_matrix_csv(path)?;
    if m.nrows() != grid.len() || m.ncols() != design.nrows() {
        return Err(Error::data(
            path,
            1,
            format!("expected {}x{} snapshot matrix, found {}x{}", grid.len(), design.nrows(), m.nrows(), m.ncols()),
        ));
    }
    SnapshotSet::new(Arc::clone(grid), m, design).map_err(|e| Error::data(path, 1, e.to_string()))
}

/// Rebuilds training data and stage records from a campaign directory.
fn load_progress(dir: &Path, grid: &Arc<Grid>, bounds: &ParamBounds, n_q: usize) -> Result<(Vec<BifidelityData>, AlHistory)> {
    let s0 = stage_dir(dir, 0);
    let (lf_design, _) = read_design_csv(&s0.join("pilot_design_lf.csv"))?;
    let (_, pairs) = io::read_matrix_csv(&s0.join("pairs.csv"))?;
    let pair_lf: Vec<usize> = pairs.column(0).iter().map(|v| *v as usize).collect();
    let exclusive: Vec<bool> = pairs.column(1).iter().map(|v| *v != 0.0).collect();
    let hf_design = lf_design.select_rows(&pair_lf);
    let mut data = (0..n_q)
        .map(|q| {
            let lf = read_snapshots(&s0.join(format!("lf_q{q}.csv")), grid, lf_design.clone())?;
            let hf = read_snapshots(&s0.join(format!("hf_q{q}.csv")), grid, hf_design.clone())?;
            BifidelityData::new(lf, hf, pair_lf.clone(), exclusive.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut history = AlHistory::default();
    let n_s = bounds.dim();
    for stage in 0.. {
        let sd = stage_dir(dir, stage);
        if !sd.join("stage.meta").exists() {
            break;
        }
        if stage > 0 {
            let (_, added) = io::read_matrix_csv(&sd.join("added_design.csv"))?;
            for (q, d) in data.iter_mut().enumerate() {
                let lf = read_snapshots(&sd.join(format!("added_lf_q{q}.csv")), grid, added.clone())?;
                let hf = read_snapshots(&sd.join(format!("added_hf_q{q}.csv")), grid, added.clone())?;
                d.push_pair(&lf, &hf)?;
            }
        }
        let meta = KeyValues::read(&sd.join("stage.meta"))?;
        let eps = CvErrors::read_eps(&sd.join("cv_errors.csv"))?;
        let (_, fold_table) = {
            let mut reader = csv::ReaderBuilder::new()
                .from_path(sd.join("cv_errors.csv"))
                .map_err(|e| Error::data(sd.join("cv_errors.csv"), 1, e.to_string()))?;
            let col = reader.headers()?.iter().position(|h| h == "fold").unwrap_or(0);
            let mut folds = Vec::new();
            for rec in reader.records() {
                folds.push(rec?.get(col).unwrap_or("0").parse::<usize>().unwrap_or(0));
            }
            ((), folds)
        };
        let cv = CvErrors {
            errors: eps,
            folds: fold_table,
            k: meta.parse_required("cv.k")?,
            seed: meta.parse_required("cv.seed")?,
            design: data[0].hf().design().clone(),
        };
        let mu = match meta.parse_value::<f64>("mu.mean")? {
            Some(mean) => Some(IntegratedError {
                mean,
                std_error: meta.parse_required("mu.std_error")?,
                nodes: meta.parse_required("mu.nodes")?,
                skipped: meta.parse_required("mu.skipped")?,
            }),
            None => None,
        };
        let gp_path = sd.join("gp.csv");
        let gp = if gp_path.exists() {
            let (_, m) = io::read_matrix_csv(&gp_path)?;
            let r = m.row(0);
            Some(GpSummary {
                hyper: Hyper {
                    signal_var: r[0],
                    lengths: (1..=n_s).map(|d| r[d]).collect(),
                    nugget: r[n_s + 1],
                },
                log_likelihood: r[n_s + 2],
                shift: r[n_s + 3],
                scale: r[n_s + 4],
            })
        } else {
            None
        };
        let acq_path = sd.join("acquisition.csv");
        let acquired = if acq_path.exists() {
            Some(read_acquisition(&acq_path, n_s)?)
        } else {
            None
        };
        history.stages.push(StageRecord {
            stage,
            n_hf: meta.parse_required("n_hf")?,
            n_lf: meta.parse_required("n_lf")?,
            cv,
            mu,
            k_lf: meta.parse_required("k_lf")?,
            k_delta: meta.parse_required("k_delta")?,
            tau_lf: meta.parse_required("tau_lf")?,
            tau_delta: meta.parse_required("tau_delta")?,
            gp,
            acquired,
            wall_seconds: meta.parse_required("wall_seconds")?,
        });
    }
    Ok((data, history))
}

/// Reloads a persisted campaign. The final surrogates are read from the
/// bundle when present and rebuilt from the data otherwise.
pub fn load_campaign(dir: &Path) -> Result<CampaignResult> {
    let config = CampaignConfig::from_key_values(&KeyValues::read(&dir.join("campaign.meta"))?)?;
    let grid = Grid::read_meta(&dir.join("grid.meta"))?;
    let (_, bounds) = read_design_csv(&stage_dir(dir, 0).join("pilot_design_lf.csv"))?;
    let n_q = (0..).take_while(|q| stage_dir(dir, 0).join(format!("lf_q{q}.csv")).exists()).count();
    if n_q == 0 {
        return Err(Error::data(stage_dir(dir, 0), 0, "no pilot snapshots found"));
    }
    let (data, history) = load_progress(dir, &grid, &bounds, n_q)?;
    let surrogates = (0..n_q)
        .map(|q| {
            let path = dir.join(surrogate_dir_name(q, n_q));
            let complete = history.final_stage().is_some_and(|s| s.acquired.is_none());
            if complete && path.join("manifest.meta").exists() {
                BifidelitySurrogate::load(&path)
            } else {
                data[q].build(&bounds, &config.cv.component)
            }
        })
        .collect::<Result<_>>()?;
    Ok(CampaignResult {
        config,
        bounds,
        history,
        data,
        surrogates,
    })
}

/// Per-stage aggregate of one policy over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct StageAggregate {
    pub stage: usize,
    pub n_hf: usize,
    pub mean_mu: Option<f64>,
    pub sd_mu: Option<f64>,
    pub mean_cv: Option<f64>,
    pub n_completed: usize,
}

#[derive(Debug, Clone)]
pub struct PolicySummary {
    pub policy: Policy,
    pub stages: Vec<StageAggregate>,
    /// Final-stage `μ_ε` of each replicate (`None` if it failed or had no reference).
    pub finals: Vec<Option<f64>>,
    /// Replicate histories, `None` where the replicate failed.
    pub runs: Vec<Option<CampaignResult>>,
}

impl PolicySummary {
    pub fn complete(&self) -> bool {
        self.runs.iter().all(Option::is_some)
    }

    /// Mean final `μ_ε` over completed replicates.
    pub fn mean_final(&self) -> Option<f64> {
        let v: Vec<f64> = self.finals.iter().flatten().copied().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateSummary {
    pub replicates: usize,
    pub seed: u64,
    pub policies: Vec<PolicySummary>,
}

impl ReplicateSummary {
    pub fn policy(&self, p: Policy) -> Option<&PolicySummary> {
        self.policies.iter().find(|s| s.policy == p)
    }

    /// Columns: `policy,stage,n_hf,mean_mu,sd_mu,mean_cv,n_completed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy,stage,n_hf,mean_mu,sd_mu,mean_cv,n_completed\n");
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for p in &self.policies {
            for s in &p.stages {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    p.policy,
                    s.stage,
                    s.n_hf,
                    opt(s.mean_mu),
                    opt(s.sd_mu),
                    opt(s.mean_cv),
                    s.n_completed
                ));
            }
        }
        out
    }
}

/// Seed of replicate `r`; shared by every policy so that pilots coincide.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, r as u64 + 1)
}

/// `r` campaigns per policy with derived seeds. Replicate `r` uses the same
/// pilot under every policy. Failed replicates are logged and excluded.
pub fn run_replicates(
    config: &CampaignConfig,
    replicates: usize,
    policies: &[Policy],
    problem: &dyn Problem,
    reference: Option<&ReferenceSet>,
    out: Option<&Path>,
) -> Result<ReplicateSummary> {
    if replicates == 0 {
        return Err(Error::config("replicates", "need at least one replicate"));
    }
    config.validate()?;
    let jobs: Vec<(Policy, usize)> = policies
        .iter()
        .flat_map(|&p| (0..replicates).map(move |r| (p, r)))
        .collect();
    let results: Vec<Option<CampaignResult>> = jobs
        .par_iter()
        .map(|&(policy, r)| {
            let cfg = CampaignConfig {
                policy,
                seed: replicate_seed(config.seed, r),
                ..config.clone()
            };
            let dir = out.map(|d| d.join(policy.name()).join(format!("rep_{r:03}")));
            match run_campaign(&cfg, problem, reference, dir.as_deref()) {
                Ok(res) => Some(res),
                Err(e) => {
                    log::warn!("{policy} replicate {r} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let mut policies_out = Vec::new();
    let mut it = results.into_iter();
    for &policy in policies {
        let runs: Vec<Option<CampaignResult>> = (0..replicates).map(|_| it.next().flatten()).collect();
        let n_stages = runs
            .iter()
            .flatten()
            .map(|r| r.history.stages.len())
            .max()
            .unwrap_or(0);
        let stages = (0..n_stages)
            .map(|s| {
                let recs: Vec<&StageRecord> = runs.iter().flatten().filter_map(|r| r.history.stages.get(s)).collect();
                let mus: Vec<f64> = recs.iter().filter_map(|r| r.mu.map(|m| m.mean)).collect();
                let cvs: Vec<f64> = recs.iter().filter_map(|r| r.cv.mean()).collect();
                let (mean_mu, sd_mu) = mean_sd(&mus);
                StageAggregate {
                    stage: s,
                    n_hf: recs.first().map_or(0, |r| r.n_hf),
                    mean_mu,
                    sd_mu,
                    mean_cv: mean_sd(&cvs).0,
                    n_completed: recs.len(),
                }
            })
            .collect();
        let finals = runs
            .iter()
            .map(|r| r.as_ref().and_then(|r| r.history.final_stage()).and_then(|s| s.mu.map(|m| m.mean)))
            .collect();
        policies_out.push(PolicySummary {
            policy,
            stages,
            finals,
            runs,
        });
    }
    let summary = ReplicateSummary {
        replicates,
        seed: config.seed,
        policies: policies_out,
    };
    if let Some(dir) = out {
        io::write_text(&dir.join("replicates.csv"), &summary.to_csv())?;
    }
    Ok(summary)
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        Some((v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    } else {
        Some(0.0)
    };
    (Some(m), sd)
}

/// Relative errors of one campaign's final surrogate at the other's acquired points.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossPolicyTable {
    /// Normalized test points, one row each.
    pub points: DMatrix<f64>,
    pub errors: Vec<f64>,
    /// Test points dropped because the evaluated campaign also trained on them.
    pub excluded: usize,
}

/// Evaluates `model`'s final surrogate (first QoI) on the HF points that
/// `tests` acquired, excluding points `model` itself trained on.
pub fn cross_policy_test(model: &CampaignResult, tests: &CampaignResult) -> Result<CrossPolicyTable> {
    if model.bounds != tests.bounds {
        return Err(Error::InvalidArgument("campaigns use different parameter bounds".into()));
    }
    let train = model.data[0].hf().design();
    let hf = tests.data[0].hf();
    let n0 = tests.config.n_hf_pilot.min(hf.len());
    let mut keep = Vec::new();
    let mut excluded = 0;
    for i in n0..hf.len() {
        let overlaps = (0..train.nrows()).any(|j| (train.row(j) - hf.design().row(i)).amax() <= 1e-12);
        if overlaps {
            excluded += 1;
        } else {
            keep.push(i);
        }
    }
    let points = hf.design().select_rows(&keep);
    let pred = model.surrogates[0].predict_many_xi(&points)?;
    let grid = hf.grid();
    let errors = keep
        .iter()
        .enumerate()
        .map(|(c, &i)| relative_error(grid, hf.data().column(i).as_slice(), pred.column(c).as_slice()))
        .collect();
    Ok(CrossPolicyTable {
        points,
        errors,
        excluded,
    })
}

/// Equal-width histogram over `[lo, hi]`; returns `(left, right, count)` per bin.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0; bins];
    for &v in values {
        if v.is_finite() && v >= lo && v <= hi {
            let b = if width > 0.0 { (((v - lo) / width) as usize).min(bins - 1) } else { 0 };
            counts[b] += 1;
        }
    }
    (0..bins)
        .map(|b| (lo + b as f64 * width, lo + (b + 1) as f64 * width, counts[b]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossval::Quadrature;
    use crate::models::{PulseCase, PulseProblem};

    fn small(policy: Policy) -> CampaignConfig {
        CampaignConfig {
            n_lf_pilot: 30,
            n_hf_pilot: 4,
            budget: 8,
            batch: 1,
            cv_mode: CvMode::KFold(4),
            policy,
            acquisition: AcquisitionConfig {
                n_candidates: 256,
                ..AcquisitionConfig::default()
            },
            ..CampaignConfig::default()
        }
    }

    fn problem() -> PulseProblem {
        PulseProblem::with_grid(PulseCase::C2, Grid::uniform_1d(64, 0.0, 0.1).unwrap())
    }

    #[test]
    fn loop_guard_readings() {
        assert!(LoopGuard::FullBatches.allows(60, 5, 65));
        assert!(!LoopGuard::FullBatches.allows(61, 5, 65));
        assert!(LoopGuard::AllowOvershoot.allows(64, 5, 65));
        assert!(!LoopGuard::AllowOvershoot.allows(65, 5, 65));
        let c = CampaignConfig::default();
        assert_eq!(c.planned_rounds(), 60);
        let c = CampaignConfig {
            n_lf_pilot: 300,
            n_hf_pilot: 10,
            budget: 50,
            cv_mode: CvMode::KFold(10),
            ..CampaignConfig::default()
        };
        assert_eq!(c.planned_rounds(), 40);
        let c = CampaignConfig {
            budget: 5,
            ..CampaignConfig::default()
        };
        assert_eq!(c.planned_rounds(), 0);
        let c = CampaignConfig {
            budget: 12,
            batch: 5,
            ..CampaignConfig::default()
        };
        assert_eq!(c.planned_rounds(), 1);
        let c = CampaignConfig {
            guard: LoopGuard::AllowOvershoot,
            ..c
        };
        assert_eq!(c.planned_rounds(), 2);
    }

    #[test]
    fn validation_names_keys() {
        let bad = CampaignConfig {
            budget: 3,
            ..small(Policy::EiMax)
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "budget"));
        let bad = CampaignConfig {
            cv_mode: CvMode::KFold(5),
            ..small(Policy::EiMax)
        };
        assert!(matches!(bad.validate(), Err(Error::Config { key, .. }) if key == "cv.mode"));
    }

    #[test]
    fn config_key_values_round_trip() {
        let c = CampaignConfig {
            gp_log_targets: true,
            guard: LoopGuard::AllowOvershoot,
            cv_mode: CvMode::Loo,
            ..small(Policy::EiMin)
        };
        assert_eq!(CampaignConfig::from_key_values(&c.to_key_values()).unwrap(), c);
        let fixed = CampaignConfig {
            cv: CvConfig {
                component: ComponentConfig {
                    tau: TauPolicy::Fixed(1e-3),
                    ..ComponentConfig::default()
                },
                retain_exclusive_lf: true,
            },
            ..small(Policy::Random)
        };
        assert_eq!(CampaignConfig::from_key_values(&fixed.to_key_values()).unwrap(), fixed);
    }

    #[test]
    fn zero_rounds_when_budget_equals_pilot() {
        let c = CampaignConfig {
            budget: 4,
            ..small(Policy::EiMax)
        };
        let r = run_campaign(&c, &problem(), None, None).unwrap();
        assert_eq!(r.history.stages.len(), 1);
        assert!(r.history.stages[0].acquired.is_none());
    }

    #[test]
    fn campaign_bookkeeping() {
        for policy in Policy::ALL {
            let r = run_campaign(&small(policy), &problem(), None, None).unwrap();
            let h = &r.history;
            assert_eq!(h.stages.len(), 5);
            for (l, s) in h.stages.iter().enumerate() {
                assert_eq!(s.stage, l);
                assert_eq!(s.n_hf, 4 + l);
                assert_eq!(s.n_lf, 30 + l);
                assert_eq!(s.acquired.is_some(), l < 4);
                assert_eq!(s.gp.is_some(), l < 4 && policy != Policy::Random);
            }
            let d = &r.data[0];
            assert_eq!(d.n_pairs(), 8);
            // Every HF point has an LF run at the same design point.
            for (i, &j) in d.pair_lf().iter().enumerate() {
                assert_eq!(d.hf().design().row(i), d.lf().design().row(j));
            }
            assert!(r.acquired_points().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn batches_respect_budget() {
        let c = CampaignConfig {
            budget: 13,
            batch: 3,
            ..small(Policy::EiMax)
        };
        let r = run_campaign(&c, &problem(), None, None).unwrap();
        assert_eq!(r.data[0].n_pairs(), 13);
        let c = CampaignConfig { budget: 12, ..c };
        let r = run_campaign(&c, &problem(), None, None).unwrap();
        assert_eq!(r.data[0].n_pairs(), 10);
        let c = CampaignConfig {
            guard: LoopGuard::AllowOvershoot,
            ..c
        };
        let r = run_campaign(&c, &problem(), None, None).unwrap();
        assert_eq!(r.data[0].n_pairs(), 13);
    }

    #[test]
    fn reference_is_tracked() {
        let p = problem();
        let reference = ReferenceSet::build(&p, Quadrature::Grid { per_dim: 10 }).unwrap();
        let r = run_campaign(&small(Policy::EiMax), &p, Some(&reference), None).unwrap();
        let direct = reference.integrated_error(&r.surrogates[0]).unwrap();
        assert_eq!(r.history.final_stage().unwrap().mu, Some(direct));
        assert!(r.history.mu_series().iter().all(|m| m.is_some()));
    }

    #[test]
    fn deterministic_and_resumable() {
        let p = problem();
        let reference = ReferenceSet::build(&p, Quadrature::MonteCarlo { samples: 50, seed: 2 }).unwrap();
        let c = small(Policy::EiMax);
        let full_dir = tempfile::tempdir().unwrap();
        let a = run_campaign(&c, &p, Some(&reference), Some(full_dir.path())).unwrap();
        let b = run_campaign(&c, &p, Some(&reference), None).unwrap();
        assert_eq!(a.history.metrics_csv(), b.history.metrics_csv());

        let part = tempfile::tempdir().unwrap();
        let stop = CampaignConfig {
            stop_after_stage: Some(1),
            ..c.clone()
        };
        let half = run_campaign(&stop, &p, Some(&reference), Some(part.path())).unwrap();
        assert_eq!(half.history.stages.len(), 2);
        assert!(run_campaign(&c, &p, Some(&reference), Some(part.path())).is_err());
        let resumed = resume_campaign(&c, &p, Some(&reference), part.path()).unwrap();
        assert_eq!(resumed.history.metrics_csv(), a.history.metrics_csv());
        let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
        assert_eq!(read(part.path()), read(full_dir.path()));
        for s in 0..5 {
            let f = |d: &Path| std::fs::read(stage_dir(d, s).join("cv_errors.csv")).unwrap();
            assert_eq!(f(part.path()), f(full_dir.path()));
        }
        assert_eq!(resumed.data, a.data);
        let loaded = load_campaign(full_dir.path()).unwrap();
        assert_eq!(loaded.data, a.data);
        assert_eq!(loaded.history.metrics_csv(), a.history.metrics_csv());
        let xi = [0.1, -0.3];
        assert_eq!(loaded.surrogates[0].predict_xi(&xi).unwrap(), a.surrogates[0].predict_xi(&xi).unwrap());

        let other = CampaignConfig { seed: 9, ..c };
        assert!(matches!(
            resume_campaign(&other, &p, Some(&reference), part.path()),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn replicates_aggregate() {
        let p = problem();
        let reference = ReferenceSet::build(&p, Quadrature::Grid { per_dim: 8 }).unwrap();
        let c = CampaignConfig {
            budget: 6,
            ..small(Policy::EiMax)
        };
        let one = run_replicates(&c, 1, &[Policy::EiMax], &p, Some(&reference), None).unwrap();
        let single = run_campaign(
            &CampaignConfig {
                seed: replicate_seed(0, 0),
                ..c.clone()
            },
            &p,
            Some(&reference),
            None,
        )
        .unwrap();
        let s = &one.policies[0];
        assert_eq!(s.mean_final(), single.history.final_stage().unwrap().mu.map(|m| m.mean));
        assert_eq!(s.stages.len(), 3);
        assert!(s.complete());

        let three = run_replicates(&c, 3, &[Policy::Random, Policy::EiMax], &p, Some(&reference), None).unwrap();
        let again = run_replicates(&c, 3, &[Policy::Random, Policy::EiMax], &p, Some(&reference), None).unwrap();
        assert_eq!(three.to_csv(), again.to_csv());
        // Replicates share pilots across policies.
        let a = three.policy(Policy::Random).unwrap().runs[1].as_ref().unwrap();
        let b = three.policy(Policy::EiMax).unwrap().runs[1].as_ref().unwrap();
        assert_eq!(a.history.stages[0].cv, b.history.stages[0].cv);
    }

    #[test]
    fn cross_policy_table() {
        let p = problem();
        let a = run_campaign(&small(Policy::EiMax), &p, None, None).unwrap();
        let b = run_campaign(&small(Policy::Random), &p, None, None).unwrap();
        let same = cross_policy_test(&a, &a).unwrap();
        assert!(same.errors.is_empty());
        assert_eq!(same.excluded, 4);
        let t = cross_policy_test(&a, &b).unwrap();
        assert_eq!(t.errors.len() + t.excluded, 4);
        for (i, e) in t.errors.iter().enumerate() {
            let xi: Vec<f64> = t.points.row(i).iter().copied().collect();
            let truth = p.eval_hf(&p.bounds().to_physical(&xi)).unwrap();
            let pred = a.surrogates[0].predict_xi(&xi).unwrap();
            let r = relative_error(p.grid(), truth.values(), pred.values());
            assert!((r - e).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_counts() {
        let h = histogram(&[0.0, 0.1, 0.5, 0.99, 1.0, 2.0], 2, 0.0, 1.0);
        assert_eq!(h, vec![(0.0, 0.5, 2), (0.5, 1.0, 3)]);
    }
}
