//! Run configuration files: flat `key = value` text with dotted section keys.
//!
//! ```text
//! problem = pulse_c2
//! pilot.n_lf = 200
//! pilot.n_hf = 5
//! budget = 65
//! cv.mode = kfold:5
//! reference = grid:200
//! ```

use std::path::{Path, PathBuf};

use crate::crossval::{Quadrature, ReferenceSet};
use crate::design::RNG_NAME;
use crate::driver::{CampaignConfig, Policy};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::ingest::{Bundle, ExternalProblem};
use crate::io::{self, KeyValues};
use crate::models::{ConvDiffProblem, Problem, PulseCase, PulseProblem};

const PROBLEM_KEYS: &[&str] = &[
    "problem",
    "pulse.points",
    "pulse.series_replaces_sine",
    "convdiff.hf_n",
    "convdiff.lf_n",
    "external.bundle",
    "reference",
    "reference.cache",
    "replicates",
    "policies",
    "out",
    "uq.samples",
];

const CAMPAIGN_KEYS: &[&str] = &[
    "pilot.n_lf",
    "pilot.n_hf",
    "budget",
    "batch",
    "cv.mode",
    "cv.retain_exclusive_lf",
    "rho",
    "degree",
    "tau.fixed",
    "tau.grid",
    "tau.folds",
    "tau.seed",
    "gp.starts",
    "gp.length_bounds",
    "gp.signal_bounds",
    "gp.nugget_bounds",
    "gp.max_iter",
    "gp.log_targets",
    "acq.candidates",
    "acq.refine",
    "acq.min_separation",
    "policy",
    "guard",
    "seed",
    "rng",
];

/// Which model pair a run uses.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Pulse {
        case: PulseCase,
        points: usize,
        series_replaces_sine: bool,
    },
    ConvDiff {
        hf_n: usize,
        lf_n: usize,
    },
    /// Runs ingested from outside; new points must be ingested before resuming.
    External {
        bundle: PathBuf,
    },
}

impl ProblemSpec {
    pub fn id(&self) -> &'static str {
        match self {
            ProblemSpec::Pulse { case: PulseCase::C1, .. } => "pulse_c1",
            ProblemSpec::Pulse { case: PulseCase::C2, .. } => "pulse_c2",
            ProblemSpec::ConvDiff { .. } => "convdiff",
            ProblemSpec::External { .. } => "external",
        }
    }

    pub fn build(&self) -> Result<Box<dyn Problem>> {
        Ok(match self {
            ProblemSpec::Pulse {
                case,
                points,
                series_replaces_sine,
            } => {
                let grid = Grid::uniform_1d(*points, 0.0, 0.1).map_err(|e| Error::config("pulse.points", e.to_string()))?;
                Box::new(PulseProblem::with_grid(*case, grid).series_replaces_sine(*series_replaces_sine))
            }
            ProblemSpec::ConvDiff { hf_n, lf_n } => {
                Box::new(ConvDiffProblem::new(*hf_n, *lf_n).map_err(|e| Error::config("convdiff.hf_n", e.to_string()))?)
            }
            ProblemSpec::External { bundle } => Box::new(ExternalProblem::new(Bundle::read(bundle)?)),
        })
    }

    /// Whether the HF model can be queried anywhere, so `μ_ε` is available.
    pub fn has_oracle(&self) -> bool {
        !matches!(self, ProblemSpec::External { .. })
    }
}

/// Where `μ_ε` is sampled; `None` skips it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceSpec {
    None,
    Rule(Quadrature),
}

impl ReferenceSpec {
    /// `none`, `grid:<per_dim>` or `mc:<samples>[:<seed>]`.
    pub fn parse(raw: &str) -> Option<Self> {
        let parts: Vec<&str> = raw.trim().split(':').collect();
        match parts.as_slice() {
            ["none"] => Some(ReferenceSpec::None),
            ["grid", n] => Some(ReferenceSpec::Rule(Quadrature::Grid { per_dim: n.parse().ok()? })),
            ["mc", n] => Some(ReferenceSpec::Rule(Quadrature::MonteCarlo {
                samples: n.parse().ok()?,
                seed: 0,
            })),
            ["mc", n, s] => Some(ReferenceSpec::Rule(Quadrature::MonteCarlo {
                samples: n.parse().ok()?,
                seed: s.parse().ok()?,
            })),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            ReferenceSpec::None => "none".into(),
            ReferenceSpec::Rule(Quadrature::Grid { per_dim }) => format!("grid:{per_dim}"),
            ReferenceSpec::Rule(Quadrature::MonteCarlo { samples, seed }) => format!("mc:{samples}:{seed}"),
        }
    }
}

/// A parsed configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub reference: ReferenceSpec,
    /// Store the reference truth under the output directory for reuse.
    pub cache_reference: bool,
    pub campaign: CampaignConfig,
    pub replicates: usize,
    pub policies: Vec<Policy>,
    pub out: Option<PathBuf>,
    pub uq_samples: usize,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_key_values(&kv, base)
    }

    /// Relative paths resolve against `base`.
    pub fn from_key_values(kv: &KeyValues, base: &Path) -> Result<Self> {
        for key in kv.keys() {
            if !PROBLEM_KEYS.contains(&key) && !CAMPAIGN_KEYS.contains(&key) {
                return Err(Error::config(key, "unknown key"));
            }
        }
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let problem = match kv.require("problem")? {
            id @ ("pulse_c1" | "pulse_c2") => ProblemSpec::Pulse {
                case: if id == "pulse_c1" { PulseCase::C1 } else { PulseCase::C2 },
                points: kv.parse_or("pulse.points", 256)?,
                series_replaces_sine: kv.parse_or("pulse.series_replaces_sine", false)?,
            },
            "convdiff" => ProblemSpec::ConvDiff {
                hf_n: kv.parse_or("convdiff.hf_n", 128)?,
                lf_n: kv.parse_or("convdiff.lf_n", 32)?,
            },
            "external" => ProblemSpec::External {
                bundle: resolve(kv.require("external.bundle")?),
            },
            other => {
                return Err(Error::config(
                    "problem",
                    format!("unknown problem `{other}`; expected pulse_c1, pulse_c2, convdiff or external"),
                ))
            }
        };
        let default_reference = match problem {
            ProblemSpec::Pulse { .. } => ReferenceSpec::Rule(Quadrature::Grid { per_dim: 200 }),
            ProblemSpec::ConvDiff { .. } => ReferenceSpec::Rule(Quadrature::MonteCarlo { samples: 1000, seed: 0 }),
            ProblemSpec::External { .. } => ReferenceSpec::None,
        };
        let reference = match kv.get("reference") {
            None => default_reference,
            Some(raw) => ReferenceSpec::parse(raw)
                .ok_or_else(|| Error::config("reference", format!("expected none, grid:<n> or mc:<n>[:<seed>], got `{raw}`")))?,
        };
        if reference != ReferenceSpec::None && !problem.has_oracle() {
            return Err(Error::config("reference", "external problems have no oracle; use `none`"));
        }
        let policies = match kv.get("policies") {
            None => Policy::ALL.to_vec(),
            Some(raw) => raw
                .split_whitespace()
                .map(|p| Policy::parse(p).ok_or_else(|| Error::config("policies", format!("unknown policy `{p}`"))))
                .collect::<Result<_>>()?,
        };
        let replicates = kv.parse_or("replicates", 1)?;
        if replicates == 0 {
            return Err(Error::config("replicates", "must be at least 1"));
        }
        Ok(RunConfig {
            cache_reference: kv.parse_or("reference.cache", matches!(problem, ProblemSpec::ConvDiff { .. }))?,
            problem,
            reference,
            campaign: CampaignConfig::from_key_values(kv)?,
            replicates,
            policies,
            out: kv.get("out").map(resolve),
            uq_samples: kv.parse_or("uq.samples", 2000)?,
        })
    }

    /// Canonical text of every setting, used for the config hash.
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("problem", self.problem.id());
        match &self.problem {
            ProblemSpec::Pulse {
                points,
                series_replaces_sine,
                ..
            } => {
                kv.set("pulse.points", points);
                kv.set("pulse.series_replaces_sine", series_replaces_sine);
            }
            ProblemSpec::ConvDiff { hf_n, lf_n } => {
                kv.set("convdiff.hf_n", hf_n);
                kv.set("convdiff.lf_n", lf_n);
            }
            ProblemSpec::External { bundle } => kv.set("external.bundle", bundle.display()),
        }
        kv.set("reference", self.reference.render());
        kv.set("reference.cache", self.cache_reference);
        kv.set("replicates", self.replicates);
        let names: Vec<&str> = self.policies.iter().map(|p| p.name()).collect();
        kv.set("policies", names.join(" "));
        kv.set("uq.samples", self.uq_samples);
        let campaign = self.campaign.to_key_values();
        for key in campaign.keys() {
            kv.set(key, campaign.get(key).unwrap_or_default());
        }
        kv
    }

    /// Builds (or reloads from `cache`) the `μ_ε` reference, if any.
    pub fn reference_set(&self, problem: &dyn Problem, cache: Option<&Path>) -> Result<Option<ReferenceSet>> {
        let ReferenceSpec::Rule(rule) = self.reference else {
            return Ok(None);
        };
        if let Some(dir) = cache.filter(|_| self.cache_reference) {
            let tag = self.reference.render().replace(':', "_");
            let dir = dir.join(format!("reference_{tag}"));
            if dir.join("reference.meta").exists() {
                return ReferenceSet::load(&dir, problem.grid()).map(Some);
            }
            let r = ReferenceSet::build(problem, rule)?;
            r.save(&dir)?;
            return Ok(Some(r));
        }
        ReferenceSet::build(problem, rule).map(Some)
    }
}

/// Provenance written next to campaign outputs and checked on resume.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub rng: String,
    /// `(file, digest)` of every input read.
    pub inputs: Vec<(String, String)>,
    pub started_unix: u64,
}

impl RunManifest {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let mut inputs = Vec::new();
        if let ProblemSpec::External { bundle } = &config.problem {
            let path = bundle.join("bundle.meta");
            inputs.push((path.display().to_string(), io::file_digest(&path)?));
        }
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: io::digest(config.to_key_values().render().as_bytes()),
            rng: RNG_NAME.to_string(),
            inputs,
            started_unix,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut kv = KeyValues::new();
        kv.set("tool_version", &self.tool_version);
        kv.set("config_hash", &self.config_hash);
        kv.set("rng", &self.rng);
        kv.set("inputs", self.inputs.len());
        for (i, (file, digest)) in self.inputs.iter().enumerate() {
            kv.set(&format!("input.{i}.path"), file);
            kv.set(&format!("input.{i}.digest"), digest);
        }
        kv.set("started_unix", self.started_unix);
        kv.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let kv = KeyValues::read(path)?;
        let n: usize = kv.parse_required("inputs")?;
        let inputs = (0..n)
            .map(|i| {
                Ok((
                    kv.require(&format!("input.{i}.path"))?.to_string(),
                    kv.require(&format!("input.{i}.digest"))?.to_string(),
                ))
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            tool_version: kv.require("tool_version")?.to_string(),
            config_hash: kv.require("config_hash")?.to_string(),
            rng: kv.require("rng")?.to_string(),
            inputs,
            started_unix: kv.parse_required("started_unix")?,
        })
    }

    /// Checks that a resumed run uses the same configuration. Input digests
    /// may differ only for external bundles, which grow between resumes.
    pub fn verify_resume(&self, current: &RunManifest) -> Result<()> {
        if self.config_hash != current.config_hash {
            return Err(Error::config("config", "configuration changed since the run started"));
        }
        if self.rng != current.rng {
            return Err(Error::config("rng", format!("run used `{}`", self.rng)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        RunConfig::from_key_values(&KeyValues::parse(text, Path::new("cfg")).unwrap(), Path::new("/base"))
    }

    #[test]
    fn missing_problem_is_named() {
        match parse("budget = 10\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "problem"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        match parse("problem = pulse_c2\nbudgte = 10\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "budgte"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn defaults_per_problem() {
        let c = parse("problem = pulse_c2\n").unwrap();
        assert_eq!(c.reference, ReferenceSpec::Rule(Quadrature::Grid { per_dim: 200 }));
        assert_eq!(c.campaign, CampaignConfig::default());
        assert_eq!(c.policies, Policy::ALL.to_vec());
        let c = parse("problem = convdiff\npilot.n_lf = 300\npilot.n_hf = 10\nbudget = 50\ncv.mode = kfold:10\n").unwrap();
        assert_eq!(c.reference, ReferenceSpec::Rule(Quadrature::MonteCarlo { samples: 1000, seed: 0 }));
        assert!(c.cache_reference);
        assert_eq!(c.campaign.planned_rounds(), 40);
        let c = parse("problem = external\nexternal.bundle = runs\n").unwrap();
        assert_eq!(c.problem, ProblemSpec::External { bundle: PathBuf::from("/base/runs") });
        assert_eq!(c.reference, ReferenceSpec::None);
        assert!(parse("problem = external\nexternal.bundle = runs\nreference = grid:10\n").is_err());
    }

    #[test]
    fn canonical_form_round_trips() {
        let c = parse("problem = pulse_c1\npulse.series_replaces_sine = true\nreference = mc:50:3\npolicies = random ei_max\nseed = 7\n").unwrap();
        let again = RunConfig::from_key_values(&c.to_key_values(), Path::new("/base")).unwrap();
        assert_eq!(again, c);
        for raw in ["none", "grid:20", "mc:10:4"] {
            assert_eq!(ReferenceSpec::parse(raw).unwrap().render(), raw);
        }
    }

    #[test]
    fn manifest_round_trip_and_resume_check() {
        let c = parse("problem = pulse_c2\n").unwrap();
        let m = RunManifest::new(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.write(&dir.path().join("m.meta")).unwrap();
        let back = RunManifest::read(&dir.path().join("m.meta")).unwrap();
        assert_eq!(back, m);
        back.verify_resume(&RunManifest::new(&c).unwrap()).unwrap();
        let other = parse("problem = pulse_c2\nseed = 1\n").unwrap();
        assert!(back.verify_resume(&RunManifest::new(&other).unwrap()).is_err());
    }
}
