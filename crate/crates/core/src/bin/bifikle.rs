use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bifikle::config::{ProblemSpec, RunConfig, RunManifest};
use bifikle::design::derive_seed;
use bifikle::driver::{resume_campaign, run_campaign, run_campaign_with_pilot, run_replicates, stage_dir, CampaignResult, Policy};
use bifikle::error::{Error, Result};
use bifikle::ingest::{export_model_runs, read_any_design, Bundle, IngestSources};
use bifikle::io;
use bifikle::pce::ParamBounds;
use bifikle::report::{uq_study, write_report};
use bifikle::surrogate::BifidelitySurrogate;

#[derive(Parser)]
#[command(name = "bifikle", version, about = "Bifidelity KLE surrogates with active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    policy: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one active-learning campaign.
    Run {
        #[command(flatten)]
        campaign: CampaignArgs,
        /// Continue the campaign already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run replicate campaigns for each configured policy.
    Replicates {
        #[command(flatten)]
        campaign: CampaignArgs,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Validate external runs and write a snapshot bundle.
    Ingest {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        lf_design: PathBuf,
        #[arg(long)]
        hf_design: PathBuf,
        #[arg(long)]
        snapshots: PathBuf,
        /// Parameter bounds as `lo:hi` tokens, for physical designs.
        #[arg(long, num_args = 1..)]
        bounds: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
        /// Add the runs to the bundle already in the output directory.
        #[arg(long)]
        append: bool,
    },
    /// Emit plot-ready data for a campaign directory.
    Report {
        campaign: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// A competing campaign for the cross-policy test histogram.
        #[arg(long)]
        against: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Built-in model utilities.
    Models {
        #[command(subcommand)]
        command: ModelsCommand,
    },
    /// Forward uncertainty propagation through a saved surrogate.
    Uq {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Fidelity {
    Hf,
    Lf,
    Both,
}

#[derive(Subcommand)]
enum ModelsCommand {
    /// Evaluate the configured model at every row of a design CSV.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        design: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Fidelity::Both)]
        fidelity: Fidelity,
    },
}

fn load_config(args: &CampaignArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::read(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.campaign.seed = seed;
    }
    if let Some(raw) = &args.policy {
        let p = Policy::parse(raw).ok_or_else(|| Error::InvalidArgument(format!("unknown policy `{raw}`")))?;
        cfg.campaign.policy = p;
        cfg.policies = vec![p];
    }
    if let Some(out) = &args.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.out
        .clone()
        .ok_or_else(|| Error::InvalidArgument("no output directory: set `out` or pass --out".into()))
}

fn print_final(result: &CampaignResult) {
    if let Some(s) = result.history.final_stage() {
        let mu = s.mu.map_or("n/a".to_string(), |m| format!("{:.6e}", m.mean));
        let cv = s.cv.mean().map_or("n/a".to_string(), |m| format!("{m:.6e}"));
        println!("stage {}: N_HF = {}, mean CV error = {cv}, mu_eps = {mu}", s.stage, s.n_hf);
    }
}

fn cmd_run(args: &CampaignArgs, resume: bool) -> Result<()> {
    let cfg = load_config(args)?;
    let out = out_dir(&cfg)?;
    let problem = cfg.problem.build()?;
    let manifest = RunManifest::new(&cfg)?;
    let manifest_path = out.join("run.manifest");
    if resume {
        RunManifest::read(&manifest_path)?.verify_resume(&manifest)?;
    } else {
        io::create_dir(&out)?;
        if stage_dir(&out, 0).exists() {
            return Err(Error::InvalidArgument(format!("{} already holds a campaign; pass --resume", out.display())));
        }
        manifest.write(&manifest_path)?;
    }
    let reference = cfg.reference_set(problem.as_ref(), Some(&out))?;
    let outcome = if resume {
        resume_campaign(&cfg.campaign, problem.as_ref(), reference.as_ref(), &out)
    } else if let ProblemSpec::External { bundle } = &cfg.problem {
        let pilot = Bundle::read(bundle)?.to_data()?;
        run_campaign_with_pilot(&cfg.campaign, problem.as_ref(), None, Some(&out), pilot)
    } else {
        run_campaign(&cfg.campaign, problem.as_ref(), reference.as_ref(), Some(&out))
    };
    match outcome {
        Ok(result) => {
            print_final(&result);
            Ok(())
        }
        Err(Error::ModelEvaluation(msg)) if !cfg.problem.has_oracle() => {
            eprintln!("evaluate the points in the latest stage's acquisition.csv, ingest them with --append, then rerun with --resume");
            Err(Error::ModelEvaluation(msg))
        }
        Err(e) => Err(e),
    }
}

fn cmd_replicates(args: &CampaignArgs, replicates: Option<usize>) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    if !cfg.problem.has_oracle() {
        return Err(Error::config("problem", "replicates need a built-in model"));
    }
    let out = out_dir(&cfg)?;
    io::create_dir(&out)?;
    RunManifest::new(&cfg)?.write(&out.join("run.manifest"))?;
    let problem = cfg.problem.build()?;
    let reference = cfg.reference_set(problem.as_ref(), Some(&out))?;
    let summary = run_replicates(&cfg.campaign, cfg.replicates, &cfg.policies, problem.as_ref(), reference.as_ref(), Some(&out))?;
    for p in &summary.policies {
        let mean = p.mean_final().map_or("n/a".to_string(), |m| format!("{m:.6e}"));
        let done = p.runs.iter().filter(|r| r.is_some()).count();
        println!("{}: final mean mu_eps = {mean} ({done}/{} replicates)", p.policy, summary.replicates);
    }
    Ok(())
}

fn cmd_ingest(sources: IngestSources, out: &Path, append: bool) -> Result<()> {
    let mut sources = sources;
    let existing = out.join("bundle.meta");
    if append {
        let mut bundle = Bundle::read(out)?;
        if sources.bounds.is_none() {
            sources.bounds = Some(bundle.bounds().clone());
        }
        bundle.append(&Bundle::ingest(&sources)?)?;
        bundle.write(out)?;
        println!("bundle now holds {} LF and {} HF runs", bundle.n_lf(), bundle.n_hf());
        return Ok(());
    }
    if existing.exists() {
        return Err(Error::InvalidArgument(format!("{} already holds a bundle; pass --append", out.display())));
    }
    let bundle = Bundle::ingest(&sources)?;
    bundle.write(out)?;
    println!(
        "ingested {} LF and {} HF runs of QoIs {:?}",
        bundle.n_lf(),
        bundle.n_hf(),
        bundle.qois()
    );
    Ok(())
}

fn cmd_models_eval(config: &Path, design: &Path, out: &Path, fidelity: Fidelity) -> Result<()> {
    let cfg = RunConfig::read(config)?;
    if !cfg.problem.has_oracle() {
        return Err(Error::config("problem", "external problems cannot be evaluated"));
    }
    let problem = cfg.problem.build()?;
    let (points, bounds, _) = read_any_design(design, Some(problem.bounds()))?;
    if bounds != *problem.bounds() {
        return Err(Error::data(design, 1, "design bounds differ from the model's"));
    }
    let (hf, lf) = match fidelity {
        Fidelity::Hf => (true, false),
        Fidelity::Lf => (false, true),
        Fidelity::Both => (true, true),
    };
    export_model_runs(problem.as_ref(), &points, hf, lf, out)?;
    println!("evaluated {} runs into {}", points.nrows(), out.display());
    Ok(())
}

fn cmd_uq(config: &Path, surrogate: &Path, out: &Path, samples: Option<usize>, seed: Option<u64>) -> Result<()> {
    let cfg = RunConfig::read(config)?;
    let surr = BifidelitySurrogate::load(surrogate)?;
    let problem = if cfg.problem.has_oracle() {
        Some(cfg.problem.build()?)
    } else {
        None
    };
    let m = samples.unwrap_or(cfg.uq_samples);
    let seed = derive_seed(seed.unwrap_or(cfg.campaign.seed), u64::MAX);
    let study = uq_study(&surr, problem.as_deref(), m, seed)?;
    io::write_text(&out.join("uq_bands.csv"), &study.bands_csv())?;
    study.summary().write(&out.join("uq_summary.meta"))?;
    if let (Some(b), Some(l)) = (study.bf_to_hf, study.lf_to_hf) {
        println!("distance of mean to HF mean: bifidelity {b:.6e}, low fidelity {l:.6e}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { campaign, resume } => cmd_run(&campaign, resume),
        Command::Replicates { campaign, replicates } => cmd_replicates(&campaign, replicates),
        Command::Ingest {
            grid,
            lf_design,
            hf_design,
            snapshots,
            bounds,
            out,
            append,
        } => {
            let bounds = match bounds {
                Some(tokens) => Some(ParamBounds::from_tokens(&tokens).map_err(|e| Error::config("bounds", e.to_string()))?),
                None => None,
            };
            let sources = IngestSources {
                grid_meta: grid,
                lf_design,
                hf_design,
                snapshots,
                bounds,
            };
            cmd_ingest(sources, &out, append)
        }
        Command::Report {
            campaign,
            out,
            against,
            samples,
        } => {
            let out = out.unwrap_or_else(|| campaign.join("report"));
            let summary = write_report(&campaign, &out, against.as_deref(), samples)?;
            if !summary.corrupt.is_empty() {
                eprintln!("skipped corrupt stages: {:?}", summary.corrupt);
            }
            println!("wrote {} files to {}", summary.files.len(), out.display());
            Ok(())
        }
        Command::Models {
            command: ModelsCommand::Eval {
                config,
                design,
                out,
                fidelity,
            },
        } => cmd_models_eval(&config, &design, &out, fidelity),
        Command::Uq {
            config,
            surrogate,
            out,
            samples,
            seed,
        } => cmd_uq(&config, &surrogate, &out, samples, seed),
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("BIFIKLE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config("BIFIKLE_THREADS", format!("expected a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config("BIFIKLE_THREADS", e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| dispatch(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
