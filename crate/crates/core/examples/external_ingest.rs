//! Externally produced runs: export, ingest into a bundle, and start a
//! campaign whose new points must be supplied from outside.

use bifikle::design::{latin_hypercube, maximin_subset};
use bifikle::driver::{run_campaign_with_pilot, stage_dir, CampaignConfig};
use bifikle::error::Error;
use bifikle::ingest::{export_model_runs, Bundle, ExternalProblem, IngestSources};
use bifikle::models::{PulseCase, PulseProblem};

fn main() -> bifikle::error::Result<()> {
    let root = std::env::temp_dir().join("bifikle_external");
    let _ = std::fs::remove_dir_all(&root);
    let solver = PulseProblem::new(PulseCase::C2);

    let lf_design = latin_hypercube(40, 2, 2).points;
    let pairs = maximin_subset(&lf_design, 6)?;
    let runs = root.join("runs");
    export_model_runs(&solver, &lf_design, false, true, &runs)?;
    let hf_runs = root.join("hf_runs");
    export_model_runs(&solver, &lf_design.select_rows(&pairs), true, false, &hf_runs)?;
    for entry in std::fs::read_dir(&hf_runs).map_err(|e| Error::InvalidArgument(e.to_string()))? {
        let path = entry.map_err(|e| Error::InvalidArgument(e.to_string()))?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if name.starts_with("hf_") || name == "design_hf.csv" {
            std::fs::copy(&path, runs.join(&name)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        }
    }

    let bundle = Bundle::ingest(&IngestSources::from_bundle(&runs))?;
    bundle.write(&root.join("bundle"))?;
    println!("bundle: {} LF runs, {} HF runs, QoIs {:?}", bundle.n_lf(), bundle.n_hf(), bundle.qois());

    let config = CampaignConfig {
        n_lf_pilot: 40,
        n_hf_pilot: 6,
        budget: 10,
        batch: 2,
        ..CampaignConfig::default()
    };
    let problem = ExternalProblem::new(bundle.clone());
    let out = root.join("campaign");
    match run_campaign_with_pilot(&config, &problem, None, Some(&out), bundle.to_data()?) {
        Err(Error::ModelEvaluation(msg)) => {
            println!("paused: {msg}");
            println!("points to evaluate: {}", stage_dir(&out, 0).join("acquisition.csv").display());
        }
        other => {
            other?;
        }
    }
    Ok(())
}
