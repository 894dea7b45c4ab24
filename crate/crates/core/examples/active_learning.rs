//! One active-learning campaign on the C2 pulse with stage-by-stage errors.

use bifikle::crossval::{Quadrature, ReferenceSet};
use bifikle::driver::{run_campaign, CampaignConfig, Policy};
use bifikle::models::{PulseCase, PulseProblem};

fn main() -> bifikle::error::Result<()> {
    let problem = PulseProblem::new(PulseCase::C2);
    let reference = ReferenceSet::build(&problem, Quadrature::Grid { per_dim: 100 })?;
    let config = CampaignConfig {
        budget: 25,
        policy: Policy::EiMax,
        seed: 3,
        ..CampaignConfig::default()
    };
    let out = std::env::temp_dir().join("bifikle_active_learning");
    let _ = std::fs::remove_dir_all(&out);
    let result = run_campaign(&config, &problem, Some(&reference), Some(&out))?;
    println!("{:>5} {:>5} {:>11} {:>11}", "stage", "N_HF", "cv mean", "mu_eps");
    for s in &result.history.stages {
        println!(
            "{:>5} {:>5} {:>11.4e} {:>11.4e}",
            s.stage,
            s.n_hf,
            s.cv.mean().unwrap_or(f64::NAN),
            s.mu.map_or(f64::NAN, |m| m.mean)
        );
    }
    println!("campaign written to {}", out.display());
    Ok(())
}
