//! Replicated campaigns comparing EI maximization, random sampling and EI
//! minimization, plus a cross-policy test on each other's acquired points.

use bifikle::crossval::{Quadrature, ReferenceSet};
use bifikle::driver::{cross_policy_test, run_replicates, CampaignConfig, Policy};
use bifikle::models::{PulseCase, PulseProblem};

fn main() -> bifikle::error::Result<()> {
    let problem = PulseProblem::new(PulseCase::C2);
    let reference = ReferenceSet::build(&problem, Quadrature::Grid { per_dim: 60 })?;
    let config = CampaignConfig {
        budget: 20,
        ..CampaignConfig::default()
    };
    let summary = run_replicates(&config, 3, &Policy::ALL, &problem, Some(&reference), None)?;
    for p in &summary.policies {
        println!("{:>7}: final mean mu_eps = {:.4e}", p.policy.name(), p.mean_final().unwrap_or(f64::NAN));
    }
    let al = summary.policy(Policy::EiMax).and_then(|p| p.runs[0].as_ref());
    let rs = summary.policy(Policy::Random).and_then(|p| p.runs[0].as_ref());
    if let (Some(al), Some(rs)) = (al, rs) {
        for (name, table) in [("ei_max on random points", cross_policy_test(al, rs)?), ("random on ei_max points", cross_policy_test(rs, al)?)] {
            let mean = table.errors.iter().sum::<f64>() / table.errors.len().max(1) as f64;
            println!("{name}: {} points, mean error {mean:.4e}, {} excluded", table.errors.len(), table.excluded);
        }
    }
    Ok(())
}
