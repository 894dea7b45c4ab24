//! Bifidelity surrogate (LF KLE plus discrepancy KLE) against an LF-only one.

use bifikle::crossval::{BifidelityData, Quadrature, ReferenceSet};
use bifikle::design::{latin_hypercube, maximin_subset};
use bifikle::driver::evaluate_points;
use bifikle::models::{Problem, PulseCase, PulseProblem};
use bifikle::surrogate::ComponentConfig;

fn main() -> bifikle::error::Result<()> {
    let problem = PulseProblem::new(PulseCase::C2);
    let lf_design = latin_hypercube(200, 2, 1).points;
    let pairs = maximin_subset(&lf_design, 10)?;
    let (_, lf) = evaluate_points(&problem, &lf_design, false, true)?;
    let (hf, _) = evaluate_points(&problem, &lf_design.select_rows(&pairs), true, false)?;
    let data = BifidelityData::new(lf[0].clone(), hf[0].clone(), pairs.clone(), vec![false; pairs.len()])?;

    let config = ComponentConfig::default();
    let surrogate = data.build(problem.bounds(), &config)?;
    println!("LF modes: {}, discrepancy modes: {}", surrogate.lf().n_modes(), surrogate.delta().n_modes());

    let reference = ReferenceSet::build(&problem, Quadrature::Grid { per_dim: 50 })?;
    let bf = reference.integrated_error(&surrogate)?;
    let lf_only = reference.integrated_error(surrogate.lf())?;
    println!("mean relative error, bifidelity: {:.4e} (se {:.1e})", bf.mean, bf.std_error);
    println!("mean relative error, LF only:    {:.4e} (se {:.1e})", lf_only.mean, lf_only.std_error);
    Ok(())
}
