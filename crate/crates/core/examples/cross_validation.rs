//! Per-point k-fold and leave-one-out errors of a bifidelity surrogate.

use bifikle::crossval::{kfold_errors, loo_errors, BifidelityData, CvConfig};
use bifikle::design::{latin_hypercube, maximin_subset};
use bifikle::driver::evaluate_points;
use bifikle::models::{Problem, PulseCase, PulseProblem};

fn main() -> bifikle::error::Result<()> {
    let problem = PulseProblem::new(PulseCase::C1);
    let lf_design = latin_hypercube(100, 2, 3).points;
    let pairs = maximin_subset(&lf_design, 12)?;
    let (_, lf) = evaluate_points(&problem, &lf_design, false, true)?;
    let (hf, _) = evaluate_points(&problem, &lf_design.select_rows(&pairs), true, false)?;
    let data = BifidelityData::new(lf[0].clone(), hf[0].clone(), pairs.clone(), vec![false; pairs.len()])?;
    let config = CvConfig::default();

    let kfold = kfold_errors(&data, problem.bounds(), 4, 0, &config)?;
    let loo = loo_errors(&data, problem.bounds(), &config)?;
    println!("{:>5} {:>9} {:>9} {:>11} {:>11}", "point", "a", "b", "4-fold", "loo");
    for i in 0..data.n_pairs() {
        let theta = problem.bounds().to_physical(&data.hf().design_row(i));
        let show = |e: Option<f64>| e.map_or("-".to_string(), |v| format!("{v:.4e}"));
        println!(
            "{i:>5} {:>9.3} {:>9.3} {:>11} {:>11}",
            theta[0],
            theta[1],
            show(kfold.errors[i]),
            show(loo.errors[i])
        );
    }
    println!("means: 4-fold {:.4e}, loo {:.4e}", kfold.mean().unwrap_or(f64::NAN), loo.mean().unwrap_or(f64::NAN));
    Ok(())
}
