//! Weighted KLE of pulse LF snapshots: spectrum, truncation and round trip.

use bifikle::crossval::relative_error;
use bifikle::design::latin_hypercube;
use bifikle::kle::{fit_kle_with_mean, project_coefficients, reconstruct, SnapshotSet};
use bifikle::models::{Problem, PulseCase, PulseProblem};

fn main() -> bifikle::error::Result<()> {
    let problem = PulseProblem::new(PulseCase::C1);
    let design = latin_hypercube(60, 2, 7).points;
    let fields = (0..design.nrows())
        .map(|r| {
            let xi: Vec<f64> = design.row(r).iter().copied().collect();
            problem.eval_lf(&problem.bounds().to_physical(&xi))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let snaps = SnapshotSet::from_fields(problem.grid().clone(), &fields, design)?;

    let (basis, _) = fit_kle_with_mean(&snaps, 0.99)?;
    println!("modes kept at rho = 0.99: {}", basis.n_modes());
    for (k, l) in basis.spectrum().iter().take(8).enumerate() {
        println!("  lambda_{:<2} = {l:.4e}", k + 1);
    }

    let (full, centered) = fit_kle_with_mean(&snaps, 1.0)?;
    let mut worst: f64 = 0.0;
    for n in 0..snaps.len() {
        let zeta = project_coefficients(&full, &centered.field(n))?;
        let back = reconstruct(&full, &zeta, true)?;
        worst = worst.max(relative_error(problem.grid(), snaps.field(n).values(), back.values()));
    }
    println!("mean field integral: {:.4e}", full.mean().integral());
    println!("worst round-trip error at rho = 1: {worst:.2e}");
    Ok(())
}
