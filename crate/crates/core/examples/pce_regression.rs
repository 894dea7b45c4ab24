//! Ridge-regularized Legendre PCE with the penalty chosen by cross-validation.

use bifikle::design::latin_hypercube;
use bifikle::pce::{log_spaced, MultiIndexSet, PceModel, TauPolicy};
use nalgebra::DMatrix;

fn target(xi: &[f64]) -> f64 {
    (1.5 * xi[0]).sin() * (1.0 + 0.3 * xi[1] * xi[1])
}

fn main() -> bifikle::error::Result<()> {
    let design = latin_hypercube(40, 2, 11).points;
    let zeta = DMatrix::from_fn(design.nrows(), 1, |r, _| target(&[design[(r, 0)], design[(r, 1)]]));
    let policy = TauPolicy::CrossValidated {
        grid: log_spaced(1e-8, 1e2, 25),
        folds: 5,
        seed: 0,
    };
    for degree in [2, 3, 4, 5] {
        let model = PceModel::fit(&design, &zeta, MultiIndexSet::total_order(2, degree)?, &policy)?;
        let test = latin_hypercube(500, 2, 99).points;
        let mut err = 0.0;
        for r in 0..test.nrows() {
            let xi = [test[(r, 0)], test[(r, 1)]];
            err += (model.predict(&xi)?[0] - target(&xi)).powi(2);
        }
        println!(
            "degree {degree}: {:>2} terms, tau = {:.2e}, test rmse = {:.3e}",
            model.index().len(),
            model.tau(),
            (err / test.nrows() as f64).sqrt()
        );
    }
    Ok(())
}
