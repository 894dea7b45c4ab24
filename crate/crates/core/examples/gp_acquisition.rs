//! GP model of an error field and a Kriging-Believer batch of EI maximizers.

use bifikle::acquisition::{kriging_believer_batch, AcquisitionConfig, Objective};
use bifikle::design::latin_hypercube;
use bifikle::gpr::{fit_gp, GpConfig};

fn error_field(x: &[f64]) -> f64 {
    0.05 + 0.4 * (-8.0 * ((x[0] - 0.6).powi(2) + (x[1] + 0.4).powi(2))).exp()
}

fn main() -> bifikle::error::Result<()> {
    let inputs = latin_hypercube(15, 2, 5).points;
    let targets: Vec<f64> = (0..inputs.nrows()).map(|r| error_field(&[inputs[(r, 0)], inputs[(r, 1)]])).collect();
    let model = fit_gp(&inputs, &targets, &GpConfig::default())?;
    let h = model.hyper();
    println!(
        "signal variance {:.3}, lengths {:?}, nugget {:.2e}, log likelihood {:.3}",
        h.signal_var,
        h.lengths.iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>(),
        h.nugget,
        model.log_likelihood()
    );
    let incumbent = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let batch = kriging_believer_batch(&model, incumbent, 5, Objective::Maximize, &AcquisitionConfig::default())?;
    for i in 0..batch.len() {
        let p = batch.point(i);
        let (m, v) = model.posterior(&p);
        println!(
            "pick {i}: xi = ({:+.3}, {:+.3})  EI = {:.3e}  incumbent = {:.4}  posterior = {m:.4} +/- {:.4}",
            p[0],
            p[1],
            batch.ei[i],
            batch.incumbents[i],
            v.sqrt()
        );
    }
    Ok(())
}
