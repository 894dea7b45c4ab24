//! Monte-Carlo forward UQ through a bifidelity surrogate, its LF component
//! and the HF model on the C1 pulse.

use bifikle::driver::{run_campaign, CampaignConfig};
use bifikle::models::{PulseCase, PulseProblem};
use bifikle::report::uq_study;

fn main() -> bifikle::error::Result<()> {
    let problem = PulseProblem::new(PulseCase::C1);
    let config = CampaignConfig {
        budget: 5,
        ..CampaignConfig::default()
    };
    let campaign = run_campaign(&config, &problem, None, None)?;
    let study = uq_study(&campaign.surrogates[0], Some(&problem), 2000, 17)?;
    println!("distance to HF mean, bifidelity: {:.4e}", study.bf_to_hf.unwrap_or(f64::NAN));
    println!("distance to HF mean, LF only:    {:.4e}", study.lf_to_hf.unwrap_or(f64::NAN));
    let grid = study.bf.mean.grid();
    for k in (0..grid.len()).step_by(32) {
        let (x, _) = grid.point(k);
        println!(
            "x = {x:.4}: bf {:+.4} +/- {:.4}   hf {:+.4} +/- {:.4}",
            study.bf.mean.values()[k],
            study.bf.std.values()[k],
            study.hf.as_ref().map_or(f64::NAN, |h| h.mean.values()[k]),
            study.hf.as_ref().map_or(f64::NAN, |h| h.std.values()[k])
        );
    }
    Ok(())
}
