use std::path::Path;

use bifikle::config::{ProblemSpec, RunConfig};
use bifikle::crossval::CvMode;

fn load(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::read(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn sample_configs_parse() {
    let c2 = load("pulse_c2.conf");
    assert!(matches!(c2.problem, ProblemSpec::Pulse { .. }));
    assert_eq!((c2.campaign.n_lf_pilot, c2.campaign.n_hf_pilot, c2.campaign.budget), (200, 5, 65));
    assert_eq!(c2.replicates, 10);

    let conv = load("convdiff.conf");
    assert_eq!(conv.campaign.cv_mode, CvMode::KFold(10));
    assert_eq!(conv.policies.len(), 2);

    let ext = load("external.conf");
    assert!(!ext.problem.has_oracle());
    assert_eq!(ext.campaign.batch, 5);
}
