use ddose_survey::reconstruction::{self, REPORTED_IMPACT_MEAN, REPORTED_OVERALL_MEAN, REPORTED_USABILITY_MEAN, REPORTED_USEFULNESS_MEAN};
use ddose_survey::report::analyze;
use ddose_survey::{domain_score, overall_score, Domain};

const TOL: f64 = 0.05;

#[test]
fn domain_means_within_tolerance() {
    let c = reconstruction::cohort();
    for (d, target) in [
        (Domain::UsabilitySatisfaction, REPORTED_USABILITY_MEAN),
        (Domain::Usefulness, REPORTED_USEFULNESS_MEAN),
        (Domain::ImpactFuture, REPORTED_IMPACT_MEAN),
    ] {
        let s = domain_score(&c, d).unwrap();
        println!("{d}: {:.4} (target {target})", s.mean);
        assert!((s.mean - target).abs() <= TOL, "{d}: {}", s.mean);
    }
    let o = overall_score(&c).unwrap();
    println!("overall: {:.4} (target {REPORTED_OVERALL_MEAN})", o.mean);
    assert!((o.mean - REPORTED_OVERALL_MEAN).abs() <= TOL);
}

#[test]
fn report_prints() {
    println!("{}", analyze(&reconstruction::cohort()).unwrap().to_markdown());
}
