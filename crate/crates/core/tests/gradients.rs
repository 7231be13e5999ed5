mod support;

use std::time::Instant;

use support::gradients;

#[test]
fn every_differentiable_component_matches_finite_differences() {
    let t = Instant::now();
    let reports = gradients::all(100);
    for r in &reports {
        println!(
            "{:<22} instances {:>4} probes {:>5} kinks {:>3} max rel err {:.2e}",
            r.name, r.instances, r.probes, r.kinks, r.max_rel_err
        );
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).map(|r| r.name).collect();
    assert!(failed.is_empty(), "gradient mismatch in {failed:?}");
    assert!(t.elapsed().as_secs() < 120, "gradient suite took {:?}", t.elapsed());
}
