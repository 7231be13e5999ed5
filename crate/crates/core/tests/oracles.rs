mod support;

use support::{checks, oracles};

#[test]
fn hungarian_equals_brute_force_enumeration() {
    let t = checks::hungarian_vs_brute_force(200, 7);
    assert_eq!(t.instances, 200);
    assert_eq!(t.mismatches, 0, "largest gap {}", t.max_diff);
}

#[test]
fn chamfer_equals_double_loop() {
    let t = checks::chamfer_vs_brute_force(200, 11);
    assert_eq!(t.mismatches, 0, "largest gap {}", t.max_diff);
}

#[test]
fn ap_fixtures_match_hand_enumeration() {
    for (name, ok) in checks::ap_fixtures() {
        assert!(ok, "{name}");
    }
}

#[test]
fn reference_points_follow_the_gaussian_and_uniform_laws() {
    let s = oracles::reference_point_statistics(100_000, 0);
    assert!(s.mean_ok(), "mean {} vs {} (se {})", s.mean_x, s.expected_mean_x, s.std_err);
    assert!(s.std_ok(), "std {} vs σ {}", s.std_x, s.sigma);
    assert!(s.uniform_ok(), "chi-square {} ≥ {}", s.chi_square, s.critical);
    assert!(s.degenerate_exact, "{s:?}");
}
