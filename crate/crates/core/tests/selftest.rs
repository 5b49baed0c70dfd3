use jala_core::selftest;

fn assert_all(checks: Vec<selftest::Check>) {
    for c in &checks {
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn gradients_match_finite_differences() {
    assert_all(selftest::gradient_oracle());
}

#[test]
fn ema_is_exact() {
    assert_all(selftest::ema_exactness());
}

#[test]
fn gradients_reach_only_their_halves() {
    assert_all(selftest::gradient_routing());
}

#[test]
fn masking_statistics_hold() {
    assert_all(selftest::masking_statistics(10_000));
}

#[test]
fn quantizer_matches_brute_force() {
    assert_all(selftest::grvq_oracle(1000));
}

#[test]
fn sampler_recovers_data_under_exact_field() {
    assert_all(selftest::flow_sampler());
}

#[test]
fn metrics_match_hand_cases() {
    assert_all(selftest::metric_oracles(1000));
}

#[test]
fn schedule_and_clipping_bounds() {
    assert_all(selftest::schedule_and_clipping());
}
