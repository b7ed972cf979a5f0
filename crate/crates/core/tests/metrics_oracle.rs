mod oracle;

#[test]
fn engine_matches_brute_force_on_micro_scenarios() {
    let (received, lost) = oracle::check_micro_scenarios(77, 50);
    assert!(received > 1000 && lost > 1000, "received {received}, lost {lost}");
}
