mod common;

#[test]
fn every_fixture_matches_its_oracles() {
    let fixtures = common::all_fixtures();
    assert!(fixtures.len() >= 200);
    let failures: Vec<String> = fixtures.iter().filter_map(|f| common::check_fixture(f).err()).collect();
    assert!(failures.is_empty(), "{} failures, first: {}", failures.len(), failures[0]);
}
