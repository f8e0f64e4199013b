//! Talks to a real endpoint. Run with
//! `CONSISTFAIR_LIVE_BACKEND=configs/backend_http.toml cargo test --test live_backend -- --ignored`.

use std::fs;

use consistfair::client::Classifier;
use consistfair::harness::run_experiment_with;
use consistfair::{selftest, BackendConfig};

#[test]
#[ignore = "needs network access and an API key"]
fn live_backend_audits_fixture() {
    let path = std::env::var("CONSISTFAIR_LIVE_BACKEND").expect("set CONSISTFAIR_LIVE_BACKEND to a backend config");
    let backend_toml = fs::read_to_string(&path).unwrap();
    let backend = BackendConfig::from_toml(&backend_toml).unwrap();

    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache.jsonl");
    let mut config = selftest::fixture_config(tmp.path(), &backend_toml, Some(cache.clone())).unwrap();
    config.prompts.prompts.truncate(1);
    let classifier = Classifier::new(&backend, Some(&cache)).unwrap();
    let report = run_experiment_with(&config, &classifier).unwrap();
    let p1 = &report.prompts[0];
    assert_eq!(p1.audited + p1.excluded, 16);
    println!("{}", fs::read_to_string(config.out_dir.join("report.csv")).unwrap());

    // A second pass is served entirely from the cache.
    let again = Classifier::new(&backend, Some(&cache)).unwrap();
    run_experiment_with(&config, &again).unwrap();
    assert_eq!(again.stats().backend_calls, 0);
}
