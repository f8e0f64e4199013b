use std::fs;

use consistfair::client::{CacheEntry, Classifier};
use consistfair::harness::{
    build_report, emit_report, run_experiment_with, sweep_perturbations, sweep_threshold, AuditEntry, AuditRun,
    OutputFormat, AUDIT_FILE, PARTIAL_AUDIT_FILE,
};
use consistfair::perturbation::PlanConfig;
use consistfair::prompting::{render_prompt, render_sentence};
use consistfair::{selftest, Error, Threshold};

fn t(s: &str) -> Threshold {
    s.parse().unwrap()
}

#[test]
fn threshold_sweep_reuses_stored_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let config = selftest::fixture_config(tmp.path(), selftest::BACKEND_SYNTHETIC_TOML, None).unwrap();
    let classifier = Classifier::new(&config.backend, None).unwrap();
    let report = run_experiment_with(&config, &classifier).unwrap();
    let calls = classifier.stats().backend_calls;

    let run = AuditRun::read(&config.out_dir).unwrap();
    let sweep = sweep_threshold(&run, &[t("0"), t("0.5"), t("0.75"), t("0.9"), t("1")]).unwrap();
    assert_eq!(classifier.stats().backend_calls, calls);
    // With two variants per record cr is 1/2 or 1, so every t > 1/2 flips
    // the same three records per prompt.
    let flips: Vec<usize> = sweep.rows.iter().map(|r| r.flips).collect();
    assert_eq!(flips, vec![0, 0, 24, 24, 24]);
    assert_eq!(sweep.rows[4].mean, report.mean);
}

#[test]
fn trail_round_trips_and_rejects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let out = selftest::record(tmp.path()).unwrap();
    let run = AuditRun::read(&out).unwrap();
    assert_eq!(run.entries.len(), 8 * 16);
    let copy = tmp.path().join("copy");
    run.write(&copy).unwrap();
    assert_eq!(AuditRun::read(&copy).unwrap(), run);

    let trail = fs::read_to_string(copy.join(AUDIT_FILE)).unwrap();
    let tampered = trail.replacen("\"flipped\":true", "\"flipped\":false", 1);
    assert_ne!(trail, tampered);
    fs::write(copy.join(AUDIT_FILE), tampered).unwrap();
    assert!(matches!(AuditRun::read(&copy), Err(Error::Report(_))));
}

#[test]
fn backend_failure_leaves_partial_trail_and_resume_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache.jsonl");
    let lines: Vec<&str> = selftest::CACHE_JSONL.lines().collect();
    fs::write(&cache, lines[..lines.len() / 2].join("\n") + "\n").unwrap();

    let config = selftest::fixture_config(tmp.path(), selftest::BACKEND_REPLAY_TOML, Some(cache.clone())).unwrap();
    let classifier = Classifier::new(&config.backend, Some(&cache)).unwrap();
    let err = run_experiment_with(&config, &classifier).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(config.out_dir.join(PARTIAL_AUDIT_FILE).exists());
    assert!(!config.out_dir.join("report.json").exists());

    fs::write(&cache, selftest::CACHE_JSONL).unwrap();
    let classifier = Classifier::new(&config.backend, Some(&cache)).unwrap();
    run_experiment_with(&config, &classifier).unwrap();
    assert!(!config.out_dir.join(PARTIAL_AUDIT_FILE).exists());
    assert_eq!(
        fs::read_to_string(config.out_dir.join("report.csv")).unwrap(),
        selftest::GOLDEN_REPORT_CSV
    );
}

#[test]
fn unparseable_answer_excludes_only_that_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let config = selftest::fixture_config(tmp.path(), selftest::BACKEND_REPLAY_TOML, None).unwrap();
    let data = consistfair::harness::load_data(&config.data, &config.schema, false).unwrap();
    let record = data.outcome.records.iter().find(|r| r.id == "a08").unwrap();
    let sentence = render_sentence(record, &config.prompts.feature_order).unwrap();
    let prompt = render_prompt(config.prompts.get("P3").unwrap(), &sentence).unwrap();
    let bad = CacheEntry::new("selftest-model", &prompt, "I would rather not say.".into());
    assert_eq!(bad.verdict, None);

    let cache = tmp.path().join("cache.jsonl");
    fs::write(
        &cache,
        serde_json::to_string(&bad).unwrap() + "\n" + selftest::CACHE_JSONL,
    )
    .unwrap();
    let classifier = Classifier::new(&config.backend, Some(&cache)).unwrap();
    let report = run_experiment_with(&config, &classifier).unwrap();

    let p3 = report.prompt("P3").unwrap();
    assert_eq!((p3.audited, p3.excluded), (15, 1));
    assert_eq!(p3.excluded_by_kind.get("unparseable"), Some(&1));
    assert_eq!(report.prompt("P1").unwrap().excluded, 0);
    let run = AuditRun::read(&config.out_dir).unwrap();
    let failed: Vec<_> = run
        .entries
        .iter()
        .filter(|e| matches!(e, AuditEntry::Failed(_)))
        .collect();
    assert_eq!(failed.len(), 1);
}

#[test]
fn variant_count_sweep_writes_one_run_per_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let config = selftest::fixture_config(tmp.path(), selftest::BACKEND_SYNTHETIC_TOML, None).unwrap();
    let plan_config = PlanConfig::compas_default();
    let plans: Vec<_> = [2, 4, 8, 16]
        .iter()
        .map(|&n| plan_config.plan_for_n(&config.schema, n).unwrap())
        .collect();
    let classifier = Classifier::new(&config.backend, None).unwrap();
    let sweep = sweep_perturbations(&config, &plans, &classifier).unwrap();
    let params: Vec<&str> = sweep.rows.iter().map(|r| r.parameter.as_str()).collect();
    assert_eq!(params, ["2", "4", "8", "16"]);
    for n in [2, 4, 8, 16] {
        let run = AuditRun::read(&config.out_dir.join(format!("n{n}"))).unwrap();
        assert_eq!(run.manifest.config.variants_per_record, n);
    }
    // The backend keys only on race and priors, so extra axes change nothing.
    assert!(sweep.rows.iter().all(|r| r.flips == 24));
}

#[test]
fn empty_report_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = selftest::record(tmp.path()).unwrap();
    let mut report = build_report(&AuditRun::read(&out).unwrap()).unwrap();
    report.prompts.clear();
    let target = tmp.path().join("empty");
    assert!(emit_report(&report, &OutputFormat::ALL, &target).is_err());
    assert!(!target.exists());

    let mut config = selftest::fixture_config(tmp.path(), selftest::BACKEND_SYNTHETIC_TOML, None).unwrap();
    config.prompts.prompts.clear();
    config.out_dir = tmp.path().join("none");
    let classifier = Classifier::new(&config.backend, None).unwrap();
    assert!(run_experiment_with(&config, &classifier).is_err());
    assert!(!config.out_dir.exists());
}
