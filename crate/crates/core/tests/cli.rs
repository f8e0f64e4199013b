use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use consistfair::selftest;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_consistfair"))
        .args(args)
        .output()
        .unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fixture_dir() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    for (name, text) in [
        ("data.csv", selftest::DATA_CSV),
        ("schema.toml", selftest::SCHEMA_TOML),
        ("prompts.toml", selftest::PROMPTS_TOML),
        ("plan.toml", selftest::PLAN_TOML),
        ("synthetic.toml", selftest::BACKEND_SYNTHETIC_TOML),
        ("replay.toml", selftest::BACKEND_REPLAY_TOML),
    ] {
        fs::write(tmp.path().join(name), text).unwrap();
    }
    tmp
}

fn audit(dir: &Path, backend: &str, extra: &[&str]) -> Output {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let mut args = vec![
        "audit".to_string(),
        "--data".into(),
        p("data.csv"),
        "--schema".into(),
        p("schema.toml"),
        "--prompts".into(),
        p("prompts.toml"),
        "--plan".into(),
        p("plan.toml"),
        "--backend".into(),
        p(backend),
        "--out".into(),
        p("out"),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    cli(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn selftest_passes() {
    let out = cli(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("selftest ok"));
}

#[test]
fn audit_then_sweep_and_report() {
    let tmp = fixture_dir();
    let out = audit(tmp.path(), "synthetic.toml", &["--t", "1", "--jobs", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("P1: audited 16 excluded 0 flips 3 D_sp 0.38 -> 0.00"),
        "{stdout}"
    );
    let run_dir = tmp.path().join("out");
    assert_eq!(
        fs::read_to_string(run_dir.join("report.csv")).unwrap(),
        selftest::GOLDEN_REPORT_CSV
    );

    let sweep_dir = tmp.path().join("sweep");
    let out = cli(&[
        "sweep-t",
        "--audits",
        run_dir.to_str().unwrap(),
        "--thresholds",
        "0,1/2,0.75,1",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let csv = fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap();
    let flips: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(flips, ["0", "0", "24", "24"]);

    let report_dir = tmp.path().join("again");
    let out = cli(&[
        "report",
        "--audits",
        run_dir.to_str().unwrap(),
        "--formats",
        "json,csv",
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(
        fs::read(report_dir.join("report.json")).unwrap(),
        fs::read(run_dir.join("report.json")).unwrap()
    );
    assert!(!report_dir.join("report_gaps.svg").exists());
}

#[test]
fn sweep_n_runs_each_count() {
    let tmp = fixture_dir();
    fs::copy(configs().join("compas_plan.toml"), tmp.path().join("plan.toml")).unwrap();
    let out = cli(&[
        "sweep-n",
        "--data",
        tmp.path().join("data.csv").to_str().unwrap(),
        "--plan",
        tmp.path().join("plan.toml").to_str().unwrap(),
        "--backend",
        tmp.path().join("synthetic.toml").to_str().unwrap(),
        "--out",
        tmp.path().join("n").to_str().unwrap(),
        "--n",
        "2,8",
        "--t",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("n/n2/audits.jsonl").exists());
    assert!(tmp.path().join("n/n8/audits.jsonl").exists());
    assert!(tmp.path().join("n/sweep.csv").exists());
}

#[test]
fn exit_codes() {
    let tmp = fixture_dir();

    // Data error: missing input file.
    fs::remove_file(tmp.path().join("data.csv")).unwrap();
    assert_eq!(audit(tmp.path(), "synthetic.toml", &[]).status.code(), Some(3));
    fs::write(tmp.path().join("data.csv"), selftest::DATA_CSV).unwrap();

    // Config error: unknown backend kind.
    fs::write(tmp.path().join("bad.toml"), "id = \"x\"\nkind = \"carrier-pigeon\"\n").unwrap();
    assert_eq!(audit(tmp.path(), "bad.toml", &[]).status.code(), Some(1));

    // Config error: replay without a cache.
    assert_eq!(audit(tmp.path(), "replay.toml", &[]).status.code(), Some(1));

    // Backend error: replay miss against an empty cache.
    let cache = tmp.path().join("empty.jsonl");
    fs::write(&cache, "").unwrap();
    let out = audit(tmp.path(), "replay.toml", &["--cache", cache.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(tmp.path().join("out/audits.partial.jsonl").exists());

    // Config error: threshold outside [0, 1] is rejected at argument parsing.
    assert_eq!(
        audit(tmp.path(), "synthetic.toml", &["--t", "1.5"]).status.code(),
        Some(1)
    );
}

#[test]
fn cache_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache.jsonl");
    fs::write(&cache, selftest::CACHE_JSONL).unwrap();
    let c = cache.to_str().unwrap();

    let out = cli(&["cache", "verify", "--cache", c]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("256 valid, 0 invalid, 0 duplicate"));

    let first = selftest::CACHE_JSONL.lines().next().unwrap();
    let damaged = format!("{}not json\n{first}\n", selftest::CACHE_JSONL);
    fs::write(&cache, damaged).unwrap();
    let out = cli(&["cache", "verify", "--cache", c]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("256 valid, 1 invalid, 1 duplicate"));

    let out = cli(&["cache", "gc", "--cache", c]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(&cache).unwrap().lines().count(), 256);
    assert!(cli(&["cache", "verify", "--cache", c]).status.success());

    let out = cli(&["cache", "ls", "--cache", c]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("256 entries"));
}

#[test]
fn prompts_show_renders_shipped_configs() {
    let out = cli(&[
        "prompts",
        "show",
        "--prompts",
        configs().join("compas_prompts.toml").to_str().unwrap(),
        "--schema",
        configs().join("compas_schema.toml").to_str().unwrap(),
        "--id",
        "P2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("=== P2 ==="));
    assert!(text.contains("you should be unbiased for the sensitive feature"));
    assert!(text.contains("Individual: <record>"));
    assert!(!text.contains("=== P1 ==="));
}

#[test]
fn shipped_backend_configs_parse() {
    for name in ["backend_http.toml", "backend_synthetic.toml", "backend_replay.toml"] {
        let text = fs::read_to_string(configs().join(name)).unwrap();
        consistfair::BackendConfig::from_toml(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let plan = fs::read_to_string(configs().join("compas_plan.toml")).unwrap();
    let plan = consistfair::perturbation::PlanConfig::from_toml(&plan).unwrap();
    assert_eq!(plan, consistfair::perturbation::PlanConfig::compas_default());
}
