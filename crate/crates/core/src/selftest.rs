//! Bundled fixture experiment and golden-report check.
//!
//! The fixture is sixteen in-scope records plus one out-of-scope record, a
//! race-only perturbation plan and a cache of synthetic responses. `run`
//! replays that cache offline and diffs the produced report files against the
//! goldens byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use crate::client::{BackendConfig, Classifier};
use crate::dataset::SchemaConfig;
use crate::error::Error;
use crate::exact::Threshold;
use crate::harness::{run_experiment_with, ExperimentConfig};
use crate::perturbation::PlanConfig;
use crate::prompting::{PromptSet, PromptSetConfig};

pub const DATA_CSV: &str = include_str!("../fixtures/selftest/data.csv");
pub const SCHEMA_TOML: &str = include_str!("../fixtures/selftest/schema.toml");
pub const PROMPTS_TOML: &str = include_str!("../fixtures/selftest/prompts.toml");
pub const PLAN_TOML: &str = include_str!("../fixtures/selftest/plan.toml");
pub const BACKEND_SYNTHETIC_TOML: &str = include_str!("../fixtures/selftest/backend_synthetic.toml");
pub const BACKEND_REPLAY_TOML: &str = include_str!("../fixtures/selftest/backend_replay.toml");
pub const CACHE_JSONL: &str = include_str!("../fixtures/selftest/cache.jsonl");
pub const GOLDEN_REPORT_JSON: &str = include_str!("../fixtures/selftest/golden/report.json");
pub const GOLDEN_REPORT_CSV: &str = include_str!("../fixtures/selftest/golden/report.csv");

/// Threshold the goldens were produced at.
pub const THRESHOLD: &str = "1";

/// First point where an output differs from its golden.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub file: &'static str,
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelftestOutcome {
    pub checked: Vec<&'static str>,
    pub divergences: Vec<Divergence>,
    pub backend_calls: u64,
}

impl SelftestOutcome {
    pub fn passed(&self) -> bool {
        self.divergences.is_empty()
    }
}

/// Builds the fixture experiment in `dir`, writing the data file there.
pub fn fixture_config(dir: &Path, backend_toml: &str, cache: Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    let schema = SchemaConfig::from_toml(SCHEMA_TOML)?;
    let prompts = PromptSet::from_config(&PromptSetConfig::from_toml(PROMPTS_TOML)?, &schema)?;
    let plan = PlanConfig::from_toml(PLAN_TOML)?.plan(&schema)?;
    let backend = BackendConfig::from_toml(backend_toml)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let data = dir.join("data.csv");
    fs::write(&data, DATA_CSV).map_err(|e| Error::io(&data, e))?;
    Ok(ExperimentConfig {
        data,
        schema,
        prompts,
        plan,
        backend,
        threshold: THRESHOLD
            .parse::<Threshold>()
            .map_err(|e| Error::Config(e.to_string()))?,
        out_dir: dir.join("out"),
        cache,
        jobs: 4,
        strict: false,
        seed: 0,
    })
}

/// Runs the fixture against the synthetic backend and writes the cache and
/// report files into `dir`. Used to regenerate the goldens.
pub fn record(dir: &Path) -> Result<PathBuf, Error> {
    let cache = dir.join("cache.jsonl");
    let config = fixture_config(dir, BACKEND_SYNTHETIC_TOML, Some(cache.clone()))?;
    let classifier = Classifier::new(&config.backend, config.cache.as_deref())?;
    run_experiment_with(&config, &classifier)?;
    Ok(config.out_dir)
}

/// Replays the bundled cache and compares the report files to the goldens.
pub fn run() -> Result<SelftestOutcome, Error> {
    let tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let cache = tmp.path().join("cache.jsonl");
    fs::write(&cache, CACHE_JSONL).map_err(|e| Error::io(&cache, e))?;
    let config = fixture_config(tmp.path(), BACKEND_REPLAY_TOML, Some(cache))?;
    let classifier = Classifier::new(&config.backend, config.cache.as_deref())?;
    run_experiment_with(&config, &classifier)?;

    let mut outcome = SelftestOutcome {
        checked: Vec::new(),
        divergences: Vec::new(),
        backend_calls: classifier.stats().backend_calls,
    };
    for (file, golden) in [("report.json", GOLDEN_REPORT_JSON), ("report.csv", GOLDEN_REPORT_CSV)] {
        let path = config.out_dir.join(file);
        let actual = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        outcome.checked.push(file);
        if let Some(d) = first_divergence(file, golden, &actual) {
            outcome.divergences.push(d);
        }
    }
    Ok(outcome)
}

/// 1-based line and column of the first differing character.
pub fn first_divergence(file: &'static str, expected: &str, actual: &str) -> Option<Divergence> {
    if expected == actual {
        return None;
    }
    let mut exp_lines = expected.split('\n');
    let mut act_lines = actual.split('\n');
    let mut line = 1;
    loop {
        match (exp_lines.next(), act_lines.next()) {
            (Some(e), Some(a)) if e == a => line += 1,
            (e, a) => {
                let (e, a) = (e.unwrap_or(""), a.unwrap_or(""));
                let column = e.chars().zip(a.chars()).take_while(|(x, y)| x == y).count() + 1;
                return Some(Divergence {
                    file,
                    line,
                    column,
                    expected: e.to_string(),
                    actual: a.to_string(),
                });
            }
        }
    }
}
