//! Experiment orchestration: audits over prompts x records, the persisted
//! audit trail, reports, and threshold / variant-count sweeps.

mod emit;
mod report;
mod sweep;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use emit::{emit_report, emit_sweep, render_report_files, write_atomically, OutputFormat};
pub use report::{build_report, FairnessReport, MeanGap, PromptReport, SideReport};
pub use sweep::{sweep_perturbations, sweep_threshold, PerturbationSweep, SweepRow, ThresholdSweep};

use crate::adjustment::{audit_record, AuditError, ConsistencyAudit};
use crate::client::{BackendConfig, Classifier, ClientError, Verdict};
use crate::dataset::{load_records, Group, LoadOutcome, Record, SchemaConfig};
use crate::error::Error;
use crate::exact::Threshold;
use crate::perturbation::{PerturbationPlan, PlanConfig};
use crate::prompting::{PromptSet, PromptSetConfig};

pub const AUDIT_FILE: &str = "audits.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARTIAL_AUDIT_FILE: &str = "audits.partial.jsonl";

/// Everything one audit run needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub schema: SchemaConfig,
    pub prompts: PromptSet,
    pub plan: PerturbationPlan,
    pub backend: BackendConfig,
    pub threshold: Threshold,
    pub out_dir: PathBuf,
    pub cache: Option<PathBuf>,
    pub jobs: usize,
    pub strict: bool,
    pub seed: u64,
}

/// Config file locations; absent schema, prompt and plan files fall back to
/// the built-in COMPAS presets.
#[derive(Debug, Clone, Default)]
pub struct ConfigFiles {
    pub schema: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub plan: Option<PathBuf>,
    pub backend: PathBuf,
}

fn read_config(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl ConfigFiles {
    pub fn load_schema(&self) -> Result<SchemaConfig, Error> {
        match &self.schema {
            Some(p) => Ok(SchemaConfig::from_toml(&read_config(p)?)?),
            None => Ok(SchemaConfig::compas()),
        }
    }

    pub fn load_prompts(&self, schema: &SchemaConfig) -> Result<PromptSet, Error> {
        let config = match &self.prompts {
            Some(p) => PromptSetConfig::from_toml(&read_config(p)?)?,
            None => PromptSetConfig::default_compas(),
        };
        Ok(PromptSet::from_config(&config, schema)?)
    }

    pub fn load_plan_config(&self) -> Result<PlanConfig, Error> {
        match &self.plan {
            Some(p) => Ok(PlanConfig::from_toml(&read_config(p)?)?),
            None => Ok(PlanConfig::compas_default()),
        }
    }

    pub fn load_backend(&self) -> Result<BackendConfig, Error> {
        Ok(BackendConfig::from_toml(&read_config(&self.backend)?)?)
    }
}

impl ExperimentConfig {
    /// Loads every config file. `variants` selects a plan by variant count
    /// instead of using the plan's axes as written.
    pub fn load(
        files: &ConfigFiles,
        data: PathBuf,
        out_dir: PathBuf,
        threshold: Threshold,
        variants: Option<u64>,
    ) -> Result<Self, Error> {
        let schema = files.load_schema()?;
        let prompts = files.load_prompts(&schema)?;
        let plan_config = files.load_plan_config()?;
        let plan = match variants {
            Some(n) => plan_config.plan_for_n(&schema, n)?,
            None => plan_config.plan(&schema)?,
        };
        Ok(Self {
            data,
            schema,
            prompts,
            plan,
            backend: files.load_backend()?,
            threshold,
            out_dir,
            cache: None,
            jobs: 4,
            strict: false,
            seed: 0,
        })
    }
}

/// Run parameters echoed into every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub data_file: String,
    pub data_sha256: String,
    pub backend_id: String,
    pub threshold: Threshold,
    pub variants_per_record: u64,
    pub include_identity: bool,
    pub axes: Vec<String>,
    pub prompt_ids: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub loaded: usize,
    pub rejected_rows: usize,
    /// Loaded records outside both groups; never audited.
    pub out_of_scope: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: ConfigEcho,
    pub dataset: DatasetSummary,
}

/// An audit that produced no verdict set; excluded from all metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedAudit {
    pub record_id: String,
    pub prompt_id: String,
    pub group: Option<Group>,
    pub label: Verdict,
    pub error_kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AuditEntry {
    Ok(ConsistencyAudit),
    Failed(FailedAudit),
}

impl AuditEntry {
    pub fn prompt_id(&self) -> &str {
        match self {
            AuditEntry::Ok(a) => &a.prompt_id,
            AuditEntry::Failed(f) => &f.prompt_id,
        }
    }
}

/// The audit trail: manifest plus one entry per (prompt, record), in prompt
/// then record order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRun {
    pub manifest: RunManifest,
    pub entries: Vec<AuditEntry>,
}

impl AuditRun {
    /// Re-applies the flip rule at `threshold` to every stored audit.
    pub fn with_threshold(&self, threshold: &Threshold) -> AuditRun {
        let mut manifest = self.manifest.clone();
        manifest.config.threshold = threshold.clone();
        let entries = self
            .entries
            .iter()
            .map(|e| match e {
                AuditEntry::Ok(a) => AuditEntry::Ok(a.with_threshold(threshold)),
                other => other.clone(),
            })
            .collect();
        AuditRun { manifest, entries }
    }

    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        write_atomically(&dir.join(AUDIT_FILE), &trail_bytes(&self.entries))?;
        write_atomically(&dir.join(MANIFEST_FILE), manifest.as_bytes())?;
        let partial = dir.join(PARTIAL_AUDIT_FILE);
        if partial.exists() {
            fs::remove_file(&partial).map_err(|e| Error::io(&partial, e))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<AuditRun, Error> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", manifest_path.display())))?;
        let trail_path = dir.join(AUDIT_FILE);
        let file = fs::File::open(&trail_path).map_err(|e| Error::io(&trail_path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&trail_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: AuditEntry = serde_json::from_str(&line)
                .map_err(|e| Error::Report(format!("{} line {}: {e}", trail_path.display(), i + 1)))?;
            if let AuditEntry::Ok(a) = &entry {
                if !a.is_consistent() {
                    return Err(Error::Report(format!(
                        "{} line {}: audit fields are inconsistent",
                        trail_path.display(),
                        i + 1
                    )));
                }
            }
            entries.push(entry);
        }
        Ok(AuditRun { manifest, entries })
    }
}

fn trail_bytes(entries: &[AuditEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for entry in entries {
        serde_json::to_writer(&mut out, entry).expect("audit entry serializes");
        out.push(b'\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Loaded input data with its provenance.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub file_name: String,
    pub sha256: String,
    pub outcome: LoadOutcome,
}

pub fn load_data(path: &Path, schema: &SchemaConfig, strict: bool) -> Result<LoadedData, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset(e.into()))?;
    let outcome = load_records(bytes.as_slice(), schema, strict)?;
    Ok(LoadedData {
        file_name: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        sha256: sha256_hex(&bytes),
        outcome,
    })
}

/// Settings that shape one pass of audits.
pub struct AuditSettings<'a> {
    pub prompts: &'a PromptSet,
    pub plan: &'a PerturbationPlan,
    pub threshold: &'a Threshold,
    pub jobs: usize,
    pub seed: u64,
}

/// A run aborted by a backend failure; `completed` holds the entries that
/// finished before the abort.
#[derive(Debug)]
pub struct AbortedRun {
    pub error: Error,
    pub completed: Vec<AuditEntry>,
}

/// Audits every in-scope record under every prompt.
///
/// Work is spread over `jobs` threads; entries are assembled in (prompt,
/// record) order regardless of completion order. Unparseable model output or
/// a record outside the plan's domains becomes a [`FailedAudit`]; any other
/// backend error aborts the run.
pub fn run_audits(
    data: &LoadedData,
    settings: &AuditSettings<'_>,
    classifier: &Classifier,
) -> Result<AuditRun, AbortedRun> {
    let records: Vec<&Record> = data.outcome.records.iter().filter(|r| r.group.is_some()).collect();
    let prompts = &settings.prompts.prompts;
    let tasks: Vec<(usize, usize)> = (0..prompts.len())
        .flat_map(|p| (0..records.len()).map(move |r| (p, r)))
        .collect();

    let slots: Vec<Mutex<Option<AuditEntry>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let fatal: Mutex<Option<Error>> = Mutex::new(None);

    let work = || loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(p, r)) = tasks.get(i) else { return };
        let (prompt, record) = (&prompts[p], records[r]);
        let result = audit_record(
            record,
            prompt,
            &settings.prompts.feature_order,
            settings.plan,
            classifier,
            settings.threshold,
        );
        let entry = match result {
            Ok(audit) => AuditEntry::Ok(audit),
            Err(err) => match failure_kind(&err) {
                Some(kind) => {
                    log::warn!("record {} under {}: {err}", record.id, prompt.id);
                    AuditEntry::Failed(FailedAudit {
                        record_id: record.id.clone(),
                        prompt_id: prompt.id.clone(),
                        group: record.group,
                        label: record.label,
                        error_kind: kind.to_string(),
                        message: err.to_string(),
                    })
                }
                None => {
                    stop.store(true, Ordering::SeqCst);
                    fatal.lock().unwrap().get_or_insert(err.into());
                    return;
                }
            },
        };
        *slots[i].lock().unwrap() = Some(entry);
    };

    let jobs = settings.jobs.max(1).min(tasks.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(work);
        }
    });

    let entries: Vec<Option<AuditEntry>> = slots.into_iter().map(|m| m.into_inner().unwrap()).collect();
    if let Some(error) = fatal.into_inner().unwrap() {
        return Err(AbortedRun {
            error,
            completed: entries.into_iter().flatten().collect(),
        });
    }
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: ConfigEcho {
            data_file: data.file_name.clone(),
            data_sha256: data.sha256.clone(),
            backend_id: classifier.backend_id().to_string(),
            threshold: settings.threshold.clone(),
            variants_per_record: settings.plan.variant_count(),
            include_identity: settings.plan.include_identity,
            axes: settings.plan.axes.iter().map(|a| a.feature.clone()).collect(),
            prompt_ids: prompts.iter().map(|p| p.id.clone()).collect(),
            seed: settings.seed,
        },
        dataset: DatasetSummary {
            loaded: data.outcome.records.len(),
            rejected_rows: data.outcome.rejected.len(),
            out_of_scope: data.outcome.out_of_scope(),
        },
    };
    Ok(AuditRun {
        manifest,
        entries: entries.into_iter().map(|e| e.expect("every task ran")).collect(),
    })
}

fn failure_kind(err: &AuditError) -> Option<&'static str> {
    match err {
        AuditError::Client(ClientError::Unparseable { .. }) => Some("unparseable"),
        AuditError::Perturbation(_) => Some("perturbation"),
        _ => None,
    }
}

/// Loads data, audits, persists the trail and emits the report files.
/// On a backend failure the completed entries are written to
/// `audits.partial.jsonl`; the cache makes a re-run resume where it stopped.
pub fn run_experiment(config: &ExperimentConfig) -> Result<FairnessReport, Error> {
    let classifier = Classifier::new(&config.backend, config.cache.as_deref())?;
    run_experiment_with(config, &classifier)
}

pub fn run_experiment_with(config: &ExperimentConfig, classifier: &Classifier) -> Result<FairnessReport, Error> {
    if config.prompts.prompts.is_empty() {
        return Err(Error::Config("prompt set is empty".into()));
    }
    let data = load_data(&config.data, &config.schema, config.strict)?;
    let settings = AuditSettings {
        prompts: &config.prompts,
        plan: &config.plan,
        threshold: &config.threshold,
        jobs: config.jobs,
        seed: config.seed,
    };
    let run = match run_audits(&data, &settings, classifier) {
        Ok(run) => run,
        Err(aborted) => {
            fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
            let partial = config.out_dir.join(PARTIAL_AUDIT_FILE);
            write_atomically(&partial, &trail_bytes(&aborted.completed))?;
            return Err(aborted.error);
        }
    };
    run.write(&config.out_dir)?;
    let report = build_report(&run)?;
    emit_report(&report, &OutputFormat::ALL, &config.out_dir)?;
    Ok(report)
}
