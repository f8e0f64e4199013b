//! Python bindings: verdict parsing, the flip rule, fairness metrics, prompt
//! rendering, variant generation and full audit runs.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use consistfair::client::Verdict;
use consistfair::dataset::{load_records, Group};
use consistfair::exact::{parse_rational, to_exact_string, Rate};
use consistfair::harness::{run_experiment_with, ConfigFiles, ExperimentConfig};
use consistfair::perturbation::PlanConfig;
use consistfair::prompting::{render_prompt, render_sentence, PromptSetConfig};
use consistfair::Error;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn core_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Client(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn verdict(v: u8) -> PyResult<Verdict> {
    Verdict::try_from(v).map_err(value_err)
}

fn to_verdicts(vs: &[u8]) -> PyResult<Vec<Verdict>> {
    vs.iter().map(|v| verdict(*v)).collect()
}

fn group(g: u8) -> PyResult<Group> {
    match g {
        0 => Ok(Group::Zero),
        1 => Ok(Group::One),
        _ => Err(PyValueError::new_err(format!("group must be 0 or 1, got {g}"))),
    }
}

fn rate(r: &Rate) -> Option<String> {
    r.value().map(to_exact_string)
}

/// A consistency threshold in [0, 1], parsed exactly from "0.9" or "7/8".
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Threshold(consistfair::Threshold);

#[pymethods]
impl Threshold {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(Threshold).map_err(value_err)
    }

    /// Exact value as "p/q".
    #[getter]
    fn exact(&self) -> String {
        to_exact_string(self.0.value())
    }

    fn __repr__(&self) -> String {
        format!("Threshold('{}')", self.0)
    }
}

/// One loaded input row.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct Record(consistfair::Record);

#[pymethods]
impl Record {
    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn label(&self) -> u8 {
        self.0.label.as_u8()
    }

    /// 0, 1, or None for a sensitive value outside both groups.
    #[getter]
    fn group(&self) -> Option<u8> {
        self.0.group.map(|g| g.index() as u8)
    }

    #[getter]
    fn features(&self) -> BTreeMap<String, String> {
        self.0
            .features
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string()))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Record('{}')", self.0.id)
    }
}

/// Rendered prompts for one prompt-set config.
#[pyclass(frozen)]
struct PromptSet {
    inner: consistfair::prompting::PromptSet,
}

#[pymethods]
impl PromptSet {
    /// Uses the built-in COMPAS schema and material when a TOML text is omitted.
    #[new]
    #[pyo3(signature = (prompts_toml=None, schema_toml=None))]
    fn new(prompts_toml: Option<&str>, schema_toml: Option<&str>) -> PyResult<Self> {
        let schema = load_schema(schema_toml)?;
        let config = match prompts_toml {
            Some(t) => PromptSetConfig::from_toml(t).map_err(value_err)?,
            None => PromptSetConfig::default_compas(),
        };
        let inner = consistfair::prompting::PromptSet::from_config(&config, &schema).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn ids(&self) -> Vec<String> {
        self.inner.prompts.iter().map(|p| p.id.clone()).collect()
    }

    fn render(&self, prompt_id: &str, record: PyRef<'_, Record>) -> PyResult<String> {
        let spec = self
            .inner
            .get(prompt_id)
            .ok_or_else(|| PyValueError::new_err(format!("unknown prompt {prompt_id}")))?;
        let sentence = render_sentence(&record.0, &self.inner.feature_order).map_err(value_err)?;
        render_prompt(spec, &sentence).map_err(value_err)
    }
}

/// A cached verdict source built from a backend config.
#[pyclass(frozen)]
struct Classifier {
    inner: consistfair::Classifier,
}

#[pymethods]
impl Classifier {
    #[new]
    #[pyo3(signature = (backend_toml, cache_path=None))]
    fn new(backend_toml: &str, cache_path: Option<PathBuf>) -> PyResult<Self> {
        let config = consistfair::BackendConfig::from_toml(backend_toml).map_err(value_err)?;
        let inner = consistfair::Classifier::new(&config, cache_path.as_deref()).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn classify(&self, py: Python<'_>, prompt: &str) -> PyResult<u8> {
        py.detach(|| self.inner.classify(prompt))
            .map(|v| v.as_u8())
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// (backend_calls, cache_hits)
    fn stats(&self) -> (u64, u64) {
        let s = self.inner.stats();
        (s.backend_calls, s.cache_hits)
    }
}

fn load_schema(schema_toml: Option<&str>) -> PyResult<consistfair::SchemaConfig> {
    match schema_toml {
        Some(t) => consistfair::SchemaConfig::from_toml(t).map_err(value_err),
        None => Ok(consistfair::SchemaConfig::compas()),
    }
}

#[pyfunction]
fn parse_verdict(text: &str) -> PyResult<u8> {
    consistfair::parse_verdict(text).map(|v| v.as_u8()).map_err(value_err)
}

/// (matches, total)
#[pyfunction]
fn consistency_rate(original: u8, variants: Vec<u8>) -> PyResult<(u64, u64)> {
    let cr = consistfair::consistency_rate(verdict(original)?, &to_verdicts(&variants)?).map_err(value_err)?;
    Ok((cr.matches, cr.total))
}

/// Keeps `original` when `cr >= t`, otherwise flips it. `cr` is "p/q" or a decimal.
#[pyfunction]
fn adjust(original: u8, cr: &str, t: PyRef<'_, Threshold>) -> PyResult<u8> {
    let cr = parse_rational(cr).map_err(value_err)?;
    Ok(consistfair::adjust(verdict(original)?, &cr, &t.0).as_u8())
}

/// Per-group metrics as exact "p/q" strings; None where undefined.
#[pyfunction]
fn group_metrics(
    verdicts: Vec<u8>,
    labels: Vec<u8>,
    groups: Vec<u8>,
) -> PyResult<Vec<BTreeMap<&'static str, Option<String>>>> {
    let gs = groups.iter().map(|g| group(*g)).collect::<PyResult<Vec<_>>>()?;
    let (g0, g1) =
        consistfair::group_metrics(&to_verdicts(&verdicts)?, &to_verdicts(&labels)?, &gs).map_err(value_err)?;
    Ok([g0, g1]
        .iter()
        .map(|g| {
            consistfair::metrics::Metric::ALL
                .iter()
                .map(|m| (m.short(), rate(g.get(*m))))
                .collect()
        })
        .collect())
}

/// `|m_0 - m_1|` per metric as exact "p/q" strings; None where undefined.
#[pyfunction]
fn fairness_gaps(
    verdicts: Vec<u8>,
    labels: Vec<u8>,
    groups: Vec<u8>,
) -> PyResult<BTreeMap<&'static str, Option<String>>> {
    let gs = groups.iter().map(|g| group(*g)).collect::<PyResult<Vec<_>>>()?;
    let (g0, g1) =
        consistfair::group_metrics(&to_verdicts(&verdicts)?, &to_verdicts(&labels)?, &gs).map_err(value_err)?;
    let gaps = consistfair::fairness_gaps(&g0, &g1);
    Ok(consistfair::metrics::Metric::ALL
        .iter()
        .map(|m| (m.short(), rate(gaps.get(*m))))
        .collect())
}

/// Loads CSV text; returns (records, rejected row count).
#[pyfunction]
#[pyo3(signature = (csv_text, schema_toml=None, strict=false))]
fn load_csv(csv_text: &str, schema_toml: Option<&str>, strict: bool) -> PyResult<(Vec<Record>, usize)> {
    let schema = load_schema(schema_toml)?;
    let outcome = load_records(csv_text.as_bytes(), &schema, strict).map_err(value_err)?;
    Ok((
        outcome.records.into_iter().map(Record).collect(),
        outcome.rejected.len(),
    ))
}

#[pyfunction]
#[pyo3(signature = (record, plan_toml=None, schema_toml=None))]
fn generate_variants(
    record: PyRef<'_, Record>,
    plan_toml: Option<&str>,
    schema_toml: Option<&str>,
) -> PyResult<Vec<Record>> {
    let schema = load_schema(schema_toml)?;
    let config = match plan_toml {
        Some(t) => PlanConfig::from_toml(t).map_err(value_err)?,
        None => PlanConfig::compas_default(),
    };
    let plan = config.plan(&schema).map_err(value_err)?;
    let variants = consistfair::generate_variants(&record.0, &plan).map_err(value_err)?;
    Ok(variants.into_iter().map(Record).collect())
}

/// Runs a full audit from config files and returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (data, backend, out, threshold="0.9", schema=None, prompts=None, plan=None, cache=None, jobs=4))]
#[allow(clippy::too_many_arguments)]
fn run_audit(
    py: Python<'_>,
    data: PathBuf,
    backend: PathBuf,
    out: PathBuf,
    threshold: &str,
    schema: Option<PathBuf>,
    prompts: Option<PathBuf>,
    plan: Option<PathBuf>,
    cache: Option<PathBuf>,
    jobs: usize,
) -> PyResult<String> {
    let files = ConfigFiles {
        schema,
        prompts,
        plan,
        backend,
    };
    let t = threshold.parse().map_err(value_err)?;
    let mut config = ExperimentConfig::load(&files, data, out, t, None).map_err(core_err)?;
    config.cache = cache;
    config.jobs = jobs;
    let report = py
        .detach(|| {
            let classifier = consistfair::Classifier::new(&config.backend, config.cache.as_deref())?;
            run_experiment_with(&config, &classifier)
        })
        .map_err(core_err)?;
    serde_json::to_string(&report).map_err(value_err)
}

/// Replays the bundled fixture; True when the report matches the goldens.
#[pyfunction]
fn selftest(py: Python<'_>) -> PyResult<bool> {
    let outcome = py.detach(consistfair::selftest::run).map_err(core_err)?;
    Ok(outcome.passed())
}

#[pymodule]
pub fn consistfair_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Threshold>()?;
    m.add_class::<Record>()?;
    m.add_class::<PromptSet>()?;
    m.add_class::<Classifier>()?;
    m.add_function(wrap_pyfunction!(parse_verdict, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_rate, m)?)?;
    m.add_function(wrap_pyfunction!(adjust, m)?)?;
    m.add_function(wrap_pyfunction!(group_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(fairness_gaps, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(generate_variants, m)?)?;
    m.add_function(wrap_pyfunction!(run_audit, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
