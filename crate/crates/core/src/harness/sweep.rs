use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::{build_report, FairnessReport, MeanGap};
use super::{load_data, run_audits, AuditRun, AuditSettings, ExperimentConfig};
use crate::client::Classifier;
use crate::error::Error;
use crate::exact::Threshold;
use crate::perturbation::PerturbationPlan;

/// One setting of a swept parameter and its aggregate outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    /// The threshold or variant count, as text.
    pub parameter: String,
    pub flips: usize,
    pub flips_per_prompt: BTreeMap<String, usize>,
    pub mean: Vec<MeanGap>,
}

impl SweepRow {
    fn from_report(parameter: String, report: &FairnessReport) -> Self {
        let flips_per_prompt: BTreeMap<String, usize> =
            report.prompts.iter().map(|p| (p.prompt_id.clone(), p.flips)).collect();
        Self {
            parameter,
            flips: flips_per_prompt.values().sum(),
            flips_per_prompt,
            mean: report.mean.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSweep {
    pub rows: Vec<SweepRow>,
}

/// Re-applies the flip rule at each threshold to a stored run. Issues no
/// classifications.
pub fn sweep_threshold(run: &AuditRun, thresholds: &[Threshold]) -> Result<ThresholdSweep, Error> {
    let rows = thresholds
        .iter()
        .map(|t| {
            Ok(SweepRow::from_report(
                t.to_string(),
                &build_report(&run.with_threshold(t))?,
            ))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(ThresholdSweep { rows })
}

/// Runs a full audit per plan, sharing one classifier (and so one cache)
/// across plans. Each run's trail goes to `out_dir/n<N>/`.
pub fn sweep_perturbations(
    config: &ExperimentConfig,
    plans: &[PerturbationPlan],
    classifier: &Classifier,
) -> Result<PerturbationSweep, Error> {
    let data = load_data(&config.data, &config.schema, config.strict)?;
    let mut rows = Vec::with_capacity(plans.len());
    for plan in plans {
        let settings = AuditSettings {
            prompts: &config.prompts,
            plan,
            threshold: &config.threshold,
            jobs: config.jobs,
            seed: config.seed,
        };
        let run = run_audits(&data, &settings, classifier).map_err(|a| a.error)?;
        let n = plan.variant_count();
        run.write(&config.out_dir.join(format!("n{n}")))?;
        rows.push(SweepRow::from_report(n.to_string(), &build_report(&run)?));
    }
    Ok(PerturbationSweep { rows })
}
