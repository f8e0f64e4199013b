use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AuditEntry, AuditRun, ConfigEcho, DatasetSummary};
use crate::adjustment::ConsistencyAudit;
use crate::client::Verdict;
use crate::error::Error;
use crate::exact::{mean_defined, Rate};
use crate::metrics::{
    fairness_gaps, group_metrics, overall_performance, FairnessGaps, GroupMetrics, Metric, Performance,
};

/// Group metrics, gaps and overall performance for one verdict set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideReport {
    pub group_0: GroupMetrics,
    pub group_1: GroupMetrics,
    pub gaps: FairnessGaps,
    pub overall: Performance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptReport {
    pub prompt_id: String,
    pub audited: usize,
    pub excluded: usize,
    /// Excluded audits per failure kind.
    pub excluded_by_kind: BTreeMap<String, usize>,
    pub flips: usize,
    pub original: SideReport,
    pub adjusted: SideReport,
}

/// Unweighted mean of one gap across prompts, skipping undefined entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeanGap {
    pub metric: Metric,
    pub original: Rate,
    pub adjusted: Rate,
    /// `original - adjusted`; positive means the adjustment narrowed the gap.
    pub improvement: Rate,
    pub undefined_original: usize,
    pub undefined_adjusted: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub tool: String,
    pub version: String,
    pub config: ConfigEcho,
    pub dataset: DatasetSummary,
    pub prompts: Vec<PromptReport>,
    pub mean: Vec<MeanGap>,
}

impl FairnessReport {
    pub fn prompt(&self, id: &str) -> Option<&PromptReport> {
        self.prompts.iter().find(|p| p.prompt_id == id)
    }

    pub fn mean_gap(&self, metric: Metric) -> &MeanGap {
        self.mean
            .iter()
            .find(|m| m.metric == metric)
            .expect("every metric has a mean row")
    }
}

fn side(audits: &[&ConsistencyAudit], pick: impl Fn(&ConsistencyAudit) -> Verdict) -> Result<SideReport, Error> {
    let verdicts: Vec<Verdict> = audits.iter().map(|a| pick(a)).collect();
    let labels: Vec<Verdict> = audits.iter().map(|a| a.label).collect();
    let groups = audits
        .iter()
        .map(|a| {
            a.group
                .ok_or_else(|| Error::Report(format!("audit of {} has no group", a.record_id)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (group_0, group_1) = group_metrics(&verdicts, &labels, &groups)?;
    Ok(SideReport {
        gaps: fairness_gaps(&group_0, &group_1),
        overall: overall_performance(&verdicts, &labels)?,
        group_0,
        group_1,
    })
}

/// Aggregates an audit run into per-prompt metrics and cross-prompt means.
/// Prompts appear in the order of the run's manifest.
pub fn build_report(run: &AuditRun) -> Result<FairnessReport, Error> {
    let ids = &run.manifest.config.prompt_ids;
    if ids.is_empty() {
        return Err(Error::Report("run has no prompts".into()));
    }
    let mut prompts = Vec::with_capacity(ids.len());
    for id in ids {
        let mut audits = Vec::new();
        let mut excluded_by_kind = BTreeMap::new();
        for entry in run.entries.iter().filter(|e| e.prompt_id() == id) {
            match entry {
                AuditEntry::Ok(a) => audits.push(a),
                AuditEntry::Failed(f) => *excluded_by_kind.entry(f.error_kind.clone()).or_insert(0) += 1,
            }
        }
        prompts.push(PromptReport {
            prompt_id: id.clone(),
            audited: audits.len(),
            excluded: excluded_by_kind.values().sum(),
            excluded_by_kind,
            flips: audits.iter().filter(|a| a.flipped).count(),
            original: side(&audits, |a| a.original)?,
            adjusted: side(&audits, |a| a.adjusted)?,
        });
    }
    if let Some(stray) = run.entries.iter().find(|e| !ids.iter().any(|id| id == e.prompt_id())) {
        return Err(Error::Report(format!("audit for unknown prompt {}", stray.prompt_id())));
    }

    let mean = Metric::ALL
        .iter()
        .map(|&metric| {
            let (original, undefined_original) = mean_defined(prompts.iter().map(|p| p.original.gaps.get(metric)));
            let (adjusted, undefined_adjusted) = mean_defined(prompts.iter().map(|p| p.adjusted.gaps.get(metric)));
            let improvement = match (original.value(), adjusted.value()) {
                (Some(o), Some(a)) => Rate::defined(o - a),
                _ => Rate::UNDEFINED,
            };
            MeanGap {
                metric,
                original,
                adjusted,
                improvement,
                undefined_original,
                undefined_adjusted,
            }
        })
        .collect();

    Ok(FairnessReport {
        tool: run.manifest.tool.clone(),
        version: run.manifest.version.clone(),
        config: run.manifest.config.clone(),
        dataset: run.manifest.dataset,
        prompts,
        mean,
    })
}
