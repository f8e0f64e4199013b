//! Consistency rate and the threshold flip rule.
//!
//! For a record `x` under prompt `P`, the consistency rate is the fraction of
//! the `N` counterfactual variants whose verdict equals the verdict on `x`.
//! The adjusted verdict keeps the original when `cr >= t` and takes its
//! complement otherwise. Both sides of the comparison are exact rationals, so
//! `7/8 < 9/10` holds regardless of how `t` was written.

use serde::{Deserialize, Serialize};

use crate::client::{Classifier, ClientError, Verdict};
use crate::dataset::{Group, Record};
use crate::exact::{ratio, Rational, Threshold};
use crate::perturbation::{generate_variants, PerturbationError, PerturbationPlan};
use crate::prompting::{render_prompt, render_sentence, PromptError, PromptSpec};

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("consistency rate of an empty variant list")]
    EmptyVariants,
    #[error(transparent)]
    Perturbation(#[from] PerturbationError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// `matches / total`, kept unreduced so the variant count stays visible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConsistencyRate {
    pub matches: u64,
    pub total: u64,
}

impl ConsistencyRate {
    pub fn value(&self) -> Rational {
        ratio(self.matches, self.total)
    }
}

pub fn consistency_rate(original: Verdict, variants: &[Verdict]) -> Result<ConsistencyRate, AuditError> {
    if variants.is_empty() {
        return Err(AuditError::EmptyVariants);
    }
    let matches = variants.iter().filter(|v| **v == original).count() as u64;
    Ok(ConsistencyRate {
        matches,
        total: variants.len() as u64,
    })
}

/// Keeps `original` when `cr >= t`, otherwise returns `1 - original`.
pub fn adjust(original: Verdict, cr: &Rational, t: &Threshold) -> Verdict {
    if cr >= t.value() {
        original
    } else {
        original.flip()
    }
}

/// Outcome of auditing one record under one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyAudit {
    pub record_id: String,
    pub prompt_id: String,
    pub group: Option<Group>,
    pub label: Verdict,
    pub original: Verdict,
    pub variants: Vec<Verdict>,
    pub cr: ConsistencyRate,
    pub threshold: Threshold,
    pub adjusted: Verdict,
    pub flipped: bool,
}

impl ConsistencyAudit {
    pub fn from_verdicts(
        record: &Record,
        prompt_id: &str,
        original: Verdict,
        variants: Vec<Verdict>,
        threshold: Threshold,
    ) -> Result<Self, AuditError> {
        let cr = consistency_rate(original, &variants)?;
        let adjusted = adjust(original, &cr.value(), &threshold);
        Ok(Self {
            record_id: record.id.clone(),
            prompt_id: prompt_id.to_string(),
            group: record.group,
            label: record.label,
            original,
            variants,
            cr,
            threshold,
            adjusted,
            flipped: adjusted != original,
        })
    }

    /// Re-applies the flip rule at another threshold; no new classification.
    pub fn with_threshold(&self, threshold: &Threshold) -> Self {
        let adjusted = adjust(self.original, &self.cr.value(), threshold);
        Self {
            threshold: threshold.clone(),
            adjusted,
            flipped: adjusted != self.original,
            ..self.clone()
        }
    }

    /// Checks the stored fields against each other.
    pub fn is_consistent(&self) -> bool {
        let Ok(cr) = consistency_rate(self.original, &self.variants) else {
            return false;
        };
        let adjusted = adjust(self.original, &cr.value(), &self.threshold);
        cr == self.cr && adjusted == self.adjusted && self.flipped == (adjusted != self.original)
    }
}

/// Classifies the record and each of its variants under `prompt`, then applies
/// the flip rule. Issues `1 + N` classify calls; any failure fails the audit.
pub fn audit_record(
    record: &Record,
    prompt: &PromptSpec,
    feature_order: &[String],
    plan: &PerturbationPlan,
    classifier: &Classifier,
    threshold: &Threshold,
) -> Result<ConsistencyAudit, AuditError> {
    let variants = generate_variants(record, plan)?;
    let ask = |r: &Record| -> Result<Verdict, AuditError> {
        let sentence = render_sentence(r, feature_order)?;
        Ok(classifier.classify(&render_prompt(prompt, &sentence)?)?)
    };
    let original = ask(record)?;
    let verdicts = variants.iter().map(ask).collect::<Result<Vec<_>, _>>()?;
    ConsistencyAudit::from_verdicts(record, &prompt.id, original, verdicts, threshold.clone())
}
