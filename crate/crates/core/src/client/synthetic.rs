//! Rule-table classifier used as a deterministic stand-in for a model.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClientError, Verdict};
use crate::exact::{parse_rational, Rational};
use crate::prompting::subject_of;

/// Which part of the prompt a rule inspects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleScope {
    /// The whole rendered prompt, in-context examples included.
    #[default]
    Prompt,
    /// Only the sentence under classification.
    Subject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticRule {
    /// Every substring must be present for the rule to fire.
    #[serde(default)]
    pub all: Vec<String>,
    #[serde(default)]
    pub scope: RuleScope,
    /// A default rule matches unconditionally and must come last.
    #[serde(default)]
    pub default: bool,
    /// Fixed answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Answer `1` with this probability, drawn from a digest of (seed, prompt).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_one: Option<String>,
}

impl SyntheticRule {
    pub fn when_all(all: &[&str], scope: RuleScope, verdict: Verdict) -> Self {
        Self {
            all: all.iter().map(|s| s.to_string()).collect(),
            scope,
            default: false,
            verdict: Some(verdict),
            p_one: None,
        }
    }

    pub fn otherwise(verdict: Verdict) -> Self {
        Self {
            all: Vec::new(),
            scope: RuleScope::Prompt,
            default: true,
            verdict: Some(verdict),
            p_one: None,
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        if self.default {
            return true;
        }
        let haystack = match self.scope {
            RuleScope::Prompt => prompt,
            RuleScope::Subject => subject_of(prompt).unwrap_or(""),
        };
        self.all.iter().all(|needle| haystack.contains(needle.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    #[serde(default)]
    pub seed: u64,
    pub rules: Vec<SyntheticRule>,
}

#[derive(Debug, Clone)]
enum Outcome {
    Fixed(Verdict),
    Bernoulli(Rational),
}

#[derive(Debug, Clone)]
struct CompiledRule {
    rule: SyntheticRule,
    outcome: Outcome,
}

/// A validated rule table. First matching rule wins.
#[derive(Debug, Clone)]
pub struct RuleTable {
    seed: u64,
    rules: Vec<CompiledRule>,
}

impl RuleTable {
    pub fn new(config: &SyntheticConfig) -> Result<Self, ClientError> {
        let config_err = |m: String| ClientError::Config(m);
        let Some(last) = config.rules.last() else {
            return Err(config_err("synthetic rule table is empty".into()));
        };
        if !last.default {
            return Err(config_err("synthetic rule table needs a final default rule".into()));
        }
        let mut rules = Vec::with_capacity(config.rules.len());
        for (i, rule) in config.rules.iter().enumerate() {
            if rule.default && i + 1 != config.rules.len() {
                return Err(config_err(format!("rule {i}: default rule must be last")));
            }
            if !rule.default && rule.all.is_empty() {
                return Err(config_err(format!("rule {i}: non-default rule without conditions")));
            }
            let outcome = match (&rule.verdict, &rule.p_one) {
                (Some(v), None) => Outcome::Fixed(*v),
                (None, Some(p)) => {
                    let p = parse_rational(p).map_err(|e| config_err(format!("rule {i}: {e}")))?;
                    if p < Rational::from_integer(0.into()) || p > Rational::from_integer(1.into()) {
                        return Err(config_err(format!("rule {i}: p_one outside [0, 1]")));
                    }
                    Outcome::Bernoulli(p)
                }
                _ => {
                    return Err(config_err(format!(
                        "rule {i}: exactly one of `verdict` or `p_one` is required"
                    )))
                }
            };
            rules.push(CompiledRule {
                rule: rule.clone(),
                outcome,
            });
        }
        Ok(Self {
            seed: config.seed,
            rules,
        })
    }

    /// Pure function of (rules, seed, prompt).
    pub fn classify(&self, prompt: &str) -> Verdict {
        let rule = self
            .rules
            .iter()
            .find(|r| r.rule.matches(prompt))
            .expect("validated table ends in a default rule");
        match &rule.outcome {
            Outcome::Fixed(v) => *v,
            Outcome::Bernoulli(p) => Verdict::from(self.coin(prompt) < *p),
        }
    }

    /// Uniform draw in [0, 1) from the prompt digest.
    fn coin(&self, prompt: &str) -> Rational {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        let digest = hasher.finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&digest[..8]);
        let draw = u64::from_le_bytes(word);
        Rational::new(draw.into(), (num_bigint::BigInt::from(1u8) << 64u32).clone())
    }

    /// The raw completion text the synthetic backend emits.
    pub fn respond(&self, prompt: &str) -> String {
        format!("Answer: {}", self.classify(prompt))
    }
}
