//! Counterfactual consistency auditing for binary LLM classifiers.
//!
//! Each input record is rendered into a sentence, perturbed along a set of
//! sensitive attributes, and classified under a fixed prompt. The fraction of
//! variants that agree with the original verdict (the consistency rate) decides
//! whether the verdict is kept or flipped. Group fairness gaps are then computed
//! on both the original and the adjusted verdicts.
//!
//! The pipeline modules, bottom-up:
//!
//! - [`dataset`]: tabular record loading, validation and group mapping
//! - [`prompting`]: sentence rendering and the eight in-context prompt designs
//! - [`perturbation`]: counterfactual variant enumeration
//! - [`client`]: verdict backends (HTTP, synthetic, replay) with a digest-keyed cache
//! - [`adjustment`]: consistency rate and the threshold flip rule
//! - [`metrics`]: per-group confusion metrics and fairness gaps
//! - [`harness`]: experiment orchestration, sweeps and report emission
//! - [`selftest`]: bundled synthetic fixtures and golden-report checks

pub mod adjustment;
pub mod client;
pub mod dataset;
pub mod error;
pub mod exact;
pub mod harness;
pub mod metrics;
pub mod perturbation;
pub mod prompting;
pub mod selftest;

pub use adjustment::{adjust, consistency_rate, ConsistencyAudit, ConsistencyRate};
pub use client::{parse_verdict, BackendConfig, Classifier, Verdict};
pub use dataset::{Group, Record, SchemaConfig};
pub use error::Error;
pub use exact::{Rational, Threshold};
pub use metrics::{fairness_gaps, group_metrics, FairnessGaps, GroupMetrics};
pub use perturbation::{generate_variants, PerturbationPlan};
pub use prompting::PromptSpec;
