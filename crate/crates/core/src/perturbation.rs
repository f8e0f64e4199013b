//! Counterfactual variants: every assignment of the configured sensitive
//! attributes, enumerated as an odometer over the axis domains.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureValue, Group, Record, SchemaConfig};
use crate::prompting::RawCell;

#[derive(Debug, thiserror::Error)]
pub enum PerturbationError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("record `{record}` has no feature `{feature}`")]
    MissingFeature { record: String, feature: String },
    #[error("record `{record}`: `{feature}` value `{value}` is not in the axis domain")]
    ValueOutsideAxis {
        record: String,
        feature: String,
        value: String,
    },
    #[error("no prefix of the configured axes has {requested} assignments")]
    Unreachable { requested: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisConfig {
    pub feature: String,
    pub values: Vec<RawCell>,
}

/// Plan config file: axes in priority order plus extension axes used to reach
/// larger variant counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanConfig {
    #[serde(default = "default_identity")]
    pub include_identity: bool,
    pub axes: Vec<AxisConfig>,
    #[serde(default)]
    pub extra_axes: Vec<AxisConfig>,
}

fn default_identity() -> bool {
    true
}

impl PlanConfig {
    pub fn from_toml(text: &str) -> Result<Self, PerturbationError> {
        toml::from_str(text).map_err(|e| PerturbationError::InvalidPlan(e.to_string()))
    }

    /// Sex, race and charge degree, race first.
    pub fn compas_default() -> Self {
        let axis = |feature: &str, values: &[&str]| AxisConfig {
            feature: feature.to_string(),
            values: values.iter().map(|v| RawCell::Text(v.to_string())).collect(),
        };
        let counts = |feature: &str| AxisConfig {
            feature: feature.to_string(),
            values: vec![RawCell::Int(0), RawCell::Int(1)],
        };
        Self {
            include_identity: true,
            axes: vec![
                axis("race", &["Caucasian", "African-American"]),
                axis("sex", &["Male", "Female"]),
                axis("c_charge_degree", &["M", "F"]),
            ],
            extra_axes: vec![counts("juv_fel_count"), counts("juv_misd_count")],
        }
    }

    pub fn plan(&self, schema: &SchemaConfig) -> Result<PerturbationPlan, PerturbationError> {
        PerturbationPlan::new(compile_axes(&self.axes, schema)?, self.include_identity, schema)
    }

    /// The shortest prefix of `axes ++ extra_axes` whose domain product is
    /// exactly `requested_n`.
    pub fn plan_for_n(&self, schema: &SchemaConfig, requested_n: u64) -> Result<PerturbationPlan, PerturbationError> {
        let all: Vec<AxisConfig> = self.axes.iter().chain(&self.extra_axes).cloned().collect();
        let compiled = compile_axes(&all, schema)?;
        let mut product = 1u64;
        let mut take = 0;
        while product < requested_n && take < compiled.len() {
            product = product.saturating_mul(compiled[take].values.len() as u64);
            take += 1;
        }
        if product != requested_n {
            return Err(PerturbationError::Unreachable { requested: requested_n });
        }
        PerturbationPlan::new(compiled[..take].to_vec(), self.include_identity, schema)
    }
}

fn compile_axes(axes: &[AxisConfig], schema: &SchemaConfig) -> Result<Vec<Axis>, PerturbationError> {
    axes.iter()
        .map(|a| {
            let spec = schema.feature(&a.feature).ok_or_else(|| {
                PerturbationError::InvalidPlan(format!("axis feature `{}` is not in the schema", a.feature))
            })?;
            let values = a
                .values
                .iter()
                .map(|v| {
                    let text = match v {
                        RawCell::Int(n) => n.to_string(),
                        RawCell::Text(s) => s.clone(),
                    };
                    spec.parse(&text).map_err(PerturbationError::InvalidPlan)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Axis {
                feature: a.feature.clone(),
                values,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Axis {
    pub feature: String,
    pub values: Vec<FeatureValue>,
}

/// A validated set of axes. Group ids of variants are re-derived through the
/// schema's sensitive mapping captured here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub axes: Vec<Axis>,
    pub include_identity: bool,
    sensitive_feature: String,
    groups: BTreeMap<String, Group>,
}

impl PerturbationPlan {
    pub fn new(axes: Vec<Axis>, include_identity: bool, schema: &SchemaConfig) -> Result<Self, PerturbationError> {
        let mut seen = HashSet::new();
        for axis in &axes {
            if schema.feature(&axis.feature).is_none() {
                return Err(PerturbationError::InvalidPlan(format!(
                    "axis feature `{}` is not in the schema",
                    axis.feature
                )));
            }
            if !seen.insert(axis.feature.as_str()) {
                return Err(PerturbationError::InvalidPlan(format!(
                    "feature `{}` appears on two axes",
                    axis.feature
                )));
            }
            let distinct: HashSet<&FeatureValue> = axis.values.iter().collect();
            if distinct.len() != axis.values.len() || distinct.len() < 2 {
                return Err(PerturbationError::InvalidPlan(format!(
                    "axis `{}` needs at least 2 distinct values",
                    axis.feature
                )));
            }
        }
        let plan = Self {
            axes,
            include_identity,
            sensitive_feature: schema.sensitive_feature.clone(),
            groups: schema.groups.clone(),
        };
        if plan.variant_count() == 0 {
            return Err(PerturbationError::InvalidPlan("plan yields no variants".into()));
        }
        Ok(plan)
    }

    /// Product of the domain sizes.
    pub fn assignment_count(&self) -> u64 {
        self.axes.iter().map(|a| a.values.len() as u64).product()
    }

    /// N: variants produced per record.
    pub fn variant_count(&self) -> u64 {
        let product = self.assignment_count();
        if self.include_identity {
            product
        } else {
            product - 1
        }
    }

    fn group_of(&self, value: &FeatureValue) -> Option<Group> {
        match value {
            FeatureValue::Categorical(s) => self.groups.get(s).copied(),
            FeatureValue::Count(_) => None,
        }
    }
}

/// All variants of `record`, in lexicographic order of axis value indices
/// (first axis most significant).
pub fn generate_variants(record: &Record, plan: &PerturbationPlan) -> Result<Vec<Record>, PerturbationError> {
    let mut original_index = Vec::with_capacity(plan.axes.len());
    for axis in &plan.axes {
        let value = record
            .get(&axis.feature)
            .ok_or_else(|| PerturbationError::MissingFeature {
                record: record.id.clone(),
                feature: axis.feature.clone(),
            })?;
        let idx = axis
            .values
            .iter()
            .position(|v| v == value)
            .ok_or_else(|| PerturbationError::ValueOutsideAxis {
                record: record.id.clone(),
                feature: axis.feature.clone(),
                value: value.to_string(),
            })?;
        original_index.push(idx);
    }

    let mut variants = Vec::with_capacity(plan.variant_count() as usize);
    let mut index = vec![0usize; plan.axes.len()];
    loop {
        if plan.include_identity || index != original_index {
            let mut variant = record.clone();
            for (axis, &i) in plan.axes.iter().zip(&index) {
                variant.features.insert(axis.feature.clone(), axis.values[i].clone());
            }
            variant.group = variant.get(&plan.sensitive_feature).and_then(|v| plan.group_of(v));
            variants.push(variant);
        }
        // Odometer increment, last axis fastest.
        let mut pos = plan.axes.len();
        loop {
            if pos == 0 {
                return Ok(variants);
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < plan.axes[pos].values.len() {
                break;
            }
            index[pos] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::Verdict;

    fn schema() -> SchemaConfig {
        SchemaConfig::compas()
    }

    fn sample(race: &str) -> Record {
        let raw: BTreeMap<String, String> = [
            ("sex", "Male"),
            ("age", "30"),
            ("race", race),
            ("juv_fel_count", "0"),
            ("juv_misd_count", "1"),
            ("priors_count", "2"),
            ("c_charge_desc", "Battery"),
            ("c_charge_degree", "M"),
            ("decile_score", "4"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        schema().record_from_raw("s1", &raw, Verdict::One).unwrap()
    }

    fn three_axes(identity: bool) -> PerturbationPlan {
        let mut cfg = PlanConfig::compas_default();
        cfg.include_identity = identity;
        cfg.plan(&schema()).unwrap()
    }

    #[test]
    fn three_binary_axes_give_eight() {
        let plan = three_axes(true);
        assert_eq!(plan.variant_count(), 8);
        let variants = generate_variants(&sample("Caucasian"), &plan).unwrap();
        assert_eq!(variants.len(), 8);
        assert_eq!(variants.iter().filter(|v| **v == sample("Caucasian")).count(), 1);
        assert_eq!(three_axes(false).variant_count(), 7);
        assert_eq!(
            generate_variants(&sample("Caucasian"), &three_axes(false))
                .unwrap()
                .len(),
            7
        );
    }

    #[test]
    fn empty_axes_identity_only() {
        let plan = PerturbationPlan::new(vec![], true, &schema()).unwrap();
        let r = sample("Caucasian");
        assert_eq!(generate_variants(&r, &plan).unwrap(), vec![r]);
        assert!(PerturbationPlan::new(vec![], false, &schema()).is_err());
    }

    #[test]
    fn single_race_axis_without_identity() {
        let cfg = PlanConfig {
            include_identity: false,
            axes: vec![PlanConfig::compas_default().axes[0].clone()],
            extra_axes: vec![],
        };
        let plan = cfg.plan(&schema()).unwrap();
        let r = sample("Caucasian");
        let variants = generate_variants(&r, &plan).unwrap();
        assert_eq!(variants.len(), 1);
        let v = &variants[0];
        assert_eq!(
            v.get("race"),
            Some(&FeatureValue::Categorical("African-American".into()))
        );
        assert_eq!(v.group, Some(Group::One));
        for (name, value) in &r.features {
            if name != "race" {
                assert_eq!(v.get(name), Some(value));
            }
        }
    }

    #[test]
    fn lexicographic_order() {
        let variants = generate_variants(&sample("Caucasian"), &three_axes(true)).unwrap();
        let key = |v: &Record| {
            ["race", "sex", "c_charge_degree"]
                .map(|f| v.get(f).unwrap().to_string())
                .join("/")
        };
        let keys: Vec<String> = variants.iter().map(key).collect();
        assert_eq!(keys[0], "Caucasian/Male/M");
        assert_eq!(keys[1], "Caucasian/Male/F");
        assert_eq!(keys[2], "Caucasian/Female/M");
        assert_eq!(keys[4], "African-American/Male/M");
        assert_eq!(keys[7], "African-American/Female/F");
    }

    #[test]
    fn out_of_domain_value_is_rejected() {
        assert!(matches!(
            generate_variants(&sample("Hispanic"), &three_axes(true)),
            Err(PerturbationError::ValueOutsideAxis { .. })
        ));
    }

    #[test]
    fn missing_axis_feature_is_rejected() {
        let mut r = sample("Caucasian");
        r.features.shift_remove("sex");
        assert!(matches!(
            generate_variants(&r, &three_axes(true)),
            Err(PerturbationError::MissingFeature { .. })
        ));
    }

    #[test]
    fn plan_validation() {
        let mut cfg = PlanConfig::compas_default();
        cfg.axes[0].values.truncate(1);
        assert!(cfg.plan(&schema()).is_err());
        let mut cfg = PlanConfig::compas_default();
        cfg.axes[1].feature = "race".into();
        assert!(cfg.plan(&schema()).is_err());
        let mut cfg = PlanConfig::compas_default();
        cfg.axes[0].feature = "height".into();
        assert!(cfg.plan(&schema()).is_err());
        let mut cfg = PlanConfig::compas_default();
        cfg.axes[0].values[1] = RawCell::Text("Martian".into());
        assert!(cfg.plan(&schema()).is_err());
    }

    #[test]
    fn plan_for_n_extends_by_priority() {
        let cfg = PlanConfig::compas_default();
        assert_eq!(cfg.plan_for_n(&schema(), 8).unwrap(), cfg.plan(&schema()).unwrap());
        let sixteen = cfg.plan_for_n(&schema(), 16).unwrap();
        assert_eq!(sixteen.axes.len(), 4);
        assert_eq!(sixteen.axes[3].feature, "juv_fel_count");
        assert_eq!(cfg.plan_for_n(&schema(), 32).unwrap().axes.len(), 5);
        assert_eq!(cfg.plan_for_n(&schema(), 2).unwrap().axes[0].feature, "race");
        assert_eq!(cfg.plan_for_n(&schema(), 1).unwrap().axes.len(), 0);
        assert!(matches!(
            cfg.plan_for_n(&schema(), 12),
            Err(PerturbationError::Unreachable { .. })
        ));
        assert!(cfg.plan_for_n(&schema(), 64).is_err());
    }

    #[test]
    fn plan_toml_round_trip() {
        let cfg = PlanConfig::compas_default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PlanConfig::from_toml(&text).unwrap(), cfg);
    }
}
