//! COMPAS-style tabular records: schema, loading, validation, group mapping.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::client::Verdict;
use crate::exact::Rate;

/// Binary demographic group id. `Zero` is the reference group, `One` the
/// group the audit is concerned with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Group {
    Zero,
    One,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::Zero, Group::One];

    pub fn index(self) -> usize {
        match self {
            Group::Zero => 0,
            Group::One => 1,
        }
    }
}

impl From<Group> for u8 {
    fn from(g: Group) -> u8 {
        g.index() as u8
    }
}

impl TryFrom<u8> for Group {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Group::Zero),
            1 => Ok(Group::One),
            other => Err(format!("group id must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("input is empty (no header row)")]
    EmptyInput,
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {reason}")]
    InvalidRow { row: usize, reason: String },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("feature `{0}` is not numeric")]
    NotNumeric(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical {
        domain: Vec<String>,
    },
    /// Non-negative integer count.
    Count,
    /// Strictly positive integer (age).
    Age,
    Score {
        #[serde(default = "default_score_min")]
        min: u8,
        #[serde(default = "default_score_max")]
        max: u8,
    },
    Text,
}

fn default_score_min() -> u8 {
    1
}

fn default_score_max() -> u8 {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Count(u32),
    Categorical(String),
}

impl FeatureValue {
    pub fn as_integer(&self) -> Option<u32> {
        match self {
            FeatureValue::Count(n) => Some(*n),
            FeatureValue::Categorical(_) => None,
        }
    }
}

impl fmt::Display for FeatureValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureValue::Count(n) => write!(f, "{n}"),
            FeatureValue::Categorical(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    /// Source column; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }

    /// Parses and validates a raw cell.
    pub fn parse(&self, raw: &str) -> Result<FeatureValue, String> {
        let raw = raw.trim();
        let integer = || {
            raw.parse::<u32>()
                .map_err(|_| format!("`{}`: `{raw}` is not a non-negative integer", self.name))
        };
        match &self.kind {
            FeatureKind::Categorical { domain } => {
                if domain.iter().any(|d| d == raw) {
                    Ok(FeatureValue::Categorical(raw.to_string()))
                } else {
                    Err(format!("`{}`: `{raw}` is outside the declared domain", self.name))
                }
            }
            FeatureKind::Count => integer().map(FeatureValue::Count),
            FeatureKind::Age => {
                let n = integer()?;
                if n == 0 {
                    return Err(format!("`{}`: age must be positive", self.name));
                }
                Ok(FeatureValue::Count(n))
            }
            FeatureKind::Score { min, max } => {
                let n = integer()?;
                if n < u32::from(*min) || n > u32::from(*max) {
                    return Err(format!("`{}`: score {n} is outside [{min}, {max}]", self.name));
                }
                Ok(FeatureValue::Count(n))
            }
            FeatureKind::Text => Ok(FeatureValue::Categorical(raw.to_string())),
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self.kind,
            FeatureKind::Count | FeatureKind::Age | FeatureKind::Score { .. }
        )
    }
}

/// Column layout, feature domains and the sensitive-feature group mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
    pub label_column: String,
    pub sensitive_feature: String,
    /// Sensitive value to group id. Values not listed load with no group and
    /// are left out of fairness computations.
    pub groups: BTreeMap<String, Group>,
    pub features: Vec<FeatureSpec>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self::compas()
    }
}

impl SchemaConfig {
    /// Public COMPAS two-year recidivism column names.
    pub fn compas() -> Self {
        let categorical = |name: &str, domain: &[&str]| FeatureSpec {
            name: name.to_string(),
            column: None,
            kind: FeatureKind::Categorical {
                domain: domain.iter().map(|s| s.to_string()).collect(),
            },
        };
        let plain = |name: &str, kind: FeatureKind| FeatureSpec {
            name: name.to_string(),
            column: None,
            kind,
        };
        Self {
            id_column: Some("id".to_string()),
            label_column: "two_year_recid".to_string(),
            sensitive_feature: "race".to_string(),
            groups: BTreeMap::from([
                ("Caucasian".to_string(), Group::Zero),
                ("African-American".to_string(), Group::One),
            ]),
            features: vec![
                categorical("sex", &["Male", "Female"]),
                plain("age", FeatureKind::Age),
                categorical(
                    "race",
                    &[
                        "African-American",
                        "Asian",
                        "Caucasian",
                        "Hispanic",
                        "Native American",
                        "Other",
                    ],
                ),
                plain("juv_fel_count", FeatureKind::Count),
                plain("juv_misd_count", FeatureKind::Count),
                plain("priors_count", FeatureKind::Count),
                plain("c_charge_desc", FeatureKind::Text),
                categorical("c_charge_degree", &["F", "M"]),
                plain("decile_score", FeatureKind::Score { min: 1, max: 10 }),
            ],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, DatasetError> {
        let schema: SchemaConfig = toml::from_str(text).map_err(|e| DatasetError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut columns = HashSet::new();
        let mut names = HashSet::new();
        let reserved = [Some(self.label_column.as_str()), self.id_column.as_deref()];
        for col in reserved.into_iter().flatten() {
            if !columns.insert(col.to_string()) {
                return Err(DatasetError::Schema(format!("column `{col}` is mapped twice")));
            }
        }
        for spec in &self.features {
            if spec.name.is_empty() || spec.name.contains([':', ',', '\n']) {
                return Err(DatasetError::Schema(format!(
                    "feature name `{}` must be non-empty without `:`, `,` or newlines",
                    spec.name
                )));
            }
            if !names.insert(spec.name.clone()) {
                return Err(DatasetError::Schema(format!("feature `{}` declared twice", spec.name)));
            }
            if !columns.insert(spec.column().to_string()) {
                return Err(DatasetError::Schema(format!(
                    "column `{}` is mapped twice",
                    spec.column()
                )));
            }
            if let FeatureKind::Score { min, max } = spec.kind {
                if min > max {
                    return Err(DatasetError::Schema(format!("`{}`: empty score range", spec.name)));
                }
            }
        }
        let sensitive = self.feature(&self.sensitive_feature).ok_or_else(|| {
            DatasetError::Schema(format!(
                "sensitive feature `{}` is not in the schema",
                self.sensitive_feature
            ))
        })?;
        let FeatureKind::Categorical { domain } = &sensitive.kind else {
            return Err(DatasetError::Schema("the sensitive feature must be categorical".into()));
        };
        for value in self.groups.keys() {
            if !domain.contains(value) {
                return Err(DatasetError::Schema(format!(
                    "group value `{value}` is outside the sensitive domain"
                )));
            }
        }
        for g in Group::ALL {
            if !self.groups.values().any(|v| *v == g) {
                return Err(DatasetError::Schema(format!("no sensitive value maps to group {g}")));
            }
        }
        Ok(())
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn group_of(&self, value: &FeatureValue) -> Option<Group> {
        match value {
            FeatureValue::Categorical(s) => self.groups.get(s).copied(),
            FeatureValue::Count(_) => None,
        }
    }

    /// The canonical sensitive value for a group (first in key order).
    pub fn value_for_group(&self, group: Group) -> Option<&str> {
        self.groups.iter().find(|(_, g)| **g == group).map(|(k, _)| k.as_str())
    }

    /// Builds a record from named raw values, e.g. prompt example material.
    pub fn record_from_raw(
        &self,
        id: &str,
        raw: &BTreeMap<String, String>,
        label: Verdict,
    ) -> Result<Record, DatasetError> {
        let mut features = IndexMap::new();
        for spec in &self.features {
            let cell = raw
                .get(&spec.name)
                .ok_or_else(|| DatasetError::MissingColumn(spec.name.clone()))?;
            let value = spec
                .parse(cell)
                .map_err(|reason| DatasetError::InvalidRow { row: 0, reason })?;
            features.insert(spec.name.clone(), value);
        }
        for key in raw.keys() {
            if self.feature(key).is_none() {
                return Err(DatasetError::UnknownFeature(key.clone()));
            }
        }
        let mut record = Record {
            id: id.to_string(),
            features,
            label,
            group: None,
        };
        record.group = self.group_of(&record.features[&self.sensitive_feature]);
        Ok(record)
    }
}

/// One individual: ordered features, ground-truth label and group id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub features: IndexMap<String, FeatureValue>,
    /// Ground truth: `One` = re-offended within two years.
    pub label: Verdict,
    /// `None` for sensitive values outside the two audited groups.
    pub group: Option<Group>,
}

impl Record {
    pub fn get(&self, feature: &str) -> Option<&FeatureValue> {
        self.features.get(feature)
    }
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowDiagnostic {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub records: Vec<Record>,
    pub rejected: Vec<RowDiagnostic>,
}

impl LoadOutcome {
    pub fn out_of_scope(&self) -> usize {
        self.records.iter().filter(|r| r.group.is_none()).count()
    }
}

/// Reads a comma-delimited table with a header row.
///
/// Invalid rows are skipped and reported in [`LoadOutcome::rejected`]; with
/// `strict` the first invalid row aborts the load instead.
pub fn load_records<R: Read>(source: R, schema: &SchemaConfig, strict: bool) -> Result<LoadOutcome, DatasetError> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(DatasetError::EmptyInput);
    }
    let position = |col: &str| headers.iter().position(|h| h.trim() == col);
    let require = |col: &str| position(col).ok_or_else(|| DatasetError::MissingColumn(col.into()));

    let label_idx = require(&schema.label_column)?;
    let id_idx = match &schema.id_column {
        Some(col) => Some(require(col)?),
        None => None,
    };
    let feature_idx = schema
        .features
        .iter()
        .map(|f| require(f.column()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut outcome = LoadOutcome::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let parsed = row
            .map_err(|e| e.to_string())
            .and_then(|row| parse_row(&row, row_no, schema, label_idx, id_idx, &feature_idx));
        match parsed {
            Ok(record) => outcome.records.push(record),
            Err(reason) if strict => return Err(DatasetError::InvalidRow { row: row_no, reason }),
            Err(reason) => {
                log::warn!("skipping row {row_no}: {reason}");
                outcome.rejected.push(RowDiagnostic { row: row_no, reason });
            }
        }
    }
    Ok(outcome)
}

fn parse_row(
    row: &csv::StringRecord,
    row_no: usize,
    schema: &SchemaConfig,
    label_idx: usize,
    id_idx: Option<usize>,
    feature_idx: &[usize],
) -> Result<Record, String> {
    let cell = |idx: usize| row.get(idx).ok_or_else(|| format!("missing cell {idx}"));
    let label = match cell(label_idx)?.trim() {
        "0" => Verdict::Zero,
        "1" => Verdict::One,
        other => return Err(format!("label `{other}` is not 0 or 1")),
    };
    let id = match id_idx {
        Some(idx) => cell(idx)?.trim().to_string(),
        None => row_no.to_string(),
    };
    let mut features = IndexMap::with_capacity(schema.features.len());
    for (spec, &idx) in schema.features.iter().zip(feature_idx) {
        features.insert(spec.name.clone(), spec.parse(cell(idx)?)?);
    }
    let group = schema.group_of(&features[&schema.sensitive_feature]);
    Ok(Record {
        id,
        features,
        label,
        group,
    })
}

/// Writes records back in the schema's column layout.
pub fn write_records<W: Write>(sink: W, records: &[Record], schema: &SchemaConfig) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = Vec::new();
    if let Some(id) = &schema.id_column {
        header.push(id);
    }
    header.extend(schema.features.iter().map(|f| f.column()));
    header.push(&schema.label_column);
    writer.write_record(&header)?;
    for record in records {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if schema.id_column.is_some() {
            row.push(record.id.clone());
        }
        for spec in &schema.features {
            let value = record
                .get(&spec.name)
                .ok_or_else(|| DatasetError::UnknownFeature(spec.name.clone()))?;
            row.push(value.to_string());
        }
        row.push(record.label.as_u8().to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupMean {
    pub group: Group,
    pub sum: u64,
    pub count: u64,
    /// Undefined for an empty group.
    pub mean: Rate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupBalance {
    pub feature: String,
    pub groups: [GroupMean; 2],
    /// Records outside both groups.
    pub excluded: usize,
}

impl GroupBalance {
    /// `|mean_0 - mean_1|`, undefined when a group is empty.
    pub fn gap(&self) -> Rate {
        self.groups[0].mean.abs_diff(&self.groups[1].mean)
    }
}

/// Per-group mean of a numeric feature, held as an exact ratio.
pub fn group_balance_summary(records: &[Record], score_feature: &str) -> Result<GroupBalance, DatasetError> {
    let mut sums = [0u64; 2];
    let mut counts = [0u64; 2];
    let mut excluded = 0;
    for record in records {
        let value = record
            .get(score_feature)
            .ok_or_else(|| DatasetError::UnknownFeature(score_feature.to_string()))?;
        let n = value
            .as_integer()
            .ok_or_else(|| DatasetError::NotNumeric(score_feature.to_string()))?;
        match record.group {
            Some(g) => {
                sums[g.index()] += u64::from(n);
                counts[g.index()] += 1;
            }
            None => excluded += 1,
        }
    }
    let mean = |g: Group| GroupMean {
        group: g,
        sum: sums[g.index()],
        count: counts[g.index()],
        mean: Rate::of(sums[g.index()], counts[g.index()]),
    };
    Ok(GroupBalance {
        feature: score_feature.to_string(),
        groups: [mean(Group::Zero), mean(Group::One)],
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "id,sex,age,race,juv_fel_count,juv_misd_count,priors_count,c_charge_desc,c_charge_degree,decile_score,two_year_recid";

    fn load(body: &str) -> Result<LoadOutcome, DatasetError> {
        load_records(body.as_bytes(), &SchemaConfig::compas(), false)
    }

    #[test]
    fn african_american_row_maps_to_group_one() {
        let data = format!("{HEADER}\n7,Male,25,African-American,0,0,2,Battery,M,6,1\n");
        let out = load(&data).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.group, Some(Group::One));
        assert_eq!(r.label, Verdict::One);
        assert_eq!(r.id, "7");
    }

    #[test]
    fn header_only_yields_empty_list() {
        let out = load(&format!("{HEADER}\n")).unwrap();
        assert!(out.records.is_empty());
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn fully_empty_input_is_an_error() {
        assert!(matches!(load(""), Err(DatasetError::EmptyInput)));
    }

    #[test]
    fn decile_eleven_is_rejected_with_row_index() {
        let data =
            format!("{HEADER}\n1,Male,25,Caucasian,0,0,0,Battery,M,5,0\n2,Male,25,Caucasian,0,0,0,Battery,M,11,0\n");
        let out = load(&data).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].row, 2);
        assert!(out.rejected[0].reason.contains("decile_score"));

        let strict = load_records(data.as_bytes(), &SchemaConfig::compas(), true);
        assert!(matches!(strict, Err(DatasetError::InvalidRow { row: 2, .. })));
    }

    #[test]
    fn bad_cells_are_diagnosed() {
        let data = format!(
            "{HEADER}\n1,Robot,25,Caucasian,0,0,0,Battery,M,5,0\n2,Male,25,Caucasian,-1,0,0,Battery,M,5,0\n3,Male,0,Caucasian,0,0,0,Battery,M,5,0\n4,Male,25,Caucasian,0,0,0,Battery,M,5,2\n5,Male,25\n"
        );
        let out = load(&data).unwrap();
        assert!(out.records.is_empty());
        let rows: Vec<usize> = out.rejected.iter().map(|d| d.row).collect();
        assert_eq!(rows, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn missing_column_is_fatal() {
        let data = "id,sex\n1,Male\n";
        assert!(matches!(load(data), Err(DatasetError::MissingColumn(_))));
    }

    #[test]
    fn other_races_load_without_group() {
        let data = format!("{HEADER}\n1,Female,40,Hispanic,0,0,1,Battery,F,3,0\n");
        let out = load(&data).unwrap();
        assert_eq!(out.records[0].group, None);
        assert_eq!(out.out_of_scope(), 1);
    }

    #[test]
    fn column_remapping() {
        let mut schema = SchemaConfig::compas();
        schema.features[2].column = Some("ethnicity".into());
        let data = HEADER.replace(",race,", ",ethnicity,") + "\n1,Female,40,Caucasian,0,0,1,Battery,F,3,0\n";
        let out = load_records(data.as_bytes(), &schema, true).unwrap();
        assert_eq!(out.records[0].group, Some(Group::Zero));
    }

    #[test]
    fn schema_validation() {
        let mut s = SchemaConfig::compas();
        s.sensitive_feature = "nope".into();
        assert!(s.validate().is_err());

        let mut s = SchemaConfig::compas();
        s.features[1].column = Some("sex".into());
        assert!(s.validate().is_err());

        let mut s = SchemaConfig::compas();
        s.groups.insert("Martian".into(), Group::One);
        assert!(s.validate().is_err());

        let mut s = SchemaConfig::compas();
        s.groups.remove("Caucasian");
        assert!(s.validate().is_err());
    }

    #[test]
    fn schema_toml_round_trip() {
        let text = toml::to_string(&SchemaConfig::compas()).unwrap();
        assert_eq!(SchemaConfig::from_toml(&text).unwrap(), SchemaConfig::compas());
    }

    fn scored(group: Option<Group>, score: u32) -> Record {
        let mut features = IndexMap::new();
        features.insert("decile_score".to_string(), FeatureValue::Count(score));
        Record {
            id: "x".into(),
            features,
            label: Verdict::Zero,
            group,
        }
    }

    #[test]
    fn single_record_balance() {
        let b = group_balance_summary(&[scored(Some(Group::One), 5)], "decile_score").unwrap();
        assert_eq!(b.groups[1].mean, Rate::of(5, 1));
        assert_eq!(b.groups[1].mean.display(), "5.00");
        assert!(!b.groups[0].mean.is_defined());
        assert!(!b.gap().is_defined());
    }

    #[test]
    fn symmetric_balance_has_zero_gap() {
        let records = [
            scored(Some(Group::Zero), 2),
            scored(Some(Group::Zero), 4),
            scored(Some(Group::One), 2),
            scored(Some(Group::One), 4),
            scored(None, 9),
        ];
        let b = group_balance_summary(&records, "decile_score").unwrap();
        assert_eq!(b.groups[0].mean, Rate::of(3, 1));
        assert_eq!(b.groups[1].mean, Rate::of(3, 1));
        assert_eq!(b.gap(), Rate::of(0, 1));
        assert_eq!(b.excluded, 1);
    }

    #[test]
    fn balance_rejects_non_numeric() {
        let mut r = scored(Some(Group::Zero), 1);
        r.features
            .insert("sex".into(), FeatureValue::Categorical("Male".into()));
        assert!(matches!(
            group_balance_summary(&[r], "sex"),
            Err(DatasetError::NotNumeric(_))
        ));
    }
}
