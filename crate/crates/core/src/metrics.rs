//! Per-group confusion metrics and the absolute-difference fairness gaps.

use serde::{Deserialize, Serialize};

use crate::client::Verdict;
use crate::dataset::Group;
use crate::exact::Rate;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("length mismatch: {verdicts} verdicts, {labels} labels, {groups} groups")]
    LengthMismatch {
        verdicts: usize,
        labels: usize,
        groups: usize,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn tally(&mut self, verdict: Verdict, label: Verdict) {
        match (verdict, label) {
            (Verdict::One, Verdict::One) => self.tp += 1,
            (Verdict::One, Verdict::Zero) => self.fp += 1,
            (Verdict::Zero, Verdict::Zero) => self.tn += 1,
            (Verdict::Zero, Verdict::One) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn tpr(&self) -> Rate {
        Rate::of(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Rate {
        Rate::of(self.fp, self.fp + self.tn)
    }

    pub fn precision(&self) -> Rate {
        Rate::of(self.tp, self.tp + self.fp)
    }

    pub fn accuracy(&self) -> Rate {
        Rate::of(self.tp + self.tn, self.total())
    }

    /// Share of positive verdicts regardless of ground truth.
    pub fn statistical_parity(&self) -> Rate {
        Rate::of(self.tp + self.fp, self.total())
    }
}

/// The six compared metrics, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tpr,
    Fpr,
    Precision,
    Recall,
    Accuracy,
    Sp,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Tpr,
        Metric::Fpr,
        Metric::Precision,
        Metric::Recall,
        Metric::Accuracy,
        Metric::Sp,
    ];

    /// Short label used in table rows (`D_pre_o`, ...).
    pub fn short(self) -> &'static str {
        match self {
            Metric::Tpr => "tpr",
            Metric::Fpr => "fpr",
            Metric::Precision => "pre",
            Metric::Recall => "rec",
            Metric::Accuracy => "acc",
            Metric::Sp => "sp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    pub counts: ConfusionCounts,
    pub tpr: Rate,
    pub fpr: Rate,
    pub precision: Rate,
    /// Same value as `tpr`; kept as its own field to mirror the table rows.
    pub recall: Rate,
    pub accuracy: Rate,
    pub sp: Rate,
}

impl GroupMetrics {
    pub fn from_counts(group: Group, counts: ConfusionCounts) -> Self {
        Self {
            group,
            tpr: counts.tpr(),
            fpr: counts.fpr(),
            precision: counts.precision(),
            recall: counts.tpr(),
            accuracy: counts.accuracy(),
            sp: counts.statistical_parity(),
            counts,
        }
    }

    pub fn get(&self, metric: Metric) -> &Rate {
        match metric {
            Metric::Tpr => &self.tpr,
            Metric::Fpr => &self.fpr,
            Metric::Precision => &self.precision,
            Metric::Recall => &self.recall,
            Metric::Accuracy => &self.accuracy,
            Metric::Sp => &self.sp,
        }
    }
}

/// `D_m = |m_0 - m_1|` per metric; lower is fairer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessGaps {
    pub tpr: Rate,
    pub fpr: Rate,
    pub precision: Rate,
    pub recall: Rate,
    pub accuracy: Rate,
    pub sp: Rate,
}

impl FairnessGaps {
    pub fn get(&self, metric: Metric) -> &Rate {
        match metric {
            Metric::Tpr => &self.tpr,
            Metric::Fpr => &self.fpr,
            Metric::Precision => &self.precision,
            Metric::Recall => &self.recall,
            Metric::Accuracy => &self.accuracy,
            Metric::Sp => &self.sp,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Metric) -> Rate) -> Self {
        Self {
            tpr: f(Metric::Tpr),
            fpr: f(Metric::Fpr),
            precision: f(Metric::Precision),
            recall: f(Metric::Recall),
            accuracy: f(Metric::Accuracy),
            sp: f(Metric::Sp),
        }
    }
}

/// Confusion counts and rates for group 0 and group 1.
pub fn group_metrics(
    verdicts: &[Verdict],
    labels: &[Verdict],
    groups: &[Group],
) -> Result<(GroupMetrics, GroupMetrics), MetricsError> {
    if verdicts.len() != labels.len() || labels.len() != groups.len() {
        return Err(MetricsError::LengthMismatch {
            verdicts: verdicts.len(),
            labels: labels.len(),
            groups: groups.len(),
        });
    }
    let mut counts = [ConfusionCounts::default(); 2];
    for ((v, l), g) in verdicts.iter().zip(labels).zip(groups) {
        counts[g.index()].tally(*v, *l);
    }
    Ok((
        GroupMetrics::from_counts(Group::Zero, counts[0]),
        GroupMetrics::from_counts(Group::One, counts[1]),
    ))
}

pub fn fairness_gaps(g0: &GroupMetrics, g1: &GroupMetrics) -> FairnessGaps {
    FairnessGaps::from_fn(|m| g0.get(m).abs_diff(g1.get(m)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Performance {
    pub accuracy: Rate,
    pub precision: Rate,
}

/// Ungrouped accuracy and precision.
pub fn overall_performance(verdicts: &[Verdict], labels: &[Verdict]) -> Result<Performance, MetricsError> {
    if verdicts.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            verdicts: verdicts.len(),
            labels: labels.len(),
            groups: labels.len(),
        });
    }
    let mut counts = ConfusionCounts::default();
    for (v, l) in verdicts.iter().zip(labels) {
        counts.tally(*v, *l);
    }
    Ok(Performance {
        accuracy: counts.accuracy(),
        precision: counts.precision(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ratio;
    use Verdict::{One, Zero};

    #[test]
    fn perfect_predictions() {
        let labels = [One, Zero, One, Zero];
        let groups = [Group::Zero, Group::Zero, Group::One, Group::One];
        let (g0, g1) = group_metrics(&labels, &labels, &groups).unwrap();
        for g in [&g0, &g1] {
            assert_eq!(g.tpr, Rate::of(1, 1));
            assert_eq!(g.fpr, Rate::of(0, 1));
            assert_eq!(g.accuracy, Rate::of(1, 1));
        }
    }

    #[test]
    fn hand_counted_group_one() {
        let (g0, g1) = group_metrics(&[One, Zero], &[One, One], &[Group::One, Group::One]).unwrap();
        assert_eq!(
            g1.counts,
            ConfusionCounts {
                tp: 1,
                fp: 0,
                tn: 0,
                fn_: 1
            }
        );
        assert_eq!(g1.tpr, Rate::defined(ratio(1, 2)));
        assert_eq!(g1.fpr, Rate::UNDEFINED);
        assert_eq!(g0.counts.total(), 0);
        assert!(!g0.accuracy.is_defined());
        assert!(!g0.sp.is_defined());
    }

    #[test]
    fn gaps() {
        let mut a = GroupMetrics::from_counts(Group::Zero, ConfusionCounts::default());
        let mut b = GroupMetrics::from_counts(Group::One, ConfusionCounts::default());
        a.sp = Rate::defined(ratio(3, 10));
        b.sp = Rate::defined(ratio(3, 10));
        a.tpr = Rate::defined(ratio(7, 10));
        b.tpr = Rate::defined(ratio(1, 2));
        b.accuracy = Rate::defined(ratio(1, 2));
        let d = fairness_gaps(&a, &b);
        assert_eq!(d.sp, Rate::defined(ratio(0, 1)));
        assert_eq!(d.tpr, Rate::defined(ratio(1, 5)));
        assert!(!d.accuracy.is_defined());
        assert_eq!(fairness_gaps(&b, &a), d);
    }

    #[test]
    fn overall_examples() {
        let labels = [One, Zero, One, Zero];
        let p = overall_performance(&labels, &labels).unwrap();
        assert_eq!(p.accuracy, Rate::of(1, 1));
        let all_one = [One; 4];
        let p = overall_performance(&all_one, &labels).unwrap();
        assert_eq!(p.precision, Rate::of(1, 2));
        assert_eq!(p.accuracy, Rate::of(1, 2));
    }

    #[test]
    fn length_mismatch() {
        assert!(group_metrics(&[One], &[], &[Group::Zero]).is_err());
        assert!(overall_performance(&[One], &[]).is_err());
    }

    #[test]
    fn counts_serialize_with_fn_key() {
        let json = serde_json::to_string(&ConfusionCounts {
            tp: 1,
            fp: 2,
            tn: 3,
            fn_: 4,
        })
        .unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }
}
