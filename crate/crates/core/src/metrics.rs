//! Per-group one-vs-rest confusion tallies and the metrics derived from
//! them: macro precision/recall/F1 per group, equalized opportunity
//! (EOpp0 over true negative rates, EOpp1 over true positive rates) and
//! equalized odds (EOdd).
//!
//! Reported "EOpp" is EOpp1. Rates with a zero denominator are defined as 0
//! and raise a flag that reports surface. Per-group precision/recall/F1 are
//! macro-averaged (unweighted over classes).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::fmath;
use crate::Result;

/// One-vs-rest counts for a single (group, class) pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl Tally {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Per-class one-vs-rest tallies for both groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupConfusion {
    class_count: usize,
    /// `tallies[group][class - 1]`.
    tallies: [Vec<Tally>; 2],
}

/// Divide, defining `0/0` (and anything over a zero denominator) as 0.
fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl GroupConfusion {
    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Tally for a 1-based class inside one group.
    pub fn tally(&self, group: u8, class: usize) -> &Tally {
        &self.tallies[group as usize][class - 1]
    }

    /// True positive rate (recall) of a class within a group.
    pub fn tpr(&self, group: u8, class: usize) -> f64 {
        let t = self.tally(group, class);
        rate(t.true_pos, t.true_pos + t.false_neg)
    }

    /// True negative rate of a class within a group.
    pub fn tnr(&self, group: u8, class: usize) -> f64 {
        let t = self.tally(group, class);
        rate(t.true_neg, t.true_neg + t.false_pos)
    }

    /// False positive rate of a class within a group.
    pub fn fpr(&self, group: u8, class: usize) -> f64 {
        let t = self.tally(group, class);
        rate(t.false_pos, t.false_pos + t.true_neg)
    }

    /// Precision of a class within a group.
    pub fn precision(&self, group: u8, class: usize) -> f64 {
        let t = self.tally(group, class);
        rate(t.true_pos, t.true_pos + t.false_pos)
    }

    /// True when any rate used by the reports had a zero denominator.
    pub fn has_zero_denominators(&self) -> bool {
        for group in &self.tallies {
            for t in group {
                if t.true_pos + t.false_neg == 0
                    || t.true_neg + t.false_pos == 0
                    || t.true_pos + t.false_pos == 0
                {
                    return true;
                }
            }
        }
        false
    }
}

/// Tally predictions against labels, one-vs-rest per class, separately for
/// both groups. Labels and predictions are 1-based.
pub fn confusion(
    preds: &[usize],
    labels: &[usize],
    groups: &[u8],
    class_count: usize,
) -> Result<GroupConfusion> {
    if preds.len() != labels.len() || preds.len() != groups.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} labels, {} group tags",
            preds.len(),
            labels.len(),
            groups.len()
        )));
    }
    if class_count == 0 {
        return Err(Error::Label("class count must be positive".into()));
    }
    let mut tallies = [vec![Tally::default(); class_count], vec![Tally::default(); class_count]];
    for i in 0..preds.len() {
        let (pred, label, group) = (preds[i], labels[i], groups[i]);
        if label == 0 || label > class_count {
            return Err(Error::Label(format!(
                "label {label} at index {i} outside 1..={class_count}"
            )));
        }
        if pred == 0 || pred > class_count {
            return Err(Error::Label(format!(
                "prediction {pred} at index {i} outside 1..={class_count}"
            )));
        }
        if group > 1 {
            return Err(Error::Label(format!(
                "group {group} at index {i} must be 0 or 1"
            )));
        }
        for class in 1..=class_count {
            let t = &mut tallies[group as usize][class - 1];
            match (label == class, pred == class) {
                (true, true) => t.true_pos += 1,
                (true, false) => t.false_neg += 1,
                (false, true) => t.false_pos += 1,
                (false, false) => t.true_neg += 1,
            }
        }
    }
    Ok(GroupConfusion {
        class_count,
        tallies,
    })
}

/// Equalized opportunity over true negative rates:
/// `Σ_k |TNR_k^1 − TNR_k^0|`.
pub fn eopp0(c: &GroupConfusion) -> f64 {
    (1..=c.class_count)
        .map(|k| fmath::abs(c.tnr(1, k) - c.tnr(0, k)))
        .sum()
}

/// Equalized opportunity over true positive rates:
/// `Σ_k |TPR_k^1 − TPR_k^0|`. This is the "EOpp" that reports quote.
pub fn eopp1(c: &GroupConfusion) -> f64 {
    (1..=c.class_count)
        .map(|k| fmath::abs(c.tpr(1, k) - c.tpr(0, k)))
        .sum()
}

/// Equalized odds: `Σ_k |TPR_k^1 − TPR_k^0 + FPR_k^1 − FPR_k^0|` — the
/// signed gaps cancel inside the absolute value.
pub fn eodd(c: &GroupConfusion) -> f64 {
    (1..=c.class_count)
        .map(|k| fmath::abs(c.tpr(1, k) - c.tpr(0, k) + c.fpr(1, k) - c.fpr(0, k)))
        .sum()
}

/// Macro precision/recall/F1 triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-group accuracy metrics with their average and absolute gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfTable {
    pub group0: Prf,
    pub group1: Prf,
    pub avg: Prf,
    pub diff: Prf,
}

/// Macro-averaged precision/recall/F1 for both groups, their mean, and the
/// absolute per-metric gap. Per-class F1 is 0 when precision + recall = 0.
pub fn group_prf(c: &GroupConfusion) -> PrfTable {
    let per_group = |g: u8| {
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for class in 1..=c.class_count {
            let p = c.precision(g, class);
            let r = c.tpr(g, class);
            let f = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            p_sum += p;
            r_sum += r;
            f_sum += f;
        }
        let n = c.class_count as f64;
        Prf {
            precision: p_sum / n,
            recall: r_sum / n,
            f1: f_sum / n,
        }
    };
    let group0 = per_group(0);
    let group1 = per_group(1);
    PrfTable {
        group0,
        group1,
        avg: Prf {
            precision: (group0.precision + group1.precision) / 2.0,
            recall: (group0.recall + group1.recall) / 2.0,
            f1: (group0.f1 + group1.f1) / 2.0,
        },
        diff: Prf {
            precision: fmath::abs(group1.precision - group0.precision),
            recall: fmath::abs(group1.recall - group0.recall),
            f1: fmath::abs(group1.f1 - group0.f1),
        },
    }
}

/// Everything a single evaluation produces: accuracy table, fairness
/// metrics, compression rate, and the raw tallies they all derive from.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessReport {
    pub prf: PrfTable,
    pub eopp0: f64,
    /// Reported as "EOpp".
    pub eopp1: f64,
    pub eodd: f64,
    pub compression_rate: f64,
    pub confusion: GroupConfusion,
    pub zero_denominator_flagged: bool,
}

impl FairnessReport {
    /// Assemble all derived metrics from raw tallies.
    pub fn from_confusion(confusion: GroupConfusion, compression_rate: f64) -> Self {
        Self {
            prf: group_prf(&confusion),
            eopp0: eopp0(&confusion),
            eopp1: eopp1(&confusion),
            eodd: eodd(&confusion),
            compression_rate,
            zero_denominator_flagged: confusion.has_zero_denominators(),
            confusion,
        }
    }
}
