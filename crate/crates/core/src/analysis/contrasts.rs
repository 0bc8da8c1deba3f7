use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::record_value;
use super::stats::{welch, Summary};
use crate::datagen::OutcomeScale;
use crate::error::{Error, Result};
use crate::model::{ArmLabels, Factor, TrialRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContrastOptions {
    pub scale: OutcomeScale,
    pub correction: Correction,
    /// Groups the design can produce; any that received no records is
    /// reported in `flags`.
    pub expected_groups: Vec<String>,
}

/// Marginal mean of one arm, pooling responders and nonresponders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub standard_error: f64,
    pub nonresponders: usize,
    /// Within-arm descriptive subgroup means; never contrasted across arms.
    pub nonresponder_mean: Option<f64>,
    pub responder_mean: Option<f64>,
}

/// `first - second`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseContrast {
    pub first: String,
    pub second: String,
    pub difference: f64,
    pub standard_error: f64,
    pub df: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastTable {
    pub factors: Vec<Factor>,
    pub scale: OutcomeScale,
    pub groups: Vec<GroupSummary>,
    pub contrasts: Vec<PairwiseContrast>,
    pub flags: Vec<String>,
}

impl ContrastTable {
    pub fn group(&self, label: &str) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.label == label)
    }

    pub fn contrast(&self, first: &str, second: &str) -> Option<&PairwiseContrast> {
        self.contrasts.iter().find(|c| c.first == first && c.second == second)
    }
}

/// Group label such as `cutoff=1|time=4`; `None` if a factor is unset.
pub fn labels_key(labels: &ArmLabels, factors: &[Factor]) -> Option<String> {
    let parts = factors
        .iter()
        .map(|&f| labels.get(f).map(|v| format!("{}={v}", f.name())))
        .collect::<Option<Vec<_>>>()?;
    Some(parts.join("|"))
}

/// Group label of a record.
pub fn group_label(record: &TrialRecord, factors: &[Factor]) -> Result<String> {
    labels_key(&record.arms, factors).ok_or_else(|| {
        let missing = factors.iter().find(|&&f| record.arms.get(f).is_none()).map_or("", |f| f.name());
        Error::Schema(format!(
            "record {} has no `{missing}` arm label",
            record.participant_id
        ))
    })
}

/// Orders labels so numeric levels sort numerically.
pub(crate) fn compare_labels(a: &str, b: &str) -> Ordering {
    let split = |s: &str| -> Vec<String> { s.split('|').map(str::to_string).collect() };
    for (x, y) in split(a).iter().zip(split(b).iter()) {
        let vx = x.split_once('=').map_or(x.as_str(), |(_, v)| v);
        let vy = y.split_once('=').map_or(y.as_str(), |(_, v)| v);
        let ord = match (vx.parse::<f64>(), vy.parse::<f64>()) {
            (Ok(p), Ok(q)) => p.total_cmp(&q),
            _ => vx.cmp(vy),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    a.cmp(b)
}

/// Per-arm marginal means and all pairwise Welch contrasts.
pub fn arm_contrasts(records: &[TrialRecord], factors: &[Factor], options: &ContrastOptions) -> Result<ContrastTable> {
    if factors.is_empty() {
        return Err(Error::config("analysis.factors", "at least one grouping factor is required"));
    }
    let mut buckets: BTreeMap<String, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        buckets.entry(group_label(r, factors)?).or_default().push(r);
    }
    let mut labels: Vec<String> = buckets.keys().cloned().collect();
    labels.sort_by(|a, b| compare_labels(a, b));

    let mut flags = Vec::new();
    for expected in &options.expected_groups {
        if !buckets.contains_key(expected) {
            flags.push(format!("group `{expected}` is empty and excluded from contrasts"));
        }
    }

    let mut groups = Vec::new();
    let mut summaries = Vec::new();
    for label in &labels {
        let rows = &buckets[label];
        let values: Vec<f64> = rows.iter().map(|r| record_value(r, options.scale)).collect();
        let s = Summary::of(&values);
        let sub = |nonresponder: bool| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.classification.is_some_and(|c| c.response.is_nonresponder() == nonresponder))
                .map(|r| record_value(r, options.scale))
                .collect();
            (v.len(), (!v.is_empty()).then(|| Summary::of(&v).mean))
        };
        let (nonresponders, nonresponder_mean) = sub(true);
        let (_, responder_mean) = sub(false);
        if s.n < 2 {
            flags.push(format!("group `{label}` has fewer than two records and is excluded from contrasts"));
        }
        groups.push(GroupSummary {
            label: label.clone(),
            n: s.n,
            mean: s.mean,
            standard_error: s.standard_error(),
            nonresponders,
            nonresponder_mean,
            responder_mean,
        });
        summaries.push(s);
    }

    let mut contrasts = Vec::new();
    for i in 0..labels.len() {
        for j in (i + 1)..labels.len() {
            if let Some(t) = welch(&summaries[j], &summaries[i]) {
                contrasts.push(PairwiseContrast {
                    first: labels[j].clone(),
                    second: labels[i].clone(),
                    difference: t.difference,
                    standard_error: t.standard_error,
                    df: t.df,
                    p_value: t.p_value,
                    p_adjusted: t.p_value,
                });
            }
        }
    }
    if options.correction == Correction::Bonferroni {
        let m = contrasts.len() as f64;
        for c in &mut contrasts {
            c.p_adjusted = (c.p_value * m).min(1.0);
        }
    }
    Ok(ContrastTable {
        factors: factors.to_vec(),
        scale: options.scale,
        groups,
        contrasts,
        flags,
    })
}
