use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::roc::roc_auc;
use super::stats::quantile_sorted;
use super::{CORRELATIONAL_CAVEAT, ELBOW_CAVEAT};
use crate::error::{Error, Result};
use crate::model::{aggregate_feature, AtomicCondition, Direction, Feature, TrialRecord, Week};
use crate::rng::{substream, Domain};
use rand::Rng;

fn require_initial_only(records: &[TrialRecord], what: &str) -> Result<()> {
    if let Some(r) = records.iter().find(|r| r.rescued) {
        return Err(Error::Schema(format!(
            "{what} needs data under the initial treatment only, but record {} received rescue",
            r.participant_id
        )));
    }
    Ok(())
}

/// Mean outcome without rescue among participants meeting a condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMean {
    pub variable: String,
    pub cutoff: f64,
    pub week: Week,
    pub n: usize,
    pub mean: f64,
    pub caveat: String,
}

/// `E(Y | O < c)` (or `O > c` for above-is-nonresponse conditions) on data
/// without rescue.
pub fn conditional_mean_below_cutoff(records: &[TrialRecord], condition: &AtomicCondition, week: Week) -> Result<ConditionalMean> {
    require_initial_only(records, "conditional_mean_below_cutoff")?;
    let mut n = 0usize;
    let mut total = 0.0;
    for r in records {
        if condition.holds(aggregate_feature(&r.trajectory, condition, week)?) {
            n += 1;
            total += r.outcome;
        }
    }
    if n == 0 {
        return Err(Error::EmptySet(format!(
            "no participant has {} beyond cutoff {} at week {week}",
            condition.variable, condition.cutoff
        )));
    }
    Ok(ConditionalMean {
        variable: condition.variable.to_string(),
        cutoff: condition.cutoff,
        week,
        n,
        mean: total / n as f64,
        caveat: CORRELATIONAL_CAVEAT.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElbowOptions {
    /// Tolerance below the best AUC still counted as good enough.
    pub delta: f64,
    /// Recompute failure labels as `Y < threshold`; `None` uses the records'
    /// `success` flags.
    pub success_threshold: Option<f64>,
    /// Bootstrap resamples for pointwise 95% bands; 0 disables them.
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for ElbowOptions {
    fn default() -> Self {
        ElbowOptions {
            delta: 0.02,
            success_threshold: None,
            bootstrap: 0,
            seed: 0,
        }
    }
}

/// Predictive accuracy of a feature at each candidate decision week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub feature: String,
    pub times: Vec<Week>,
    pub auc: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub elbow: Week,
    pub delta: f64,
    pub caveat: String,
}

/// Earliest time whose AUC is within `delta` of the best.
pub fn choose_elbow(times: &[Week], aucs: &[f64], delta: f64) -> Option<Week> {
    let best = aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    times
        .iter()
        .zip(aucs)
        .find(|(_, &a)| a >= best - delta)
        .map(|(&t, _)| t)
}

fn auc_curve(
    records: &[&TrialRecord],
    feature: &Feature,
    direction: Direction,
    times: &[Week],
    failure: &dyn Fn(&TrialRecord) -> bool,
) -> Result<Vec<f64>> {
    let labels: Vec<bool> = records.iter().map(|r| failure(r)).collect();
    times
        .iter()
        .map(|&t| {
            let scores = records
                .iter()
                .map(|r| {
                    let v = feature.value(&r.trajectory, t)?;
                    // orient so that a higher score means more likely to fail
                    Ok(match direction {
                        Direction::BelowIsNonresponse => -v,
                        Direction::AboveIsNonresponse => v,
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            roc_auc(&scores, &labels)
        })
        .collect()
}

/// AUC of the aggregated feature for predicting failure at each week and the
/// earliest week within `delta` of the best.
pub fn elbow_scan(
    records: &[TrialRecord],
    feature: &Feature,
    direction: Direction,
    times: &[Week],
    options: &ElbowOptions,
) -> Result<ElbowCurve> {
    require_initial_only(records, "elbow_scan")?;
    if times.is_empty() {
        return Err(Error::config("analysis.times", "at least one candidate time is required"));
    }
    if !(options.delta >= 0.0) {
        return Err(Error::config("analysis.delta", "delta must be >= 0"));
    }
    let threshold = options.success_threshold;
    let failure = move |r: &TrialRecord| match threshold {
        Some(y) => r.outcome < y,
        None => !r.success,
    };
    let all: Vec<&TrialRecord> = records.iter().collect();
    let auc = auc_curve(&all, feature, direction, times, &failure)?;
    let elbow = choose_elbow(times, &auc, options.delta).expect("nonempty times");
    let (lower, upper) = if options.bootstrap > 0 {
        let n = records.len();
        let draws: Vec<Vec<f64>> = (0..options.bootstrap)
            .into_par_iter()
            .filter_map(|b| {
                let mut rng = substream(options.seed, Domain::Bootstrap, b as u64);
                let sample: Vec<&TrialRecord> = (0..n).map(|_| &records[rng.random_range(0..n)]).collect();
                auc_curve(&sample, feature, direction, times, &failure).ok()
            })
            .collect();
        let mut lower = Vec::with_capacity(times.len());
        let mut upper = Vec::with_capacity(times.len());
        for k in 0..times.len() {
            let mut col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            col.sort_by(f64::total_cmp);
            lower.push(quantile_sorted(&col, 0.025));
            upper.push(quantile_sorted(&col, 0.975));
        }
        (Some(lower), Some(upper))
    } else {
        (None, None)
    };
    Ok(ElbowCurve {
        feature: feature.label(),
        times: times.to_vec(),
        auc,
        lower,
        upper,
        elbow,
        delta: options.delta,
        caveat: ELBOW_CAVEAT.to_string(),
    })
}

/// Misclassification counts at one cutoff. Positive = failure (`Y_bin = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffCost {
    pub cutoff: f64,
    pub nonresponders: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffScan {
    pub variable: String,
    pub week: Week,
    pub weight_false_positive: f64,
    pub weight_false_negative: f64,
    pub rows: Vec<CutoffCost>,
    pub best_cutoff: f64,
    pub warnings: Vec<String>,
    pub caveat: String,
}

pub const EQUAL_COST_WARNING: &str =
    "equal weights assume a missed failure costs the same as an unnecessary rescue";

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Weighted false-positive plus false-negative count for each cutoff; the
/// minimum wins, ties going to the smaller nonresponder set (the stricter
/// cutoff).
pub fn cutoff_scan_cost(
    records: &[TrialRecord],
    condition: &AtomicCondition,
    week: Week,
    grid: &[f64],
    weight_false_positive: f64,
    weight_false_negative: f64,
) -> Result<CutoffScan> {
    require_initial_only(records, "cutoff_scan_cost")?;
    if grid.is_empty() {
        return Err(Error::config("analysis.cutoffs", "cutoff grid must not be empty"));
    }
    for (name, w) in [("w_fp", weight_false_positive), ("w_fn", weight_false_negative)] {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::config(format!("analysis.{name}"), "weights must be finite and >= 0"));
        }
    }
    if weight_false_positive == 0.0 && weight_false_negative == 0.0 {
        return Err(Error::config("analysis.w_fp", "at least one weight must be positive"));
    }
    let features = records
        .iter()
        .map(|r| aggregate_feature(&r.trajectory, condition, week))
        .collect::<Result<Vec<f64>>>()?;
    let failures = records.iter().filter(|r| !r.success).count();
    let successes = records.len() - failures;
    if failures == 0 || successes == 0 {
        return Err(Error::DegenerateLabels(format!(
            "cutoff scan needs failures and successes, got {failures} and {successes}"
        )));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &c in grid {
        let atom = condition.with_cutoff(c);
        let (mut tp, mut fp, mut tn, mut fneg) = (0, 0, 0, 0);
        for (r, &x) in records.iter().zip(&features) {
            match (atom.holds(x), !r.success) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fneg += 1,
            }
        }
        rows.push(CutoffCost {
            cutoff: c,
            nonresponders: tp + fp,
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fneg,
            sensitivity: tp as f64 / failures as f64,
            specificity: tn as f64 / successes as f64,
            cost: weight_false_positive * fp as f64 + weight_false_negative * fneg as f64,
        });
    }
    let stricter = |a: f64, b: f64| match condition.direction {
        Direction::BelowIsNonresponse => a < b,
        Direction::AboveIsNonresponse => a > b,
    };
    let mut best = &rows[0];
    for row in &rows[1..] {
        let better = if nearly_equal(row.cost, best.cost) {
            row.nonresponders < best.nonresponders
                || (row.nonresponders == best.nonresponders && stricter(row.cutoff, best.cutoff))
        } else {
            row.cost < best.cost
        };
        if better {
            best = row;
        }
    }
    let mut warnings = Vec::new();
    if weight_false_positive == weight_false_negative {
        warnings.push(EQUAL_COST_WARNING.to_string());
    }
    Ok(CutoffScan {
        variable: condition.variable.to_string(),
        week,
        weight_false_positive,
        weight_false_negative,
        best_cutoff: best.cutoff,
        rows,
        warnings,
        caveat: CORRELATIONAL_CAVEAT.to_string(),
    })
}
