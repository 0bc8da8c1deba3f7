//! Estimators and diagnostics.
//!
//! Causal estimators ([`arm_contrasts`], [`ipw_regime_value`],
//! [`moderation_scan`]) need randomized assignment. The correlational ones
//! ([`conditional_mean_below_cutoff`], [`elbow_scan`], [`cutoff_scan_cost`])
//! run on data from the initial treatment alone and carry a caveat string in
//! their output.

mod contrasts;
pub(crate) use contrasts::compare_labels;
mod correlational;
mod ipw;
mod moderation;
mod positivity;
mod quadratic;
mod roc;
pub mod stats;

pub use contrasts::{arm_contrasts, group_label, labels_key, ContrastOptions, ContrastTable, Correction, GroupSummary, PairwiseContrast};
pub use correlational::{
    choose_elbow, conditional_mean_below_cutoff, cutoff_scan_cost, elbow_scan, ConditionalMean, CutoffCost,
    CutoffScan, ElbowCurve, ElbowOptions, EQUAL_COST_WARNING,
};
pub use ipw::{ipw_regime_value, regime_weight, IpwEstimate, IpwOptions};
pub use moderation::{moderation_scan, ModerationReport};
pub use positivity::{positivity_check, PositivityReport, PositivityRow, Stratum};
pub use quadratic::{fit_quadratic_time, ArmMean, QuadraticFit, QuadraticOptions};
pub(crate) use quadratic::fit_weighted;
pub use roc::roc_auc;

use crate::datagen::OutcomeScale;
use crate::model::TrialRecord;

/// Label attached to every correlational output.
pub const CORRELATIONAL_CAVEAT: &str = "correlational: summarises outcomes under the initial treatment only and \
     does not show how rescue would have changed them";

/// Label attached to elbow curves.
pub const ELBOW_CAVEAT: &str = "correlational: shows how well the feature predicts failure at each week, not \
     how the choice of decision time changes the benefit of rescue";

/// Outcome of a record on `scale`.
pub fn record_value(record: &TrialRecord, scale: OutcomeScale) -> f64 {
    match scale {
        OutcomeScale::Raw => record.outcome,
        OutcomeScale::CostAdjusted => record.adjusted_outcome,
        OutcomeScale::Binary => {
            if record.success {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Recomputes `Y_adj = Y - kappa * A` on every record.
pub fn cost_adjust(records: &[TrialRecord], kappa: f64) -> Vec<TrialRecord> {
    records
        .iter()
        .map(|r| TrialRecord {
            adjusted_outcome: r.cost_adjusted(kappa),
            ..r.clone()
        })
        .collect()
}
