use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record_value;
use super::stats::{quantile_sorted, std_dev};
use crate::datagen::OutcomeScale;
use crate::error::{Error, Result};
use crate::model::{AdaptiveIntervention, TrialRecord};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct IpwOptions {
    pub scale: OutcomeScale,
    /// Divide by the total weight (Hajek) instead of the sample size.
    pub normalized: bool,
    /// Bootstrap resamples for the standard error; 0 disables it.
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for IpwOptions {
    fn default() -> Self {
        IpwOptions {
            scale: OutcomeScale::Raw,
            normalized: true,
            bootstrap: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwEstimate {
    pub regime: String,
    pub estimate: f64,
    pub standard_error: Option<f64>,
    /// Percentile bootstrap 95% interval.
    pub interval: Option<(f64, f64)>,
    pub n_consistent: usize,
    pub total_weight: f64,
    pub normalized: bool,
}

/// Inverse-probability weight of `record` for `adi`: the product of `1/p`
/// over the recorded decisions, or 0 once a decision departs from what `adi`
/// prescribes.
pub fn regime_weight(record: &TrialRecord, adi: &AdaptiveIntervention) -> Result<f64> {
    let mut weight = 1.0;
    for step in &record.path.steps {
        let prescribed = adi.prescribed_action(&record.trajectory, step.week)?;
        if step.action != prescribed {
            return Ok(0.0);
        }
        if !(step.probability > 0.0 && step.probability <= 1.0) {
            return Err(Error::Positivity(format!(
                "record {} took an action with recorded probability {} at week {}",
                record.participant_id, step.probability, step.week
            )));
        }
        weight /= step.probability;
    }
    let k = adi.rule.decision_week;
    if record.path.step_at(k).is_none() && adi.rule.classify(&record.trajectory)?.is_nonresponder() {
        return Err(Error::NotIdentifiable {
            regime: adi.to_string(),
            reason: format!(
                "record {} has no recorded decision at week {k}, where the regime rescues it",
                record.participant_id
            ),
        });
    }
    Ok(weight)
}

fn point(weights: &[f64], values: &[f64], normalized: bool) -> Option<f64> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let num: f64 = weights.iter().zip(values).map(|(w, y)| w * y).sum();
    Some(if normalized {
        num / total
    } else {
        num / weights.len() as f64
    })
}

/// Mean outcome had everyone followed `adi`, from records that carry their
/// assignment probabilities.
pub fn ipw_regime_value(records: &[TrialRecord], adi: &AdaptiveIntervention, options: &IpwOptions) -> Result<IpwEstimate> {
    let weights = records
        .iter()
        .map(|r| regime_weight(r, adi))
        .collect::<Result<Vec<f64>>>()?;
    let values: Vec<f64> = records.iter().map(|r| record_value(r, options.scale)).collect();
    let estimate = point(&weights, &values, options.normalized).ok_or_else(|| Error::NotIdentifiable {
        regime: adi.to_string(),
        reason: "no record is consistent with the regime".into(),
    })?;
    let (standard_error, interval) = if options.bootstrap > 0 {
        let n = records.len();
        let mut draws: Vec<f64> = (0..options.bootstrap)
            .into_par_iter()
            .filter_map(|b| {
                let mut rng = substream(options.seed, Domain::Bootstrap, b as u64);
                let mut w = Vec::with_capacity(n);
                let mut y = Vec::with_capacity(n);
                for _ in 0..n {
                    let j = rng.random_range(0..n);
                    w.push(weights[j]);
                    y.push(values[j]);
                }
                point(&w, &y, options.normalized)
            })
            .collect();
        if draws.len() >= 2 {
            draws.sort_by(f64::total_cmp);
            (
                Some(std_dev(&draws)),
                Some((quantile_sorted(&draws, 0.025), quantile_sorted(&draws, 0.975))),
            )
        } else {
            (None, None)
        }
    } else {
        (None, None)
    };
    Ok(IpwEstimate {
        regime: adi.to_string(),
        estimate,
        standard_error,
        interval,
        n_consistent: weights.iter().filter(|&&w| w > 0.0).count(),
        total_weight: weights.iter().sum(),
        normalized: options.normalized,
    })
}
