use serde::{Deserialize, Serialize};

use super::record_value;
use super::stats::{ols, two_sided_p};
use crate::datagen::OutcomeScale;
use crate::error::{Error, Result};
use crate::model::{Action, Feature, TrialRecord, Week};

const PROPENSITY_TOL: f64 = 1e-9;

/// Fit of `Y ~ 1 + A + O + A*O` for one candidate variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModerationReport {
    pub feature: String,
    pub week: Week,
    pub interaction: f64,
    pub standard_error: f64,
    pub t: f64,
    pub p_value: f64,
    /// Fitted rescue effect at the smallest and largest observed `O`.
    pub effect_at_min: f64,
    pub effect_at_max: f64,
    pub o_min: f64,
    pub o_max: f64,
    /// Fitted effect changes sign across the observed range.
    pub qualitative: bool,
    /// `qualitative` and the interaction is significant at `alpha`.
    pub flagged: bool,
}

/// Checks that rescue was assigned by a single coin with constant
/// probability at one decision week; returns that week.
fn randomized_week(records: &[TrialRecord]) -> Result<Week> {
    let hint = "rescue must be randomized with a constant probability at one decision week; \
                run positivity_check to inspect how rescue depends on the observed variables";
    let mut week = None;
    let mut propensity = None;
    for r in records {
        let [step] = r.path.steps.as_slice() else {
            return Err(Error::NotRandomized(format!(
                "record {} has {} recorded decisions; {hint}",
                r.participant_id,
                r.path.steps.len()
            )));
        };
        let p_rescue = match step.action {
            Action::Rescue(_) => step.probability,
            Action::Wait => 1.0 - step.probability,
        };
        if *week.get_or_insert(step.week) != step.week {
            return Err(Error::NotRandomized(format!("decision weeks differ across records; {hint}")));
        }
        let p0 = *propensity.get_or_insert(p_rescue);
        if (p0 - p_rescue).abs() > PROPENSITY_TOL || !(p_rescue > 0.0 && p_rescue < 1.0) {
            return Err(Error::NotRandomized(format!(
                "record {} has rescue probability {p_rescue}, others {p0}; {hint}",
                r.participant_id
            )));
        }
    }
    week.ok_or_else(|| Error::EmptySet("no records".into()))
}

/// Interaction of randomized rescue with each candidate variable, ranked by
/// `|interaction| / SE`.
pub fn moderation_scan(
    records: &[TrialRecord],
    candidates: &[Feature],
    scale: OutcomeScale,
    alpha: f64,
) -> Result<Vec<ModerationReport>> {
    let week = randomized_week(records)?;
    let y: Vec<f64> = records.iter().map(|r| record_value(r, scale)).collect();
    let mut reports = Vec::with_capacity(candidates.len());
    for feature in candidates {
        let o = records
            .iter()
            .map(|r| feature.value(&r.trajectory, week))
            .collect::<Result<Vec<f64>>>()?;
        let design: Vec<Vec<f64>> = records
            .iter()
            .zip(&o)
            .map(|(r, &x)| {
                let a = if r.rescued { 1.0 } else { 0.0 };
                vec![1.0, a, x, a * x]
            })
            .collect();
        let fit = ols(&design, &y, None)?;
        let (interaction, se) = (fit.coefficients[3], fit.standard_errors[3]);
        let t = interaction / se;
        let p_value = two_sided_p(t, fit.residual_df as f64);
        let o_min = o.iter().copied().fold(f64::INFINITY, f64::min);
        let o_max = o.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let effect_at_min = fit.coefficients[1] + interaction * o_min;
        let effect_at_max = fit.coefficients[1] + interaction * o_max;
        let qualitative = effect_at_min * effect_at_max < 0.0;
        reports.push(ModerationReport {
            feature: feature.label(),
            week,
            interaction,
            standard_error: se,
            t,
            p_value,
            effect_at_min,
            effect_at_max,
            o_min,
            o_max,
            qualitative,
            flagged: qualitative && p_value < alpha,
        });
    }
    reports.sort_by(|a, b| b.t.abs().total_cmp(&a.t.abs()));
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_population, RescueParams, ScenarioParams};
    use crate::designs::{run_design, Scheme};
    use crate::model::Aggregation;
    use crate::testutil::{record, rescued_at, with_path};

    fn feature(v: &str) -> Feature {
        Feature::new(v, Aggregation::MeanRate).unwrap()
    }

    fn world(theta0: f64, theta_s: f64, n: usize, seed: u64) -> Vec<TrialRecord> {
        let mut params = ScenarioParams {
            population: n,
            seed,
            ..ScenarioParams::illustrative()
        };
        params.rescue_options = vec![RescueParams {
            id: "coach".into(),
            main_effect: theta0,
            severity_moderation: theta_s,
            decay_rate: 0.0,
        }];
        let table = gen_population(&params).unwrap();
        let spec = Scheme::SinglyRandomizedRescue {
            decision_week: 4,
            rescue_probability: 0.5,
            rescue: "coach".into(),
        }
        .into();
        run_design(&table, &spec, seed + 1).unwrap()
    }

    #[test]
    fn flags_severity_linked_variable() {
        let recs = world(0.0, 0.8, 5000, 3);
        let reps = moderation_scan(&recs, &[feature("app"), feature("cannabis")], OutcomeScale::Raw, 0.05).unwrap();
        assert_eq!(reps.len(), 2);
        assert!(reps.iter().all(|r| r.flagged));
        // app falls with severity, so rescue helps more at low app
        let app = reps.iter().find(|r| r.feature == "app").unwrap();
        assert!(app.interaction < 0.0 && app.effect_at_min > 0.0 && app.effect_at_max < 0.0);
        assert!(reps[0].t.abs() >= reps[1].t.abs());
    }

    #[test]
    fn null_moderation_is_small() {
        let recs = world(0.5, 0.0, 5000, 8);
        let reps = moderation_scan(&recs, &[feature("app")], OutcomeScale::Raw, 0.05).unwrap();
        assert!(reps[0].interaction.abs() < 4.0 * reps[0].standard_error);
        assert!(!reps[0].qualitative);
    }

    #[test]
    fn duplicate_candidates_give_identical_reports() {
        let recs = world(0.0, 0.8, 500, 1);
        let reps = moderation_scan(&recs, &[feature("app"), feature("app")], OutcomeScale::Raw, 0.05).unwrap();
        assert_eq!(reps[0], reps[1]);
    }

    #[test]
    fn rejects_outcome_dependent_assignment() {
        let recs = vec![
            with_path(rescued_at(record(0, 0.5, 1.0), 4), &[(4, true, 1.0)]),
            with_path(record(1, 2.0, 1.0), &[(4, false, 1.0)]),
        ];
        assert!(matches!(
            moderation_scan(&recs, &[feature("app")], OutcomeScale::Raw, 0.05),
            Err(Error::NotRandomized(_))
        ));
        let recs = vec![
            with_path(rescued_at(record(0, 0.5, 1.0), 4), &[(4, true, 0.9)]),
            with_path(record(1, 2.0, 1.0), &[(4, false, 0.5)]),
        ];
        let err = moderation_scan(&recs, &[feature("app")], OutcomeScale::Raw, 0.05).unwrap_err();
        assert!(err.to_string().contains("positivity_check"));
    }
}
