//! Synthetic populations with complete potential-outcome tables.
//!
//! Structural model for participant `i` with latent severity `S ~ N(0, 1)`:
//!
//! ```text
//! m_v       = mu_v + beta_v * S
//! X_v,1     = m_v + sd_v / sqrt(1 - phi_v^2) * e_1          (stationary start)
//! X_v,t     = m_v + phi_v * (X_v,t-1 - m_v) + sd_v * e_t
//! O_v,t     = max(X_v,t, 0)
//! Y(none)   = alpha_0 + alpha_S * S + eta
//! Y(r at t) = Y(none) + (theta_0,r + theta_S,r * S) * exp(-lambda_r * (t - t_min))
//! ```
//!
//! The AR recursion runs on the untruncated latent series; only the reported
//! values are truncated, which biases low-mean variables upward.
//! Cutoff choice has no direct effect on outcomes: two regimes that take the
//! same action for a participant give that participant the same outcome.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    classify_response, validate_identifier, AdaptiveIntervention, ObservedTrajectory, VariableId, Week,
};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableParams {
    pub id: VariableId,
    /// mu: population mean level.
    pub baseline: f64,
    /// beta_S: shift of the individual mean per unit of latent severity.
    pub severity_loading: f64,
    /// phi: week-to-week autocorrelation of deviations, |phi| < 1.
    pub ar_coef: f64,
    pub innovation_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeParams {
    pub intercept: f64,
    pub severity_effect: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescueParams {
    pub id: String,
    pub main_effect: f64,
    pub severity_moderation: f64,
    /// lambda: proportional loss of effect per week of delay past the
    /// earliest candidate week.
    #[serde(default)]
    pub decay_rate: f64,
}

impl RescueParams {
    pub fn effect(&self, severity: f64, delay: f64) -> f64 {
        (self.main_effect + self.severity_moderation * severity) * (-self.decay_rate * delay).exp()
    }
}

fn default_initial() -> String {
    "initial".to_string()
}

/// Parameters of the generative causal world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub horizon: Week,
    pub population: usize,
    #[serde(default = "default_initial")]
    pub initial_treatment: String,
    pub variables: Vec<VariableParams>,
    pub outcome: OutcomeParams,
    pub rescue_options: Vec<RescueParams>,
    /// Weeks at which rescue can be delivered; the table covers exactly these.
    pub candidate_weeks: Vec<Week>,
    /// kappa: cost penalty per rescue delivered.
    #[serde(default)]
    pub cost_per_rescue: f64,
    /// y*: Y_bin = 1{Y >= y*}.
    #[serde(default)]
    pub success_threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioParams {
    /// Illustrative two-variable world loosely modelled on an app-based
    /// cannabis intervention: app use falls and cannabis use rises with
    /// severity, and coaching helps more for severe participants. The
    /// magnitudes are not calibrated to any study.
    pub fn illustrative() -> Self {
        ScenarioParams {
            horizon: 10,
            population: 500,
            initial_treatment: "app".into(),
            variables: vec![
                VariableParams {
                    id: VariableId::new("app").unwrap(),
                    baseline: 2.0,
                    severity_loading: -0.8,
                    ar_coef: 0.6,
                    innovation_sd: 0.8,
                },
                VariableParams {
                    id: VariableId::new("cannabis").unwrap(),
                    baseline: 2.0,
                    severity_loading: 0.8,
                    ar_coef: 0.6,
                    innovation_sd: 0.8,
                },
            ],
            outcome: OutcomeParams {
                intercept: 0.0,
                severity_effect: -1.0,
                sd: 1.0,
            },
            rescue_options: vec![
                RescueParams {
                    id: "coach".into(),
                    main_effect: 0.4,
                    severity_moderation: 0.4,
                    decay_rate: 0.1,
                },
                RescueParams {
                    id: "intense".into(),
                    main_effect: 0.3,
                    severity_moderation: 0.6,
                    decay_rate: 0.1,
                },
            ],
            candidate_weeks: vec![2, 4, 6, 8],
            cost_per_rescue: 0.0,
            success_threshold: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |field: &str, msg: String| Err(Error::config(format!("scenario.{field}"), msg));
        if self.horizon < 1 {
            return cfg("horizon", "horizon must be at least one week".into());
        }
        if self.population < 1 {
            return cfg("population", "population must be at least 1".into());
        }
        validate_identifier(&self.initial_treatment).or_else(|m| cfg("initial_treatment", m))?;
        if self.variables.is_empty() {
            return cfg("variables", "at least one observed variable is required".into());
        }
        for (i, v) in self.variables.iter().enumerate() {
            let field = format!("variables[{i}]");
            if self.variables[..i].iter().any(|o| o.id == v.id) {
                return cfg(&field, format!("duplicate variable id `{}`", v.id));
            }
            if !(v.ar_coef.abs() < 1.0) {
                return cfg(&format!("{field}.ar_coef"), format!("|phi| must be < 1, got {}", v.ar_coef));
            }
            if !(v.innovation_sd >= 0.0) || !v.innovation_sd.is_finite() {
                return cfg(&format!("{field}.innovation_sd"), "must be finite and >= 0".into());
            }
            if !v.baseline.is_finite() || !v.severity_loading.is_finite() {
                return cfg(&field, "baseline and severity_loading must be finite".into());
            }
        }
        let o = &self.outcome;
        if !(o.sd >= 0.0) || !o.sd.is_finite() || !o.intercept.is_finite() || !o.severity_effect.is_finite() {
            return cfg("outcome", "intercept and severity_effect must be finite, sd finite and >= 0".into());
        }
        if self.rescue_options.is_empty() {
            return cfg("rescue_options", "at least one rescue option is required".into());
        }
        for (i, r) in self.rescue_options.iter().enumerate() {
            let field = format!("rescue_options[{i}]");
            validate_identifier(&r.id).or_else(|m| cfg(&format!("{field}.id"), m))?;
            if r.id == "none" {
                return cfg(&format!("{field}.id"), "`none` is reserved".into());
            }
            if self.rescue_options[..i].iter().any(|o| o.id == r.id) {
                return cfg(&field, format!("duplicate rescue option `{}`", r.id));
            }
            if !(r.decay_rate >= 0.0) || !r.decay_rate.is_finite() {
                return cfg(&format!("{field}.decay_rate"), "lambda must be finite and >= 0".into());
            }
            if !r.main_effect.is_finite() || !r.severity_moderation.is_finite() {
                return cfg(&field, "effects must be finite".into());
            }
        }
        if self.candidate_weeks.is_empty() {
            return cfg("candidate_weeks", "at least one candidate week is required".into());
        }
        if self.candidate_weeks.windows(2).any(|w| w[0] >= w[1]) {
            return cfg("candidate_weeks", "weeks must be strictly increasing".into());
        }
        if self.candidate_weeks.iter().any(|&w| w < 1 || w > self.horizon) {
            return cfg("candidate_weeks", format!("weeks must lie in 1..={}", self.horizon));
        }
        if !(self.cost_per_rescue >= 0.0) || !self.cost_per_rescue.is_finite() {
            return cfg("cost_per_rescue", "kappa must be finite and >= 0".into());
        }
        if !self.success_threshold.is_finite() {
            return cfg("success_threshold", "must be finite".into());
        }
        Ok(())
    }

    pub fn rescue(&self, id: &str) -> Option<&RescueParams> {
        self.rescue_options.iter().find(|r| r.id == id)
    }

    pub fn has_variable(&self, id: &VariableId) -> bool {
        self.variables.iter().any(|v| &v.id == id)
    }

    pub fn earliest_week(&self) -> Week {
        self.candidate_weeks[0]
    }
}

/// Everything about one participant: latent severity, the initial-treatment
/// trajectory and every potential outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantOutcomes {
    pub severity: f64,
    pub trajectory: ObservedTrajectory,
    pub no_rescue: f64,
    /// `rescue[option][week index]`, indexed like `rescue_options` and
    /// `candidate_weeks`.
    pub rescue: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialOutcomeTable {
    pub params: ScenarioParams,
    pub participants: Vec<ParticipantOutcomes>,
}

/// Scale on which outcomes are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeScale {
    #[default]
    Raw,
    /// Y - kappa * A.
    CostAdjusted,
    /// 1{Y >= y*}.
    Binary,
}

impl PotentialOutcomeTable {
    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn option_index(&self, option: &str, week: Week) -> Result<(usize, usize)> {
        let coverage = || Error::Coverage {
            option: option.to_string(),
            week,
        };
        let r = self
            .params
            .rescue_options
            .iter()
            .position(|o| o.id == option)
            .ok_or_else(coverage)?;
        let t = self
            .params
            .candidate_weeks
            .iter()
            .position(|&w| w == week)
            .ok_or_else(coverage)?;
        Ok((r, t))
    }

    /// Potential outcome of participant `i` under rescue `option` at `week`,
    /// or under no rescue when `rescue` is `None`.
    pub fn outcome(&self, i: usize, rescue: Option<(&str, Week)>) -> Result<f64> {
        let p = &self.participants[i];
        match rescue {
            None => Ok(p.no_rescue),
            Some((option, week)) => {
                let (r, t) = self.option_index(option, week)?;
                Ok(p.rescue[r][t])
            }
        }
    }

    /// Maps a realized outcome onto `scale`.
    pub fn scaled(&self, y: f64, rescued: bool, scale: OutcomeScale) -> f64 {
        match scale {
            OutcomeScale::Raw => y,
            OutcomeScale::CostAdjusted => y - if rescued { self.params.cost_per_rescue } else { 0.0 },
            OutcomeScale::Binary => {
                if y >= self.params.success_threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gen_participant(params: &ScenarioParams, index: usize) -> Result<ParticipantOutcomes> {
    let mut rng = substream(params.seed, Domain::Population, index as u64);
    let severity = normal(&mut rng);
    let horizon = params.horizon as usize;
    let mut series = Vec::with_capacity(params.variables.len());
    for v in &params.variables {
        let mean = v.baseline + v.severity_loading * severity;
        let stationary_sd = v.innovation_sd / (1.0 - v.ar_coef * v.ar_coef).sqrt();
        let mut latent = mean + stationary_sd * normal(&mut rng);
        let mut values = Vec::with_capacity(horizon);
        values.push(latent.max(0.0));
        for _ in 1..horizon {
            latent = mean + v.ar_coef * (latent - mean) + v.innovation_sd * normal(&mut rng);
            values.push(latent.max(0.0));
        }
        series.push((v.id.clone(), values));
    }
    let eta = params.outcome.sd * normal(&mut rng);
    let no_rescue = params.outcome.intercept + params.outcome.severity_effect * severity + eta;
    let first = params.earliest_week();
    let rescue = params
        .rescue_options
        .iter()
        .map(|r| {
            params
                .candidate_weeks
                .iter()
                .map(|&w| no_rescue + r.effect(severity, f64::from(w - first)))
                .collect()
        })
        .collect();
    Ok(ParticipantOutcomes {
        severity,
        trajectory: ObservedTrajectory::new(series)?,
        no_rescue,
        rescue,
    })
}

/// Draws a population. Participant `i` uses its own substream of
/// `params.seed`, so the table is identical for any thread count.
pub fn gen_population(params: &ScenarioParams) -> Result<PotentialOutcomeTable> {
    params.validate()?;
    let participants = (0..params.population)
        .into_par_iter()
        .map(|i| gen_participant(params, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(PotentialOutcomeTable {
        params: params.clone(),
        participants,
    })
}

/// Checks that the table can evaluate `adi`.
pub fn check_regime(params: &ScenarioParams, adi: &AdaptiveIntervention) -> Result<()> {
    if adi.initial != params.initial_treatment {
        return Err(Error::config(
            "regime.initial",
            format!(
                "initial treatment `{}` differs from the scenario's `{}`",
                adi.initial, params.initial_treatment
            ),
        ));
    }
    adi.rule.validate(params.horizon)?;
    for atom in adi.rule.condition.atoms() {
        if !params.has_variable(&atom.variable) {
            return Err(Error::UnknownVariable(atom.variable.to_string()));
        }
    }
    if params.rescue(&adi.rescue).is_none() || !params.candidate_weeks.contains(&adi.rule.decision_week) {
        return Err(Error::Coverage {
            option: adi.rescue.clone(),
            week: adi.rule.decision_week,
        });
    }
    Ok(())
}

/// Outcome of participant `i` had they followed `adi`, on `scale`.
pub fn regime_outcome(table: &PotentialOutcomeTable, i: usize, adi: &AdaptiveIntervention, scale: OutcomeScale) -> Result<f64> {
    let p = &table.participants[i];
    let rescued = classify_response(&p.trajectory, &adi.rule)?.is_nonresponder();
    let y = if rescued {
        table.outcome(i, Some((&adi.rescue, adi.rule.decision_week)))?
    } else {
        p.no_rescue
    };
    Ok(table.scaled(y, rescued, scale))
}

/// Exact population mean of the outcome if everyone followed `adi`.
pub fn regime_truth(table: &PotentialOutcomeTable, adi: &AdaptiveIntervention, scale: OutcomeScale) -> Result<f64> {
    check_regime(&table.params, adi)?;
    let mut total = 0.0;
    for i in 0..table.len() {
        total += regime_outcome(table, i, adi, scale)?;
    }
    Ok(total / table.len() as f64)
}
