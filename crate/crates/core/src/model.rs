//! Domain types shared across the crate and the deterministic tailoring
//! logic that turns an observed trajectory into a response classification.
//!
//! Conventions:
//! - weeks are 1-based; a trajectory covers weeks `1..=horizon`;
//! - higher outcomes are better, so lower-is-better outcomes must be negated
//!   before they enter a [`TrialRecord`];
//! - the aggregation window of a rule always ends at its decision week, so
//!   assessment time and decision time coincide.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Week index, 1-based.
pub type Week = u32;

/// Identifier of an observed variable (for example `app` or `cannabis`).
///
/// Restricted to ASCII letters, digits, `_` and `-` so that it can be used
/// verbatim in CSV headers.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VariableId(String);

impl VariableId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        validate_identifier(&id).map_err(|m| Error::config("variable", m))?;
        Ok(VariableId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Shared identifier rule for variables, treatments and labels written to CSV.
pub(crate) fn validate_identifier(id: &str) -> std::result::Result<(), String> {
    if id.is_empty() {
        return Err("identifier must not be empty".into());
    }
    if !id
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
    {
        return Err(format!(
            "identifier `{id}` may only contain ASCII letters, digits, `_`, `-` and `.`"
        ));
    }
    Ok(())
}

impl TryFrom<String> for VariableId {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, Self::Error> {
        validate_identifier(&value)?;
        Ok(VariableId(value))
    }
}

impl From<VariableId> for String {
    fn from(value: VariableId) -> Self {
        value.0
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Weekly values of every observed variable under the initial treatment.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedTrajectory {
    series: Vec<(VariableId, Vec<f64>)>,
    horizon: Week,
}

impl ObservedTrajectory {
    /// Builds a trajectory; every series must cover the same horizon with
    /// finite, nonnegative values.
    pub fn new(series: Vec<(VariableId, Vec<f64>)>) -> Result<Self> {
        let horizon = series.first().map(|(_, v)| v.len()).unwrap_or(0);
        if horizon == 0 {
            return Err(Error::config("trajectory", "at least one week of one variable is required"));
        }
        for (i, (id, values)) in series.iter().enumerate() {
            if values.len() != horizon {
                return Err(Error::config(
                    "trajectory",
                    format!("variable `{id}` has {} weeks, expected {horizon}", values.len()),
                ));
            }
            if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::config(
                    "trajectory",
                    format!("variable `{id}` has invalid value {v}"),
                ));
            }
            if series[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::config("trajectory", format!("duplicate variable `{id}`")));
            }
        }
        Ok(ObservedTrajectory {
            series,
            horizon: horizon as Week,
        })
    }

    pub fn horizon(&self) -> Week {
        self.horizon
    }

    pub fn variables(&self) -> impl Iterator<Item = &VariableId> {
        self.series.iter().map(|(id, _)| id)
    }

    pub fn series(&self) -> &[(VariableId, Vec<f64>)] {
        &self.series
    }

    /// Weekly values of one variable, week 1 first.
    pub fn values(&self, variable: &VariableId) -> Result<&[f64]> {
        self.series
            .iter()
            .find(|(id, _)| id == variable)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::UnknownVariable(variable.to_string()))
    }
}

/// Summary of weeks `1..=K` used as the tailoring feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Cumulative sum divided by K.
    #[default]
    MeanRate,
    CumulativeSum,
    RunningMaximum,
    LastValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Nonresponder iff feature < cutoff (e.g. too little app use).
    #[serde(rename = "below")]
    BelowIsNonresponse,
    /// Nonresponder iff feature > cutoff (e.g. too much substance use).
    #[serde(rename = "above")]
    AboveIsNonresponse,
}

/// One thresholded feature: `variable`, summarised by `aggregation`, compared
/// strictly against `cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomicCondition {
    pub variable: VariableId,
    #[serde(default)]
    pub aggregation: Aggregation,
    pub direction: Direction,
    pub cutoff: f64,
}

impl AtomicCondition {
    pub fn new(variable: &str, aggregation: Aggregation, direction: Direction, cutoff: f64) -> Result<Self> {
        let condition = AtomicCondition {
            variable: VariableId::new(variable)?,
            aggregation,
            direction,
            cutoff,
        };
        condition.validate()?;
        Ok(condition)
    }

    pub fn below(variable: &str, cutoff: f64) -> Result<Self> {
        Self::new(variable, Aggregation::MeanRate, Direction::BelowIsNonresponse, cutoff)
    }

    pub fn above(variable: &str, cutoff: f64) -> Result<Self> {
        Self::new(variable, Aggregation::MeanRate, Direction::AboveIsNonresponse, cutoff)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.cutoff.is_finite() {
            return Err(Error::config("condition.cutoff", "cutoff must be finite"));
        }
        Ok(())
    }

    /// Same condition with a different cutoff.
    pub fn with_cutoff(&self, cutoff: f64) -> Self {
        AtomicCondition {
            cutoff,
            ..self.clone()
        }
    }

    /// Whether a feature value meets the nonresponse condition. Ties with the
    /// cutoff count as response.
    pub fn holds(&self, feature: f64) -> bool {
        match self.direction {
            Direction::BelowIsNonresponse => feature < self.cutoff,
            Direction::AboveIsNonresponse => feature > self.cutoff,
        }
    }
}

/// A single atomic condition or the conjunction of two conditions on
/// distinct variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AtomicCondition>", into = "Vec<AtomicCondition>")]
pub enum Condition {
    Single(AtomicCondition),
    Both(AtomicCondition, AtomicCondition),
}

impl Condition {
    pub fn both(first: AtomicCondition, second: AtomicCondition) -> Result<Self> {
        Condition::try_from(vec![first, second]).map_err(|m| Error::config("condition", m))
    }

    pub fn atoms(&self) -> Vec<&AtomicCondition> {
        match self {
            Condition::Single(a) => vec![a],
            Condition::Both(a, b) => vec![a, b],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.atoms().into_iter().try_for_each(AtomicCondition::validate)
    }
}

impl From<AtomicCondition> for Condition {
    fn from(value: AtomicCondition) -> Self {
        Condition::Single(value)
    }
}

impl TryFrom<Vec<AtomicCondition>> for Condition {
    type Error = String;

    fn try_from(mut value: Vec<AtomicCondition>) -> std::result::Result<Self, Self::Error> {
        match value.len() {
            1 => Ok(Condition::Single(value.remove(0))),
            2 => {
                let second = value.pop().unwrap();
                let first = value.pop().unwrap();
                if first.variable == second.variable {
                    return Err(format!(
                        "a conjunction needs two distinct variables, got `{}` twice",
                        first.variable
                    ));
                }
                Ok(Condition::Both(first, second))
            }
            n => Err(format!("a condition has one or two atomic parts, got {n}")),
        }
    }
}

impl From<Condition> for Vec<AtomicCondition> {
    fn from(value: Condition) -> Self {
        match value {
            Condition::Single(a) => vec![a],
            Condition::Both(a, b) => vec![a, b],
        }
    }
}

/// When to classify (`decision_week`) and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailoringRule {
    pub decision_week: Week,
    pub condition: Condition,
}

impl TailoringRule {
    pub fn new(decision_week: Week, condition: impl Into<Condition>) -> Self {
        TailoringRule {
            decision_week,
            condition: condition.into(),
        }
    }

    pub fn validate(&self, horizon: Week) -> Result<()> {
        if self.decision_week < 1 || self.decision_week > horizon {
            return Err(Error::config(
                "rule.decision_week",
                format!("decision week {} outside 1..={horizon}", self.decision_week),
            ));
        }
        self.condition.validate()
    }

    pub fn classify(&self, trajectory: &ObservedTrajectory) -> Result<Response> {
        classify_response(trajectory, self)
    }
}

impl fmt::Display for TailoringRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .condition
            .atoms()
            .iter()
            .map(|a| {
                let op = match a.direction {
                    Direction::BelowIsNonresponse => "<",
                    Direction::AboveIsNonresponse => ">",
                };
                let agg = match a.aggregation {
                    Aggregation::MeanRate => "rate",
                    Aggregation::CumulativeSum => "sum",
                    Aggregation::RunningMaximum => "max",
                    Aggregation::LastValue => "last",
                };
                format!("{agg}({}) {op} {}", a.variable, a.cutoff)
            })
            .collect();
        write!(f, "{} @ week {}", parts.join(" and "), self.decision_week)
    }
}

fn default_initial() -> String {
    "initial".to_string()
}

/// Start with `initial`, classify with `rule`, offer `rescue` to nonresponders
/// at the rule's decision week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveIntervention {
    #[serde(default = "default_initial")]
    pub initial: String,
    pub rule: TailoringRule,
    pub rescue: String,
}

impl AdaptiveIntervention {
    pub fn new(rule: TailoringRule, rescue: impl Into<String>) -> Self {
        AdaptiveIntervention {
            initial: default_initial(),
            rule,
            rescue: rescue.into(),
        }
    }

    /// Action this regime prescribes at `week` for a participant.
    pub fn prescribed_action(&self, trajectory: &ObservedTrajectory, week: Week) -> Result<Action> {
        if week == self.rule.decision_week && self.rule.classify(trajectory)?.is_nonresponder() {
            Ok(Action::Rescue(self.rescue.clone()))
        } else {
            Ok(Action::Wait)
        }
    }
}

impl fmt::Display for AdaptiveIntervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} then {} if {}", self.initial, self.rescue, self.rule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Responder,
    Nonresponder,
}

impl Response {
    pub fn is_nonresponder(self) -> bool {
        self == Response::Nonresponder
    }
}

/// Response status together with the week it was determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub response: Response,
    pub week: Week,
}

/// Decision taken at one decision point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Wait,
    Rescue(String),
}

/// One randomized (or deterministic) decision and the probability with which
/// the realized action was taken given everything observed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentStep {
    pub week: Week,
    pub action: Action,
    pub probability: f64,
}

/// Decision history of one participant; ends at rescue or at the last
/// decision point of the design.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssignmentPath {
    pub steps: Vec<AssignmentStep>,
}

impl AssignmentPath {
    pub fn step_at(&self, week: Week) -> Option<&AssignmentStep> {
        self.steps.iter().find(|s| s.week == week)
    }
}

/// Labels of the randomized factors a participant was assigned to. Factors a
/// design does not randomize stay `None`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ArmLabels {
    pub cutoff: Option<String>,
    pub time: Option<String>,
    pub variable: Option<String>,
    pub rescue: Option<String>,
}

/// Randomized factor that records can be grouped by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Cutoff,
    Time,
    Variable,
    Rescue,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Cutoff, Factor::Time, Factor::Variable, Factor::Rescue];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Cutoff => "cutoff",
            Factor::Time => "time",
            Factor::Variable => "variable",
            Factor::Rescue => "rescue",
        }
    }
}

impl ArmLabels {
    pub fn get(&self, factor: Factor) -> Option<&str> {
        match factor {
            Factor::Cutoff => self.cutoff.as_deref(),
            Factor::Time => self.time.as_deref(),
            Factor::Variable => self.variable.as_deref(),
            Factor::Rescue => self.rescue.as_deref(),
        }
    }
}

/// One participant of a simulated or ingested trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub participant_id: usize,
    pub arms: ArmLabels,
    pub trajectory: ObservedTrajectory,
    /// `None` when the design never classifies response.
    pub classification: Option<Classification>,
    /// A: rescue delivered.
    pub rescued: bool,
    pub rescue_week: Option<Week>,
    pub rescue_option: Option<String>,
    /// Y, higher is better.
    pub outcome: f64,
    /// Y_bin = 1{Y >= success threshold}.
    pub success: bool,
    /// Y - kappa * A.
    pub adjusted_outcome: f64,
    pub path: AssignmentPath,
}

impl TrialRecord {
    /// Y_adj = Y - kappa * A.
    pub fn cost_adjusted(&self, kappa: f64) -> f64 {
        if self.rescued {
            self.outcome - kappa
        } else {
            self.outcome
        }
    }
}

/// An observed variable summarised over weeks `1..=K`, without a cutoff.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feature {
    pub variable: VariableId,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Feature {
    pub fn new(variable: &str, aggregation: Aggregation) -> Result<Self> {
        Ok(Feature {
            variable: VariableId::new(variable)?,
            aggregation,
        })
    }

    pub fn value(&self, trajectory: &ObservedTrajectory, week: Week) -> Result<f64> {
        aggregate(trajectory, &self.variable, self.aggregation, week)
    }

    pub fn label(&self) -> String {
        match self.aggregation {
            Aggregation::MeanRate => format!("{}", self.variable),
            Aggregation::CumulativeSum => format!("{}_sum", self.variable),
            Aggregation::RunningMaximum => format!("{}_max", self.variable),
            Aggregation::LastValue => format!("{}_last", self.variable),
        }
    }
}

impl AtomicCondition {
    pub fn feature(&self) -> Feature {
        Feature {
            variable: self.variable.clone(),
            aggregation: self.aggregation,
        }
    }
}

/// Aggregated value of the condition's variable over weeks `1..=week`.
pub fn aggregate_feature(trajectory: &ObservedTrajectory, condition: &AtomicCondition, week: Week) -> Result<f64> {
    aggregate(trajectory, &condition.variable, condition.aggregation, week)
}

fn aggregate(trajectory: &ObservedTrajectory, variable: &VariableId, aggregation: Aggregation, week: Week) -> Result<f64> {
    let values = trajectory.values(variable)?;
    if week < 1 || week > trajectory.horizon() {
        return Err(Error::config(
            "decision_week",
            format!("week {week} outside trajectory horizon 1..={}", trajectory.horizon()),
        ));
    }
    let window = &values[..week as usize];
    Ok(match aggregation {
        Aggregation::CumulativeSum => window.iter().sum(),
        Aggregation::MeanRate => window.iter().sum::<f64>() / f64::from(week),
        Aggregation::RunningMaximum => window.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::LastValue => window[window.len() - 1],
    })
}

/// Nonresponder iff every atomic condition of the rule holds at its decision
/// week (strict inequalities).
pub fn classify_response(trajectory: &ObservedTrajectory, rule: &TailoringRule) -> Result<Response> {
    let mut nonresponse = true;
    for atom in rule.condition.atoms() {
        let feature = aggregate_feature(trajectory, atom, rule.decision_week)?;
        nonresponse &= atom.holds(feature);
    }
    Ok(if nonresponse {
        Response::Nonresponder
    } else {
        Response::Responder
    })
}
