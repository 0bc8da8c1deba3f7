//! Randomization engines that turn a potential-outcome table into trial
//! records.
//!
//! Rule-based schemes randomize participants to tailoring rules (cutoffs,
//! decision times, variables) and then deliver rescue deterministically to
//! whoever the assigned rule classifies as a nonresponder, in the week of
//! classification. `SinglyRandomizedRescue` and `UnrestrictedSmart` randomize
//! the rescue action itself, independently of the trajectories.
//!
//! Every record carries an [`AssignmentPath`]: for each decision week up to
//! rescue, the realized action and its probability given the participant's
//! observed history and earlier actions, marginal over any concealed arm.
//! These are the propensities used for inverse probability weighting.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{PotentialOutcomeTable, ScenarioParams};
use crate::error::{Error, Result};
use crate::model::{
    classify_response, validate_identifier, Action, ArmLabels, AssignmentPath, AssignmentStep, AtomicCondition,
    Classification, Condition, Factor, Response, TailoringRule, TrialRecord, Week,
};
use crate::rng::{derive_seed, substream, Domain};

const PROB_TOL: f64 = 1e-9;

/// How decision times are allocated in a [`Scheme::DecisionTimeTrial`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeAllocation {
    /// One draw at week 0; `probabilities` default to equal.
    Upfront {
        #[serde(default)]
        probabilities: Option<Vec<f64>>,
    },
    /// Decide-now / decide-later draws at each candidate time. Either one
    /// probability per non-final time, or one per time with the last equal
    /// to 1.
    Sequential { stage_probabilities: Vec<f64> },
    /// Sequential draws with stage probabilities solved from a target
    /// marginal allocation.
    SequentialTarget { target: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledRule {
    pub label: String,
    pub rule: TailoringRule,
}

/// One level of the observed-variable factor in a full cross; `levels[j]` is
/// the condition used at cutoff level `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossVariable {
    pub label: String,
    pub levels: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheme {
    /// Everyone stays on the initial treatment; no randomization.
    InitialOnly,
    CutoffTrial {
        condition: AtomicCondition,
        cutoffs: Vec<f64>,
        decision_week: Week,
        rescue: String,
        #[serde(default)]
        allocation: Option<Vec<f64>>,
    },
    DecisionTimeTrial {
        condition: Condition,
        times: Vec<Week>,
        allocation: TimeAllocation,
        rescue: String,
    },
    FactorialCutoffTime {
        condition: AtomicCondition,
        cutoffs: Vec<f64>,
        times: Vec<Week>,
        rescue: String,
    },
    /// Factorial cutoff x time cells; nonresponders are re-randomized among
    /// `rescue_options`.
    HybridFactorialSmart {
        condition: AtomicCondition,
        cutoffs: Vec<f64>,
        times: Vec<Week>,
        rescue_options: Vec<String>,
        #[serde(default)]
        rescue_probabilities: Option<Vec<f64>>,
    },
    VariableTrial {
        arms: Vec<LabeledRule>,
        rescue: String,
    },
    SinglyRandomizedRescue {
        decision_week: Week,
        rescue_probability: f64,
        rescue: String,
    },
    /// Rescue-or-wait draws at each time for everyone not yet rescued.
    UnrestrictedSmart {
        times: Vec<Week>,
        rescue_probabilities: Vec<f64>,
        rescue: String,
    },
    FullCross {
        variables: Vec<CrossVariable>,
        cutoff_labels: Vec<String>,
        times: Vec<Week>,
        rescue: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub scheme: Scheme,
    /// Permuted-block size for upfront arm allocation.
    #[serde(default)]
    pub block_size: Option<usize>,
}

impl From<Scheme> for DesignSpec {
    fn from(scheme: Scheme) -> Self {
        DesignSpec {
            scheme,
            block_size: None,
        }
    }
}

/// One arm of a rule-based design. Each `(arm, rescue option)` pair is an
/// embedded adaptive intervention.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub labels: ArmLabels,
    pub rule: TailoringRule,
    /// Marginal probability of being assigned this arm.
    pub probability: f64,
    /// Rescue options for nonresponders with their probabilities.
    pub options: Vec<(String, f64)>,
}

pub fn format_cutoff(c: f64) -> String {
    format!("{c}")
}

/// Stage-wise decide-now probabilities that induce `target` as the marginal
/// allocation over decision times: `p_k = target_k / remaining_k`, last
/// stage 1.
pub fn sequential_alloc_probs(target: &[f64]) -> Result<Vec<f64>> {
    if target.is_empty() {
        return Err(Error::InfeasibleTarget("target allocation is empty".into()));
    }
    if target.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::InfeasibleTarget("target entries must be finite and >= 0".into()));
    }
    let total: f64 = target.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InfeasibleTarget(format!("target sums to {total}, not 1")));
    }
    let mut remaining = 1.0;
    let mut probs = Vec::with_capacity(target.len());
    for (k, &t) in target.iter().enumerate() {
        if k + 1 == target.len() {
            probs.push(1.0);
            break;
        }
        if remaining <= PROB_TOL {
            if t > PROB_TOL {
                return Err(Error::InfeasibleTarget(format!(
                    "no participants remain at stage {} but its target is {t}",
                    k + 1
                )));
            }
            probs.push(1.0);
            continue;
        }
        let p = (t / remaining).min(1.0);
        probs.push(p);
        remaining -= t;
    }
    Ok(probs)
}

/// Marginal allocation induced by sequential decide-now probabilities. The
/// final stage always decides.
pub fn induced_marginals(stage_probs: &[f64]) -> Vec<f64> {
    let mut remaining = 1.0;
    let n = stage_probs.len();
    stage_probs
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let p = if k + 1 == n { 1.0 } else { p };
            let m = remaining * p;
            remaining -= m;
            m
        })
        .collect()
}

/// Permuted-block arm labels: each complete block of `block_size`
/// assignments holds `block_size / arms` of every arm; the last block may be
/// a truncated permutation.
pub fn permuted_block_assign(n: usize, arms: usize, block_size: usize, seed: u64) -> Result<Vec<usize>> {
    if arms == 0 || block_size == 0 || block_size % arms != 0 {
        return Err(Error::config(
            "design.block_size",
            format!("block size {block_size} must be a positive multiple of the {arms} arms"),
        ));
    }
    let mut rng = substream(seed, Domain::Block, 0);
    let per_arm = block_size / arms;
    let mut block: Vec<usize> = (0..arms).flat_map(|a| std::iter::repeat_n(a, per_arm)).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        block.shuffle(&mut rng);
        let take = (n - out.len()).min(block_size);
        out.extend_from_slice(&block[..take]);
    }
    Ok(out)
}

fn check_probability(field: &str, p: f64, allow_one: bool) -> Result<()> {
    let ok = p > 0.0 && (p < 1.0 || (allow_one && p <= 1.0 + PROB_TOL));
    if !ok || !p.is_finite() {
        return Err(Error::config(field, format!("probability {p} must lie in (0, 1)")));
    }
    Ok(())
}

fn check_distribution(field: &str, probs: &[f64], expected_len: usize) -> Result<()> {
    if probs.len() != expected_len {
        return Err(Error::config(
            field,
            format!("expected {expected_len} probabilities, got {}", probs.len()),
        ));
    }
    for p in probs {
        check_probability(field, *p, expected_len == 1)?;
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::config(field, format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

fn check_times(field: &str, times: &[Week], params: &ScenarioParams) -> Result<()> {
    if times.is_empty() {
        return Err(Error::config(field, "at least one time is required"));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(field, "times must be strictly increasing"));
    }
    for t in times {
        if !params.candidate_weeks.contains(t) {
            return Err(Error::config(
                field,
                format!("week {t} is not among the scenario's candidate weeks {:?}", params.candidate_weeks),
            ));
        }
    }
    Ok(())
}

fn check_rescue(field: &str, rescue: &str, params: &ScenarioParams) -> Result<()> {
    if params.rescue(rescue).is_none() {
        return Err(Error::config(field, format!("undefined rescue option `{rescue}`")));
    }
    Ok(())
}

fn check_condition(field: &str, condition: &Condition, params: &ScenarioParams) -> Result<()> {
    condition.validate().map_err(|e| Error::config(field, e.to_string()))?;
    for atom in condition.atoms() {
        if !params.has_variable(&atom.variable) {
            return Err(Error::config(field, format!("undefined variable `{}`", atom.variable)));
        }
    }
    Ok(())
}

fn check_cutoffs(field: &str, cutoffs: &[f64]) -> Result<()> {
    if cutoffs.is_empty() {
        return Err(Error::config(field, "at least one cutoff is required"));
    }
    if cutoffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::config(field, "cutoffs must be finite"));
    }
    for (i, c) in cutoffs.iter().enumerate() {
        if cutoffs[..i].contains(c) {
            return Err(Error::config(field, format!("duplicate cutoff {c}")));
        }
    }
    Ok(())
}

fn check_label(field: &str, label: &str) -> Result<()> {
    validate_identifier(label).map_err(|m| Error::config(field, m))
}

fn equal(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

impl TimeAllocation {
    /// Marginal probability of each decision time.
    fn marginals(&self, k: usize) -> Result<Vec<f64>> {
        match self {
            TimeAllocation::Upfront { probabilities } => {
                let p = probabilities.clone().unwrap_or_else(|| equal(k));
                check_distribution("design.scheme.allocation.probabilities", &p, k)?;
                Ok(p)
            }
            TimeAllocation::Sequential { .. } | TimeAllocation::SequentialTarget { .. } => {
                Ok(induced_marginals(&self.stage_probs(k)?))
            }
        }
    }

    fn stage_probs(&self, k: usize) -> Result<Vec<f64>> {
        let field = "design.scheme.allocation";
        match self {
            TimeAllocation::Upfront { .. } => Err(Error::config(field, "upfront allocation has no stages")),
            TimeAllocation::Sequential { stage_probabilities } => {
                let n = stage_probabilities.len();
                if n + 1 != k && n != k {
                    return Err(Error::config(
                        format!("{field}.stage_probabilities"),
                        format!("expected {} or {k} stage probabilities for {k} times, got {n}", k - 1),
                    ));
                }
                let mut probs = stage_probabilities.clone();
                if n == k {
                    let last = probs[k - 1];
                    if (last - 1.0).abs() > PROB_TOL {
                        return Err(Error::config(
                            format!("{field}.stage_probabilities"),
                            format!("the final stage must decide with probability 1, got {last}"),
                        ));
                    }
                } else {
                    probs.push(1.0);
                }
                for p in &probs[..k - 1] {
                    check_probability(&format!("{field}.stage_probabilities"), *p, false)?;
                }
                probs[k - 1] = 1.0;
                Ok(probs)
            }
            TimeAllocation::SequentialTarget { target } => {
                if target.len() != k {
                    return Err(Error::config(
                        format!("{field}.target"),
                        format!("expected {k} entries, got {}", target.len()),
                    ));
                }
                let probs = sequential_alloc_probs(target)
                    .map_err(|e| Error::config(format!("{field}.target"), e.to_string()))?;
                for p in &probs[..k - 1] {
                    check_probability(&format!("{field}.target"), *p, false)?;
                }
                Ok(probs)
            }
        }
    }

    fn is_sequential(&self) -> bool {
        !matches!(self, TimeAllocation::Upfront { .. })
    }
}

impl DesignSpec {
    pub fn validate(&self, params: &ScenarioParams) -> Result<()> {
        let f = |name: &str| format!("design.scheme.{name}");
        match &self.scheme {
            Scheme::InitialOnly => {}
            Scheme::CutoffTrial {
                condition,
                cutoffs,
                decision_week,
                rescue,
                allocation,
            } => {
                check_condition(&f("condition"), &condition.clone().into(), params)?;
                check_cutoffs(&f("cutoffs"), cutoffs)?;
                check_times(&f("decision_week"), &[*decision_week], params)?;
                check_rescue(&f("rescue"), rescue, params)?;
                if let Some(p) = allocation {
                    check_distribution(&f("allocation"), p, cutoffs.len())?;
                }
            }
            Scheme::DecisionTimeTrial {
                condition,
                times,
                allocation,
                rescue,
            } => {
                check_condition(&f("condition"), condition, params)?;
                check_times(&f("times"), times, params)?;
                check_rescue(&f("rescue"), rescue, params)?;
                allocation.marginals(times.len())?;
            }
            Scheme::FactorialCutoffTime {
                condition,
                cutoffs,
                times,
                rescue,
            } => {
                check_condition(&f("condition"), &condition.clone().into(), params)?;
                check_cutoffs(&f("cutoffs"), cutoffs)?;
                check_times(&f("times"), times, params)?;
                check_rescue(&f("rescue"), rescue, params)?;
            }
            Scheme::HybridFactorialSmart {
                condition,
                cutoffs,
                times,
                rescue_options,
                rescue_probabilities,
            } => {
                check_condition(&f("condition"), &condition.clone().into(), params)?;
                check_cutoffs(&f("cutoffs"), cutoffs)?;
                check_times(&f("times"), times, params)?;
                if rescue_options.is_empty() {
                    return Err(Error::config(f("rescue_options"), "at least one rescue option is required"));
                }
                for (i, r) in rescue_options.iter().enumerate() {
                    check_rescue(&f(&format!("rescue_options[{i}]")), r, params)?;
                    if rescue_options[..i].contains(r) {
                        return Err(Error::config(f("rescue_options"), format!("duplicate option `{r}`")));
                    }
                }
                if let Some(p) = rescue_probabilities {
                    check_distribution(&f("rescue_probabilities"), p, rescue_options.len())?;
                }
            }
            Scheme::VariableTrial { arms, rescue } => {
                if arms.is_empty() {
                    return Err(Error::config(f("arms"), "at least one arm is required"));
                }
                for (i, arm) in arms.iter().enumerate() {
                    let field = f(&format!("arms[{i}]"));
                    check_label(&format!("{field}.label"), &arm.label)?;
                    if arms[..i].iter().any(|a| a.label == arm.label) {
                        return Err(Error::config(field, format!("duplicate label `{}`", arm.label)));
                    }
                    check_condition(&format!("{field}.rule.condition"), &arm.rule.condition, params)?;
                    check_times(&format!("{field}.rule.decision_week"), &[arm.rule.decision_week], params)?;
                }
                check_rescue(&f("rescue"), rescue, params)?;
            }
            Scheme::SinglyRandomizedRescue {
                decision_week,
                rescue_probability,
                rescue,
            } => {
                check_times(&f("decision_week"), &[*decision_week], params)?;
                check_probability(&f("rescue_probability"), *rescue_probability, false)?;
                check_rescue(&f("rescue"), rescue, params)?;
            }
            Scheme::UnrestrictedSmart {
                times,
                rescue_probabilities,
                rescue,
            } => {
                check_times(&f("times"), times, params)?;
                if rescue_probabilities.len() != times.len() {
                    return Err(Error::config(
                        f("rescue_probabilities"),
                        format!("expected {} probabilities, got {}", times.len(), rescue_probabilities.len()),
                    ));
                }
                for p in rescue_probabilities {
                    check_probability(&f("rescue_probabilities"), *p, false)?;
                }
                check_rescue(&f("rescue"), rescue, params)?;
            }
            Scheme::FullCross {
                variables,
                cutoff_labels,
                times,
                rescue,
            } => {
                if variables.is_empty() || cutoff_labels.is_empty() {
                    return Err(Error::config(f("variables"), "variables and cutoff levels must be nonempty"));
                }
                for (j, l) in cutoff_labels.iter().enumerate() {
                    check_label(&f(&format!("cutoff_labels[{j}]")), l)?;
                }
                for (i, v) in variables.iter().enumerate() {
                    let field = f(&format!("variables[{i}]"));
                    check_label(&format!("{field}.label"), &v.label)?;
                    if v.levels.len() != cutoff_labels.len() {
                        return Err(Error::config(
                            format!("{field}.levels"),
                            format!("expected {} cutoff levels, got {}", cutoff_labels.len(), v.levels.len()),
                        ));
                    }
                    for (j, c) in v.levels.iter().enumerate() {
                        check_condition(&format!("{field}.levels[{j}]"), c, params)?;
                    }
                }
                check_times(&f("times"), times, params)?;
                check_rescue(&f("rescue"), rescue, params)?;
            }
        }
        if let Some(b) = self.block_size {
            let arms = self.upfront_arm_count().ok_or_else(|| {
                Error::config("design.block_size", "permuted blocks need a single upfront allocation of arms")
            })?;
            let arm_list = self.arms()?.unwrap_or_default();
            if arm_list.iter().any(|a| (a.probability - 1.0 / arms as f64).abs() > PROB_TOL) {
                return Err(Error::config("design.block_size", "permuted blocks need equal allocation"));
            }
            if b == 0 || b % arms != 0 {
                return Err(Error::config(
                    "design.block_size",
                    format!("block size {b} must be a positive multiple of the {arms} arms"),
                ));
            }
        }
        Ok(())
    }

    fn upfront_arm_count(&self) -> Option<usize> {
        match &self.scheme {
            Scheme::DecisionTimeTrial { allocation, .. } if allocation.is_sequential() => None,
            Scheme::InitialOnly | Scheme::SinglyRandomizedRescue { .. } | Scheme::UnrestrictedSmart { .. } => None,
            _ => self.arms().ok().flatten().map(|a| a.len()),
        }
    }

    /// Factors this design randomizes.
    pub fn factors(&self) -> Vec<Factor> {
        match &self.scheme {
            Scheme::InitialOnly => vec![],
            Scheme::CutoffTrial { .. } => vec![Factor::Cutoff],
            Scheme::DecisionTimeTrial { .. } => vec![Factor::Time],
            Scheme::FactorialCutoffTime { .. } => vec![Factor::Cutoff, Factor::Time],
            Scheme::HybridFactorialSmart { .. } => vec![Factor::Cutoff, Factor::Time, Factor::Rescue],
            Scheme::VariableTrial { .. } => vec![Factor::Variable],
            Scheme::SinglyRandomizedRescue { .. } => vec![Factor::Rescue],
            Scheme::UnrestrictedSmart { .. } => vec![Factor::Time, Factor::Rescue],
            Scheme::FullCross { .. } => vec![Factor::Variable, Factor::Cutoff, Factor::Time],
        }
    }

    /// Whether rescue is a deterministic function of the assigned rule.
    pub fn is_rule_based(&self) -> bool {
        !matches!(
            self.scheme,
            Scheme::InitialOnly | Scheme::SinglyRandomizedRescue { .. } | Scheme::UnrestrictedSmart { .. }
        )
    }

    /// Number of cells of the upfront factorial (1 for non-rule designs).
    pub fn cell_count(&self) -> usize {
        self.arms().ok().flatten().map(|a| a.len()).unwrap_or(1)
    }

    /// Arms of a rule-based design; `None` for designs that randomize the
    /// action directly.
    pub fn arms(&self) -> Result<Option<Vec<Arm>>> {
        let single = |rescue: &str| vec![(rescue.to_string(), 1.0)];
        let labels = |cutoff: Option<String>, time: Option<String>, variable: Option<String>| ArmLabels {
            cutoff,
            time,
            variable,
            rescue: None,
        };
        let arms = match &self.scheme {
            Scheme::InitialOnly | Scheme::SinglyRandomizedRescue { .. } | Scheme::UnrestrictedSmart { .. } => {
                return Ok(None)
            }
            Scheme::CutoffTrial {
                condition,
                cutoffs,
                decision_week,
                rescue,
                allocation,
            } => {
                let probs = allocation.clone().unwrap_or_else(|| equal(cutoffs.len()));
                cutoffs
                    .iter()
                    .zip(probs)
                    .map(|(&c, p)| Arm {
                        labels: labels(Some(format_cutoff(c)), None, None),
                        rule: TailoringRule::new(*decision_week, condition.with_cutoff(c)),
                        probability: p,
                        options: single(rescue),
                    })
                    .collect()
            }
            Scheme::DecisionTimeTrial {
                condition,
                times,
                allocation,
                rescue,
            } => {
                let probs = allocation.marginals(times.len())?;
                times
                    .iter()
                    .zip(probs)
                    .map(|(&t, p)| Arm {
                        labels: labels(None, Some(t.to_string()), None),
                        rule: TailoringRule::new(t, condition.clone()),
                        probability: p,
                        options: single(rescue),
                    })
                    .collect()
            }
            Scheme::FactorialCutoffTime {
                condition,
                cutoffs,
                times,
                rescue,
            } => {
                let p = 1.0 / (cutoffs.len() * times.len()) as f64;
                cutoffs
                    .iter()
                    .flat_map(|&c| {
                        times.iter().map(move |&t| Arm {
                            labels: labels(Some(format_cutoff(c)), Some(t.to_string()), None),
                            rule: TailoringRule::new(t, condition.with_cutoff(c)),
                            probability: p,
                            options: single(rescue),
                        })
                    })
                    .collect()
            }
            Scheme::HybridFactorialSmart {
                condition,
                cutoffs,
                times,
                rescue_options,
                rescue_probabilities,
            } => {
                let p = 1.0 / (cutoffs.len() * times.len()) as f64;
                let q = rescue_probabilities
                    .clone()
                    .unwrap_or_else(|| equal(rescue_options.len()));
                let options: Vec<(String, f64)> = rescue_options.iter().cloned().zip(q).collect();
                cutoffs
                    .iter()
                    .flat_map(|&c| {
                        let options = options.clone();
                        times.iter().map(move |&t| Arm {
                            labels: labels(Some(format_cutoff(c)), Some(t.to_string()), None),
                            rule: TailoringRule::new(t, condition.with_cutoff(c)),
                            probability: p,
                            options: options.clone(),
                        })
                    })
                    .collect()
            }
            Scheme::VariableTrial { arms, rescue } => {
                let p = 1.0 / arms.len() as f64;
                arms.iter()
                    .map(|a| Arm {
                        labels: labels(None, None, Some(a.label.clone())),
                        rule: a.rule.clone(),
                        probability: p,
                        options: single(rescue),
                    })
                    .collect()
            }
            Scheme::FullCross {
                variables,
                cutoff_labels,
                times,
                rescue,
            } => {
                let p = 1.0 / (variables.len() * cutoff_labels.len() * times.len()) as f64;
                let mut out = Vec::new();
                for v in variables {
                    for (level, cl) in v.levels.iter().zip(cutoff_labels) {
                        for &t in times {
                            out.push(Arm {
                                labels: labels(Some(cl.clone()), Some(t.to_string()), Some(v.label.clone())),
                                rule: TailoringRule::new(t, level.clone()),
                                probability: p,
                                options: single(rescue),
                            });
                        }
                    }
                }
                out
            }
        };
        Ok(Some(arms))
    }

    /// Weeks at which the design makes a rescue decision.
    pub fn decision_weeks(&self) -> Vec<Week> {
        match &self.scheme {
            Scheme::InitialOnly => vec![],
            Scheme::SinglyRandomizedRescue { decision_week, .. } => vec![*decision_week],
            Scheme::UnrestrictedSmart { times, .. } => times.clone(),
            _ => {
                let mut weeks: Vec<Week> = self
                    .arms()
                    .ok()
                    .flatten()
                    .unwrap_or_default()
                    .iter()
                    .map(|a| a.rule.decision_week)
                    .collect();
                weeks.sort_unstable();
                weeks.dedup();
                weeks
            }
        }
    }
}

/// Index drawn by inverse CDF from one uniform variate.
fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

struct ArmOutcome {
    /// Week at which this arm would rescue the participant, if at all.
    rescue_week: Option<Week>,
    classification: Classification,
}

fn arm_outcomes(arms: &[Arm], table: &PotentialOutcomeTable, i: usize) -> Result<Vec<ArmOutcome>> {
    let trajectory = &table.participants[i].trajectory;
    arms.iter()
        .map(|a| {
            let response = classify_response(trajectory, &a.rule)?;
            Ok(ArmOutcome {
                rescue_week: response.is_nonresponder().then_some(a.rule.decision_week),
                classification: Classification {
                    response,
                    week: a.rule.decision_week,
                },
            })
        })
        .collect()
}

/// Propensity path of a realized action sequence in a rule-based design,
/// marginal over the concealed arm.
fn rule_path(arms: &[Arm], outcomes: &[ArmOutcome], weeks: &[Week], realized: Option<(Week, &str)>) -> AssignmentPath {
    let mut steps = Vec::new();
    for &w in weeks {
        let alive: f64 = arms
            .iter()
            .zip(outcomes)
            .filter(|(_, o)| o.rescue_week.is_none_or(|r| r >= w))
            .map(|(a, _)| a.probability)
            .sum();
        match realized {
            Some((rw, option)) if rw == w => {
                let num: f64 = arms
                    .iter()
                    .zip(outcomes)
                    .filter(|(_, o)| o.rescue_week == Some(w))
                    .map(|(a, _)| {
                        a.probability
                            * a.options
                                .iter()
                                .find(|(id, _)| id == option)
                                .map(|(_, q)| *q)
                                .unwrap_or(0.0)
                    })
                    .sum();
                steps.push(AssignmentStep {
                    week: w,
                    action: Action::Rescue(option.to_string()),
                    probability: num / alive,
                });
                break;
            }
            _ => {
                let num: f64 = arms
                    .iter()
                    .zip(outcomes)
                    .filter(|(_, o)| o.rescue_week.is_none_or(|r| r > w))
                    .map(|(a, _)| a.probability)
                    .sum();
                steps.push(AssignmentStep {
                    week: w,
                    action: Action::Wait,
                    probability: num / alive,
                });
            }
        }
    }
    AssignmentPath { steps }
}

fn finish_record(
    table: &PotentialOutcomeTable,
    i: usize,
    arms: ArmLabels,
    classification: Option<Classification>,
    rescue: Option<(Week, String)>,
    path: AssignmentPath,
) -> Result<TrialRecord> {
    let p = &table.participants[i];
    let outcome = match &rescue {
        Some((w, option)) => table.outcome(i, Some((option, *w)))?,
        None => p.no_rescue,
    };
    let rescued = rescue.is_some();
    let (rescue_week, rescue_option) = match rescue {
        Some((w, o)) => (Some(w), Some(o)),
        None => (None, None),
    };
    Ok(TrialRecord {
        participant_id: i,
        arms,
        trajectory: p.trajectory.clone(),
        classification,
        rescued,
        rescue_week,
        rescue_option,
        outcome,
        success: outcome >= table.params.success_threshold,
        adjusted_outcome: if rescued {
            outcome - table.params.cost_per_rescue
        } else {
            outcome
        },
        path,
    })
}

fn run_rule_based(table: &PotentialOutcomeTable, spec: &DesignSpec, arms: &[Arm], seed: u64) -> Result<Vec<TrialRecord>> {
    let n = table.len();
    let weeks = spec.decision_weeks();
    let probs: Vec<f64> = arms.iter().map(|a| a.probability).collect();
    let blocked = match spec.block_size {
        Some(b) => Some(permuted_block_assign(n, arms.len(), b, seed)?),
        None => None,
    };
    let sequential = match &spec.scheme {
        Scheme::DecisionTimeTrial { allocation, times, .. } if allocation.is_sequential() => {
            Some(allocation.stage_probs(times.len())?)
        }
        _ => None,
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, Domain::Design, i as u64);
            let arm_index = if let Some(stages) = &sequential {
                // decide-now draws, one per stage; the last stage always decides
                let mut chosen = stages.len() - 1;
                for (k, &p) in stages.iter().enumerate() {
                    if k + 1 == stages.len() || rng.random::<f64>() < p {
                        chosen = k;
                        break;
                    }
                }
                chosen
            } else if let Some(b) = &blocked {
                b[i]
            } else {
                inverse_cdf(&probs, rng.random::<f64>())
            };
            let arm = &arms[arm_index];
            let outcomes = arm_outcomes(arms, table, i)?;
            let mine = &outcomes[arm_index];
            let mut labels = arm.labels.clone();
            let rescue = match mine.rescue_week {
                Some(w) => {
                    let q: Vec<f64> = arm.options.iter().map(|(_, q)| *q).collect();
                    let option = arm.options[inverse_cdf(&q, rng.random::<f64>())].0.clone();
                    if arm.options.len() > 1 {
                        labels.rescue = Some(option.clone());
                    }
                    Some((w, option))
                }
                None => None,
            };
            let path = rule_path(arms, &outcomes, &weeks, rescue.as_ref().map(|(w, o)| (*w, o.as_str())));
            finish_record(table, i, labels, Some(mine.classification), rescue, path)
        })
        .collect()
}

/// Simulates one trial of `spec` on the population in `table`.
pub fn run_design(table: &PotentialOutcomeTable, spec: &DesignSpec, seed: u64) -> Result<Vec<TrialRecord>> {
    spec.validate(&table.params)?;
    if let Some(arms) = spec.arms()? {
        return run_rule_based(table, spec, &arms, seed);
    }
    let n = table.len();
    match &spec.scheme {
        Scheme::InitialOnly => (0..n)
            .into_par_iter()
            .map(|i| finish_record(table, i, ArmLabels::default(), None, None, AssignmentPath::default()))
            .collect(),
        Scheme::SinglyRandomizedRescue {
            decision_week,
            rescue_probability,
            rescue,
        } => (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(seed, Domain::Design, i as u64);
                let treat = rng.random::<f64>() < *rescue_probability;
                let (action, probability) = if treat {
                    (Action::Rescue(rescue.clone()), *rescue_probability)
                } else {
                    (Action::Wait, 1.0 - rescue_probability)
                };
                let labels = ArmLabels {
                    rescue: Some(if treat { rescue.clone() } else { "none".into() }),
                    ..ArmLabels::default()
                };
                let path = AssignmentPath {
                    steps: vec![AssignmentStep {
                        week: *decision_week,
                        action,
                        probability,
                    }],
                };
                let r = treat.then(|| (*decision_week, rescue.clone()));
                finish_record(table, i, labels, None, r, path)
            })
            .collect(),
        Scheme::UnrestrictedSmart {
            times,
            rescue_probabilities,
            rescue,
        } => (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = substream(seed, Domain::Design, i as u64);
                let mut steps = Vec::new();
                let mut rescued_at = None;
                for (&w, &p) in times.iter().zip(rescue_probabilities) {
                    if rng.random::<f64>() < p {
                        steps.push(AssignmentStep {
                            week: w,
                            action: Action::Rescue(rescue.clone()),
                            probability: p,
                        });
                        rescued_at = Some(w);
                        break;
                    }
                    steps.push(AssignmentStep {
                        week: w,
                        action: Action::Wait,
                        probability: 1.0 - p,
                    });
                }
                let labels = ArmLabels {
                    time: Some(rescued_at.map_or("never".to_string(), |w| w.to_string())),
                    rescue: Some(if rescued_at.is_some() { rescue.clone() } else { "none".into() }),
                    ..ArmLabels::default()
                };
                let r = rescued_at.map(|w| (w, rescue.clone()));
                finish_record(table, i, labels, None, r, AssignmentPath { steps })
            })
            .collect(),
        _ => unreachable!("rule-based schemes handled above"),
    }
}

/// Convenience: seed for the design stage derived from a master seed.
pub fn design_seed(master: u64) -> u64 {
    derive_seed(master, Domain::Design, 0)
}

/// Whether the response under a rule-based arm matches the record's action.
pub fn satisfies_rule_constraint(record: &TrialRecord, arms: &[Arm]) -> Result<bool> {
    let arm = arms
        .iter()
        .find(|a| {
            a.labels.cutoff == record.arms.cutoff
                && a.labels.time == record.arms.time
                && a.labels.variable == record.arms.variable
        })
        .ok_or_else(|| Error::Schema(format!("record {} matches no arm", record.participant_id)))?;
    let response = classify_response(&record.trajectory, &arm.rule)?;
    Ok((response == Response::Nonresponder) == record.rescued
        && record.rescue_week.is_none_or(|w| w == arm.rule.decision_week))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_population, ScenarioParams};
    use crate::model::aggregate_feature;

    fn table(n: usize) -> PotentialOutcomeTable {
        gen_population(&ScenarioParams {
            population: n,
            seed: 5,
            ..ScenarioParams::illustrative()
        })
        .unwrap()
    }

    fn app() -> AtomicCondition {
        AtomicCondition::below("app", 2.0).unwrap()
    }

    fn cutoff_trial() -> DesignSpec {
        Scheme::CutoffTrial {
            condition: app(),
            cutoffs: vec![1.0, 2.0],
            decision_week: 4,
            rescue: "coach".into(),
            allocation: None,
        }
        .into()
    }

    /// Marginals by enumerating every decide/later path.
    fn enumerate_marginals(stage: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; stage.len()];
        fn walk(stage: &[f64], k: usize, mass: f64, out: &mut [f64]) {
            if k + 1 == stage.len() {
                out[k] += mass;
                return;
            }
            out[k] += mass * stage[k];
            walk(stage, k + 1, mass * (1.0 - stage[k]), out);
        }
        walk(stage, 0, 1.0, &mut out);
        out
    }

    #[test]
    fn halving_stages_give_geometric_marginals() {
        let m = induced_marginals(&[0.5, 0.5, 0.5, 1.0]);
        assert_eq!(m, vec![0.5, 0.25, 0.125, 0.125]);
        assert_eq!(enumerate_marginals(&[0.5, 0.5, 0.5, 1.0]), m);
    }

    #[test]
    fn uniform_target_stage_probs() {
        let p = sequential_alloc_probs(&[0.25; 4]).unwrap();
        let expected = [0.25, 1.0 / 3.0, 0.5, 1.0];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{p:?}");
        }
        for m in enumerate_marginals(&p) {
            assert!((m - 0.25).abs() < 1e-12);
        }
        assert_eq!(sequential_alloc_probs(&[0.5, 0.5]).unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn infeasible_targets_are_rejected() {
        assert!(matches!(sequential_alloc_probs(&[1.0, 0.0, 0.2]), Err(Error::InfeasibleTarget(_))));
        assert!(sequential_alloc_probs(&[0.6, 0.6]).is_err());
        assert!(sequential_alloc_probs(&[]).is_err());
        // zero mass left with zero target is fine
        assert_eq!(sequential_alloc_probs(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn permuted_blocks_balance() {
        let a = permuted_block_assign(8, 2, 4, 1).unwrap();
        for block in a.chunks(4) {
            assert_eq!(block.iter().filter(|&&x| x == 0).count(), 2);
        }
        let a = permuted_block_assign(100, 4, 4, 1).unwrap();
        for arm in 0..4 {
            assert_eq!(a.iter().filter(|&&x| x == arm).count(), 25);
        }
        let a = permuted_block_assign(7, 2, 4, 1).unwrap();
        assert_eq!(a.len(), 7);
        let zeros = a[..4].iter().filter(|&&x| x == 0).count();
        assert_eq!(zeros, 2);
        let total0 = a.iter().filter(|&&x| x == 0).count() as i64;
        assert!((2 * total0 - 7).abs() <= 2);
        assert!(permuted_block_assign(8, 3, 4, 1).is_err());
    }

    #[test]
    fn cutoff_trial_assigns_by_rule() {
        let t = table(10_000);
        let recs = run_design(&t, &cutoff_trial(), 3).unwrap();
        let low = recs.iter().filter(|r| r.arms.cutoff.as_deref() == Some("1")).count() as f64;
        assert!((low / 10_000.0 - 0.5).abs() < 0.02);
        for r in &recs {
            let c: f64 = r.arms.cutoff.as_ref().unwrap().parse().unwrap();
            let rate = aggregate_feature(&r.trajectory, &app(), 4).unwrap();
            assert_eq!(r.rescued, rate < c);
            if r.rescued {
                assert_eq!(r.rescue_week, Some(4));
            }
        }
    }

    #[test]
    fn records_are_consistent_with_table() {
        let t = table(500);
        let recs = run_design(&t, &cutoff_trial(), 3).unwrap();
        for r in &recs {
            let expected = t
                .outcome(
                    r.participant_id,
                    r.rescue_week.map(|w| (r.rescue_option.as_deref().unwrap(), w)),
                )
                .unwrap();
            assert_eq!(r.outcome, expected);
            assert_eq!(r.success, r.outcome >= 0.0);
        }
    }

    #[test]
    fn unrestricted_smart_stops_after_rescue() {
        let t = table(2_000);
        let spec: DesignSpec = Scheme::UnrestrictedSmart {
            times: vec![2, 4, 6, 8],
            rescue_probabilities: vec![0.5; 4],
            rescue: "coach".into(),
        }
        .into();
        let recs = run_design(&t, &spec, 9).unwrap();
        let mut seen = false;
        for r in &recs {
            if r.rescue_week == Some(4) {
                seen = true;
                assert!(r.path.step_at(6).is_none() && r.path.step_at(8).is_none());
                assert_eq!(r.path.steps.len(), 2);
            }
            for s in &r.path.steps {
                assert!(s.probability > 0.0 && s.probability < 1.0);
            }
        }
        assert!(seen);
    }

    #[test]
    fn singly_randomized_rescue_ignores_trajectory() {
        let t = table(20_000);
        let spec: DesignSpec = Scheme::SinglyRandomizedRescue {
            decision_week: 4,
            rescue_probability: 0.5,
            rescue: "coach".into(),
        }
        .into();
        let recs = run_design(&t, &spec, 4).unwrap();
        let a: Vec<f64> = recs.iter().map(|r| if r.rescued { 1.0 } else { 0.0 }).collect();
        let o: Vec<f64> = recs.iter().map(|r| r.trajectory.series()[0].1[3]).collect();
        let n = a.len() as f64;
        let (ma, mo) = (a.iter().sum::<f64>() / n, o.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&o).map(|(x, y)| (x - ma) * (y - mo)).sum::<f64>() / n;
        let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
        let so = (o.iter().map(|y| (y - mo).powi(2)).sum::<f64>() / n).sqrt();
        // 4 standard errors of a null correlation
        assert!((cov / (sa * so)).abs() < 4.0 / n.sqrt());
    }

    #[test]
    fn factorial_cells_are_balanced_and_independent() {
        let t = table(8_000);
        let spec: DesignSpec = Scheme::FactorialCutoffTime {
            condition: app(),
            cutoffs: vec![1.0, 2.0],
            times: vec![2, 4],
            rescue: "coach".into(),
        }
        .into();
        assert_eq!(spec.cell_count(), 4);
        let recs = run_design(&t, &spec, 21).unwrap();
        for c in ["1", "2"] {
            for w in ["2", "4"] {
                let n = recs
                    .iter()
                    .filter(|r| r.arms.cutoff.as_deref() == Some(c) && r.arms.time.as_deref() == Some(w))
                    .count() as f64;
                let share = n / 8_000.0;
                assert!((share - 0.25).abs() < 3.0 * (0.25 * 0.75 / 8_000.0f64).sqrt() + 1e-3);
            }
        }
    }

    #[test]
    fn blocked_design_is_exactly_balanced() {
        let t = table(1_000);
        let mut spec = cutoff_trial();
        spec.block_size = Some(4);
        let recs = run_design(&t, &spec, 2).unwrap();
        let low = recs.iter().filter(|r| r.arms.cutoff.as_deref() == Some("1")).count();
        assert_eq!(low, 500);
        spec.block_size = Some(3);
        assert!(run_design(&t, &spec, 2).is_err());
    }

    #[test]
    fn hybrid_rerandomizes_nonresponders_only() {
        let t = table(4_000);
        let spec: DesignSpec = Scheme::HybridFactorialSmart {
            condition: app(),
            cutoffs: vec![1.0, 2.0],
            times: vec![2, 4],
            rescue_options: vec!["coach".into(), "intense".into()],
            rescue_probabilities: None,
        }
        .into();
        let recs = run_design(&t, &spec, 8).unwrap();
        let arms = spec.arms().unwrap().unwrap();
        for r in &recs {
            assert!(satisfies_rule_constraint(r, &arms).unwrap());
            assert_eq!(r.rescued, r.arms.rescue.is_some());
            assert_eq!(r.rescue_option, r.arms.rescue);
        }
        let intense = recs.iter().filter(|r| r.rescue_option.as_deref() == Some("intense")).count() as f64;
        let rescued = recs.iter().filter(|r| r.rescued).count() as f64;
        assert!((intense / rescued - 0.5).abs() < 0.05);
    }

    #[test]
    fn deterministic_design_has_unit_propensities() {
        let t = table(300);
        let spec: DesignSpec = Scheme::CutoffTrial {
            condition: app(),
            cutoffs: vec![1.0],
            decision_week: 4,
            rescue: "coach".into(),
            allocation: None,
        }
        .into();
        for r in run_design(&t, &spec, 1).unwrap() {
            assert_eq!(r.path.steps.len(), 1);
            assert_eq!(r.path.steps[0].probability, 1.0);
        }
    }

    #[test]
    fn rule_path_propensities_sum_to_one() {
        // for each participant the probabilities of all action sequences sum to 1
        let t = table(200);
        let spec: DesignSpec = Scheme::FactorialCutoffTime {
            condition: app(),
            cutoffs: vec![1.0, 2.0],
            times: vec![2, 4],
            rescue: "coach".into(),
        }
        .into();
        let arms = spec.arms().unwrap().unwrap();
        let weeks = spec.decision_weeks();
        for i in 0..t.len() {
            let outcomes = arm_outcomes(&arms, &t, i).unwrap();
            let mut total = 0.0;
            let mut seqs: Vec<Option<Week>> = vec![None];
            seqs.extend(weeks.iter().map(|&w| Some(w)));
            for s in seqs {
                let path = rule_path(&arms, &outcomes, &weeks, s.map(|w| (w, "coach")));
                total += path.steps.iter().map(|st| st.probability).product::<f64>();
            }
            assert!((total - 1.0).abs() < 1e-12, "participant {i}: {total}");
        }
    }

    #[test]
    fn validation_names_the_field() {
        let t = table(10);
        let spec: DesignSpec = Scheme::CutoffTrial {
            condition: app(),
            cutoffs: vec![1.0, 2.0],
            decision_week: 4,
            rescue: "pills".into(),
            allocation: None,
        }
        .into();
        match run_design(&t, &spec, 1) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "design.scheme.rescue"),
            other => panic!("{other:?}"),
        }
        let spec: DesignSpec = Scheme::DecisionTimeTrial {
            condition: app().into(),
            times: vec![4, 2],
            allocation: TimeAllocation::Upfront { probabilities: None },
            rescue: "coach".into(),
        }
        .into();
        assert!(run_design(&t, &spec, 1).is_err());
    }

    #[test]
    fn full_cross_has_product_cells() {
        let cannabis = AtomicCondition::above("cannabis", 1.0).unwrap();
        let app1 = AtomicCondition::below("app", 1.0).unwrap();
        let spec: DesignSpec = Scheme::FullCross {
            variables: vec![
                CrossVariable {
                    label: "cannabis".into(),
                    levels: vec![cannabis.clone().into(), cannabis.with_cutoff(2.0).into()],
                },
                CrossVariable {
                    label: "app".into(),
                    levels: vec![app1.clone().into(), app1.with_cutoff(2.0).into()],
                },
                CrossVariable {
                    label: "both".into(),
                    levels: vec![
                        Condition::both(cannabis.clone(), app1.clone()).unwrap(),
                        Condition::both(cannabis.with_cutoff(2.0), app1.with_cutoff(2.0)).unwrap(),
                    ],
                },
            ],
            cutoff_labels: vec!["lo".into(), "hi".into()],
            times: vec![2, 4, 6, 8],
            rescue: "coach".into(),
        }
        .into();
        assert_eq!(spec.cell_count(), 24);
        let t = table(2_400);
        let arms = spec.arms().unwrap().unwrap();
        for r in run_design(&t, &spec, 1).unwrap() {
            assert!(satisfies_rule_constraint(&r, &arms).unwrap());
        }
    }
}
