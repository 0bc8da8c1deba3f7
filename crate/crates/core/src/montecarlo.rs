//! Replicated simulation: power, type-I error, estimator bias against the
//! potential-outcome truth, and nonresponder counts per arm.
//!
//! Replicate `r` draws its world and its assignments from seeds derived from
//! `(master seed, r)`. Results are gathered in replicate order and reduced
//! sequentially, so a report is bit-identical for any thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    arm_contrasts, compare_labels, fit_quadratic_time, fit_weighted, ipw_regime_value, labels_key,
    stats::std_dev, ContrastOptions, Correction, IpwOptions, QuadraticOptions,
};
use crate::datagen::{check_regime, gen_population, regime_truth, OutcomeScale, PotentialOutcomeTable, ScenarioParams};
use crate::designs::{design_seed, run_design, Arm, DesignSpec, Scheme};
use crate::error::{Error, Result};
use crate::model::{classify_response, AdaptiveIntervention, ArmLabels, Factor, TrialRecord, Week};
use crate::rng::{derive_seed, Domain};

/// Which estimators each replicate runs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McAnalysis {
    /// Grouping for arm contrasts; defaults to [`default_factors`].
    #[serde(default)]
    pub factors: Option<Vec<Factor>>,
    #[serde(default)]
    pub scale: OutcomeScale,
    #[serde(default)]
    pub correction: Correction,
    /// `[first, second]` group labels of the contrast used for power.
    #[serde(default)]
    pub primary_contrast: Option<[String; 2]>,
    /// Regimes estimated by inverse probability weighting.
    #[serde(default)]
    pub regimes: Vec<AdaptiveIntervention>,
    /// Fit the quadratic decision-time model.
    #[serde(default)]
    pub quadratic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McPlan {
    pub scenario: ScenarioParams,
    pub design: DesignSpec,
    pub analysis: McAnalysis,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Size of a separate large population on which super-population truths
    /// are computed once.
    pub reference_population: Option<usize>,
}

impl McPlan {
    pub fn new(scenario: ScenarioParams, design: DesignSpec, analysis: McAnalysis, replicates: usize, seed: u64) -> Self {
        McPlan {
            scenario,
            design,
            analysis,
            replicates,
            alpha: 0.05,
            seed,
            reference_population: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::config("mc.replicates", "at least one replicate is required"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("mc.alpha", "alpha must lie in (0, 1)"));
        }
        if self.reference_population == Some(0) {
            return Err(Error::config("mc.reference_population", "must be positive"));
        }
        self.scenario.validate()?;
        self.design.validate(&self.scenario)?;
        let design_factors = self.design.factors();
        for f in self.factors() {
            if !design_factors.contains(&f) {
                return Err(Error::config(
                    "analysis.factors",
                    format!("the design does not randomize `{}`", f.name()),
                ));
            }
        }
        for adi in &self.analysis.regimes {
            check_regime(&self.scenario, adi)?;
        }
        if self.analysis.quadratic && !matches!(self.design.scheme, Scheme::DecisionTimeTrial { .. }) {
            return Err(Error::config("analysis.estimators", "quadratic needs a decision_time_trial design"));
        }
        Ok(())
    }

    fn factors(&self) -> Vec<Factor> {
        self.analysis
            .factors
            .clone()
            .unwrap_or_else(|| default_factors(&self.design))
    }
}

/// Factors that every record of `design` carries. Rescue options of a hybrid
/// design are assigned to nonresponders only and are left out.
pub fn default_factors(design: &DesignSpec) -> Vec<Factor> {
    match design.scheme {
        Scheme::HybridFactorialSmart { .. } => vec![Factor::Cutoff, Factor::Time],
        _ => design.factors(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    pub first: String,
    pub second: String,
    /// Replicates in which both groups had at least two records.
    pub replicates: usize,
    /// Power, or type-I error under a null.
    pub rejection_rate: f64,
    /// `sqrt(rate (1 - rate) / replicates)`.
    pub mc_se: f64,
    pub mean_estimate: f64,
    /// Difference of group truths, averaged over replicate populations.
    pub mean_truth: f64,
    pub bias: f64,
    /// `None` with a single replicate.
    pub bias_mc_se: Option<f64>,
    pub reference_truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: String,
    pub mean_estimate: f64,
    pub mean_truth: f64,
    pub bias: f64,
    /// `None` with a single replicate.
    pub bias_mc_se: Option<f64>,
    pub reference_truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgmaxSummary {
    pub mean_estimate: f64,
    /// Vertex of the quadratic through the population arm truths.
    pub mean_truth: f64,
    pub bias: f64,
    pub mse: f64,
    pub reference_truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmNonresponse {
    pub arm: String,
    pub mean_n: f64,
    pub mean_nonresponders: f64,
    pub sd_nonresponders: f64,
    pub min_nonresponders: usize,
    pub mean_proportion: f64,
    /// Some replicate had fewer than two nonresponders to compare rescue in.
    pub unpowered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub replicates: usize,
    pub population: usize,
    pub alpha: f64,
    pub seed: u64,
    pub contrasts: Vec<ContrastSummary>,
    pub regimes: Vec<RegimeSummary>,
    pub argmax: Option<ArgmaxSummary>,
    pub arms: Vec<ArmNonresponse>,
}

impl McReport {
    /// The contrast named by `primary`, or the first one.
    pub fn primary(&self, primary: Option<&[String; 2]>) -> Result<&ContrastSummary> {
        match primary {
            Some([a, b]) => self
                .contrasts
                .iter()
                .find(|c| (&c.first == a && &c.second == b) || (&c.first == b && &c.second == a))
                .ok_or_else(|| {
                    Error::config("analysis.primary_contrast", format!("no contrast between `{a}` and `{b}`"))
                }),
            None => self
                .contrasts
                .first()
                .ok_or_else(|| Error::config("analysis.factors", "the plan produces no contrasts")),
        }
    }
}

type Branch = (ArmLabels, f64, Option<(Week, String)>);

/// Every assignment the design could give participant `i`, with its
/// probability and the rescue it implies.
fn branches(design: &DesignSpec, arms: Option<&[Arm]>, table: &PotentialOutcomeTable, i: usize) -> Result<Vec<Branch>> {
    let trajectory = &table.participants[i].trajectory;
    if let Some(arms) = arms {
        let mut out = Vec::new();
        for a in arms {
            if classify_response(trajectory, &a.rule)?.is_nonresponder() {
                for (o, q) in &a.options {
                    let mut labels = a.labels.clone();
                    if a.options.len() > 1 {
                        labels.rescue = Some(o.clone());
                    }
                    out.push((labels, a.probability * q, Some((a.rule.decision_week, o.clone()))));
                }
            } else {
                out.push((a.labels.clone(), a.probability, None));
            }
        }
        return Ok(out);
    }
    Ok(match &design.scheme {
        Scheme::SinglyRandomizedRescue {
            decision_week,
            rescue_probability,
            rescue,
        } => {
            let label = |r: &str| ArmLabels {
                rescue: Some(r.to_string()),
                ..Default::default()
            };
            vec![
                (label(rescue), *rescue_probability, Some((*decision_week, rescue.clone()))),
                (label("none"), 1.0 - rescue_probability, None),
            ]
        }
        Scheme::UnrestrictedSmart {
            times,
            rescue_probabilities,
            rescue,
        } => {
            let mut out = Vec::new();
            let mut alive = 1.0;
            for (&w, &p) in times.iter().zip(rescue_probabilities) {
                let labels = ArmLabels {
                    time: Some(w.to_string()),
                    rescue: Some(rescue.clone()),
                    ..Default::default()
                };
                out.push((labels, alive * p, Some((w, rescue.clone()))));
                alive *= 1.0 - p;
            }
            let never = ArmLabels {
                time: Some("never".into()),
                rescue: Some("none".into()),
                ..Default::default()
            };
            out.push((never, alive, None));
            out
        }
        _ => vec![(ArmLabels::default(), 1.0, None)],
    })
}

/// Population mean of each group under the design: the probability-weighted
/// average of the potential outcomes falling in that group.
fn group_truths(
    table: &PotentialOutcomeTable,
    design: &DesignSpec,
    factors: &[Factor],
    scale: OutcomeScale,
) -> Result<BTreeMap<String, (f64, f64)>> {
    let arms = design.arms()?;
    let mut acc: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for i in 0..table.len() {
        for (labels, p, rescue) in branches(design, arms.as_deref(), table, i)? {
            let Some(key) = labels_key(&labels, factors) else {
                continue;
            };
            if p <= 0.0 {
                continue;
            }
            let y = table.outcome(i, rescue.as_ref().map(|(w, o)| (o.as_str(), *w)))?;
            let v = table.scaled(y, rescue.is_some(), scale);
            let e = acc.entry(key).or_insert((0.0, 0.0));
            e.0 += p * v;
            e.1 += p;
        }
    }
    Ok(acc)
}

fn truth_means(totals: &BTreeMap<String, (f64, f64)>) -> BTreeMap<String, f64> {
    totals.iter().map(|(k, (num, den))| (k.clone(), num / den)).collect()
}

/// Vertex of the quadratic through the population time-arm truths, weighted
/// by arm probability.
fn argmax_truth(table: &PotentialOutcomeTable, design: &DesignSpec, scale: OutcomeScale) -> Result<f64> {
    let totals = group_truths(table, design, &[Factor::Time], scale)?;
    let mut rows: Vec<(Week, f64, f64)> = totals
        .iter()
        .map(|(k, (num, den))| {
            let t: Week = k.trim_start_matches("time=").parse().expect("numeric time label");
            (t, num / den, *den)
        })
        .collect();
    rows.sort_by_key(|r| r.0);
    let times: Vec<Week> = rows.iter().map(|r| r.0).collect();
    let means: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let weights: Vec<f64> = rows.iter().map(|r| r.2).collect();
    Ok(fit_weighted(&times, &means, &weights)?.argmax)
}

/// `(n, nonresponders)` per upfront arm, plus per rescue option among the
/// rescued when options are randomized.
fn arm_counts(records: &[TrialRecord]) -> BTreeMap<String, (usize, usize)> {
    let mut out: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in records {
        let Some(c) = r.classification else { continue };
        let factors: Vec<Factor> = [Factor::Variable, Factor::Cutoff, Factor::Time]
            .into_iter()
            .filter(|&f| r.arms.get(f).is_some())
            .collect();
        let key = labels_key(&r.arms, &factors).unwrap_or_default();
        let nr = usize::from(c.response.is_nonresponder());
        let e = out.entry(key).or_default();
        e.0 += 1;
        e.1 += nr;
        if let Some(option) = &r.arms.rescue {
            let e = out.entry(format!("rescue={option}")).or_default();
            e.0 += 1;
            e.1 += nr;
        }
    }
    out
}

fn summarize_counts(per_replicate: &[BTreeMap<String, (usize, usize)>]) -> Vec<ArmNonresponse> {
    let mut keys: Vec<String> = per_replicate.iter().flat_map(|m| m.keys().cloned()).collect();
    keys.sort_by(|a, b| compare_labels(a, b));
    keys.dedup();
    let r = per_replicate.len() as f64;
    keys.into_iter()
        .map(|arm| {
            let counts: Vec<(usize, usize)> = per_replicate
                .iter()
                .map(|m| m.get(&arm).copied().unwrap_or((0, 0)))
                .collect();
            let nr: Vec<f64> = counts.iter().map(|c| c.1 as f64).collect();
            let min_nonresponders = counts.iter().map(|c| c.1).min().unwrap_or(0);
            ArmNonresponse {
                mean_n: counts.iter().map(|c| c.0 as f64).sum::<f64>() / r,
                mean_nonresponders: nr.iter().sum::<f64>() / r,
                sd_nonresponders: if nr.len() > 1 { std_dev(&nr) } else { 0.0 },
                min_nonresponders,
                mean_proportion: counts
                    .iter()
                    .map(|&(n, k)| if n > 0 { k as f64 / n as f64 } else { 0.0 })
                    .sum::<f64>()
                    / r,
                unpowered: min_nonresponders < 2,
                arm,
            }
        })
        .collect()
}

/// Nonresponder counts per arm across replicate trials of a rule-based
/// design.
pub fn effective_sample_report(replicates: &[Vec<TrialRecord>]) -> Vec<ArmNonresponse> {
    let per: Vec<_> = replicates.iter().map(|r| arm_counts(r)).collect();
    summarize_counts(&per)
}

struct ReplicateOutcome {
    /// `(first, second, estimate, rejected, truth)`.
    contrasts: Vec<(String, String, f64, bool, f64)>,
    regimes: Vec<(f64, f64)>,
    argmax: Option<(f64, f64)>,
    counts: BTreeMap<String, (usize, usize)>,
}

fn run_one(plan: &McPlan, index: usize) -> Result<ReplicateOutcome> {
    let seed = derive_seed(plan.seed, Domain::Replicate, index as u64);
    let scenario = ScenarioParams {
        seed: derive_seed(seed, Domain::Population, 0),
        ..plan.scenario.clone()
    };
    let table = gen_population(&scenario)?;
    let records = run_design(&table, &plan.design, design_seed(seed))?;
    let scale = plan.analysis.scale;
    let factors = plan.factors();
    let mut contrasts = Vec::new();
    if !factors.is_empty() {
        let options = ContrastOptions {
            scale,
            correction: plan.analysis.correction,
            expected_groups: Vec::new(),
        };
        let table_c = arm_contrasts(&records, &factors, &options)?;
        let truths = truth_means(&group_truths(&table, &plan.design, &factors, scale)?);
        for c in table_c.contrasts {
            let truth = truths.get(&c.first).copied().unwrap_or(f64::NAN)
                - truths.get(&c.second).copied().unwrap_or(f64::NAN);
            contrasts.push((c.first, c.second, c.difference, c.p_adjusted < plan.alpha, truth));
        }
    }
    let ipw = IpwOptions {
        scale,
        normalized: true,
        bootstrap: 0,
        seed,
    };
    let regimes = plan
        .analysis
        .regimes
        .iter()
        .map(|adi| Ok((ipw_regime_value(&records, adi, &ipw)?.estimate, regime_truth(&table, adi, scale)?)))
        .collect::<Result<Vec<_>>>()?;
    let argmax = if plan.analysis.quadratic {
        let q = QuadraticOptions {
            scale,
            bootstrap: 0,
            seed,
        };
        Some((fit_quadratic_time(&records, &q)?.argmax, argmax_truth(&table, &plan.design, scale)?))
    } else {
        None
    };
    Ok(ReplicateOutcome {
        contrasts,
        regimes,
        argmax,
        counts: arm_counts(&records),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn se_of_mean(v: &[f64]) -> Option<f64> {
    (v.len() > 1).then(|| std_dev(v) / (v.len() as f64).sqrt())
}

/// Runs `plan.replicates` independent trials and aggregates the estimators.
pub fn run_replicates(plan: &McPlan) -> Result<McReport> {
    plan.validate()?;
    let results: Vec<Result<ReplicateOutcome>> = (0..plan.replicates)
        .into_par_iter()
        .map(|r| run_one(plan, r))
        .collect();
    let mut outcomes = Vec::with_capacity(results.len());
    for (index, res) in results.into_iter().enumerate() {
        outcomes.push(res.map_err(|e| Error::Replicate {
            index,
            seed: derive_seed(plan.seed, Domain::Replicate, index as u64),
            source: Box::new(e),
        })?);
    }

    let reference = match plan.reference_population {
        Some(n) => {
            let params = ScenarioParams {
                population: n,
                seed: derive_seed(plan.seed, Domain::Reference, 0),
                ..plan.scenario.clone()
            };
            Some(gen_population(&params)?)
        }
        None => None,
    };
    let scale = plan.analysis.scale;
    let factors = plan.factors();
    let ref_groups = match &reference {
        Some(t) if !factors.is_empty() => Some(truth_means(&group_truths(t, &plan.design, &factors, scale)?)),
        _ => None,
    };

    let mut by_pair: BTreeMap<(String, String), Vec<(f64, bool, f64)>> = BTreeMap::new();
    for o in &outcomes {
        for (a, b, est, rej, truth) in &o.contrasts {
            by_pair.entry((a.clone(), b.clone())).or_default().push((*est, *rej, *truth));
        }
    }
    let mut pairs: Vec<(String, String)> = by_pair.keys().cloned().collect();
    pairs.sort_by(|x, y| compare_labels(&x.1, &y.1).then_with(|| compare_labels(&x.0, &y.0)));
    let contrasts = pairs
        .into_iter()
        .map(|key| {
            let rows = &by_pair[&key];
            let k = rows.len() as f64;
            let rate = rows.iter().filter(|r| r.1).count() as f64 / k;
            let est: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let truth: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let err: Vec<f64> = rows.iter().map(|r| r.0 - r.2).collect();
            let reference_truth = ref_groups.as_ref().and_then(|g| Some(g.get(&key.0)? - g.get(&key.1)?));
            ContrastSummary {
                replicates: rows.len(),
                rejection_rate: rate,
                mc_se: (rate * (1.0 - rate) / k).sqrt(),
                mean_estimate: mean(&est),
                mean_truth: mean(&truth),
                bias: mean(&err),
                bias_mc_se: se_of_mean(&err),
                reference_truth,
                first: key.0,
                second: key.1,
            }
        })
        .collect();

    let regimes = plan
        .analysis
        .regimes
        .iter()
        .enumerate()
        .map(|(j, adi)| {
            let est: Vec<f64> = outcomes.iter().map(|o| o.regimes[j].0).collect();
            let truth: Vec<f64> = outcomes.iter().map(|o| o.regimes[j].1).collect();
            let err: Vec<f64> = est.iter().zip(&truth).map(|(e, t)| e - t).collect();
            Ok(RegimeSummary {
                regime: adi.to_string(),
                mean_estimate: mean(&est),
                mean_truth: mean(&truth),
                bias: mean(&err),
                bias_mc_se: se_of_mean(&err),
                reference_truth: match &reference {
                    Some(t) => Some(regime_truth(t, adi, scale)?),
                    None => None,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let argmax = if plan.analysis.quadratic {
        let est: Vec<f64> = outcomes.iter().filter_map(|o| o.argmax.map(|a| a.0)).collect();
        let truth: Vec<f64> = outcomes.iter().filter_map(|o| o.argmax.map(|a| a.1)).collect();
        let sq: Vec<f64> = est.iter().zip(&truth).map(|(e, t)| (e - t) * (e - t)).collect();
        Some(ArgmaxSummary {
            mean_estimate: mean(&est),
            mean_truth: mean(&truth),
            bias: mean(&est) - mean(&truth),
            mse: mean(&sq),
            reference_truth: match &reference {
                Some(t) => Some(argmax_truth(t, &plan.design, scale)?),
                None => None,
            },
        })
    } else {
        None
    };

    let counts: Vec<_> = outcomes.into_iter().map(|o| o.counts).collect();
    Ok(McReport {
        replicates: plan.replicates,
        population: plan.scenario.population,
        alpha: plan.alpha,
        seed: plan.seed,
        contrasts,
        regimes,
        argmax,
        arms: summarize_counts(&counts),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    #[serde(rename = "N")]
    pub n: usize,
    pub power: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerStatus {
    Found,
    NotFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSearch {
    pub contrast: [String; 2],
    pub target: f64,
    pub curve: Vec<PowerPoint>,
    pub status: PowerStatus,
    /// Smallest grid size whose estimated power reaches `target`.
    pub required_n: Option<usize>,
    /// Full report at each grid size.
    pub reports: Vec<McReport>,
}

/// Power of the primary contrast at each population size in `n_grid`.
pub fn power_search(plan: &McPlan, target: f64, n_grid: &[usize]) -> Result<PowerSearch> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::config("mc.target_power", "target power must lie in (0, 1)"));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::config("mc.n_grid", "grid must be nonempty, positive and strictly increasing"));
    }
    let mut curve = Vec::with_capacity(n_grid.len());
    let mut contrast: Option<[String; 2]> = None;
    let mut reports = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut p = plan.clone();
        p.scenario.population = n;
        let report = run_replicates(&p)?;
        let c = report.primary(plan.analysis.primary_contrast.as_ref())?;
        contrast.get_or_insert_with(|| [c.first.clone(), c.second.clone()]);
        curve.push(PowerPoint {
            n,
            power: c.rejection_rate,
            mc_se: c.mc_se,
        });
        reports.push(report);
    }
    let required_n = curve.iter().find(|pt| pt.power >= target).map(|pt| pt.n);
    Ok(PowerSearch {
        contrast: contrast.expect("nonempty grid"),
        target,
        curve,
        status: if required_n.is_some() {
            PowerStatus::Found
        } else {
            PowerStatus::NotFound
        },
        required_n,
        reports,
    })
}
