//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::Correction;
use crate::datagen::{check_regime, OutcomeScale, ScenarioParams};
use crate::designs::{DesignSpec, Scheme};
use crate::error::{Error, Result};
use crate::model::{AdaptiveIntervention, AtomicCondition, Factor, Feature, Week};
use crate::montecarlo::{McAnalysis, McPlan};

/// Environment variable consulted for the seed when neither the command
/// line nor the configuration sets one.
pub const SEED_ENV: &str = "TAILORLAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Contrasts,
    Ipw,
    Quadratic,
    Moderation,
    Positivity,
    ConditionalMean,
    Elbow,
    CutoffScan,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Contrasts => "contrasts",
            Estimator::Ipw => "ipw",
            Estimator::Quadratic => "quadratic",
            Estimator::Moderation => "moderation",
            Estimator::Positivity => "positivity",
            Estimator::ConditionalMean => "conditional_mean",
            Estimator::Elbow => "elbow",
            Estimator::CutoffScan => "cutoff_scan",
        }
    }

    /// Needs randomized rescue and passes through the positivity gate.
    pub fn is_causal(self) -> bool {
        matches!(self, Estimator::Ipw | Estimator::Moderation)
    }

    /// Runs on data without rescue.
    pub fn is_correlational(self) -> bool {
        matches!(self, Estimator::ConditionalMean | Estimator::Elbow | Estimator::CutoffScan)
    }
}

fn default_delta() -> f64 {
    0.02
}
fn default_weight() -> f64 {
    1.0
}
fn default_bootstrap() -> usize {
    1000
}
fn default_alpha() -> f64 {
    0.05
}
fn default_target() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisBlock {
    /// Estimators to run. Empty means `contrasts` for designs that randomize
    /// at least one factor.
    #[serde(default)]
    pub estimators: Vec<Estimator>,
    #[serde(default)]
    pub factors: Option<Vec<Factor>>,
    #[serde(default)]
    pub scale: OutcomeScale,
    #[serde(default)]
    pub correction: Correction,
    #[serde(default)]
    pub primary_contrast: Option<[String; 2]>,
    /// Regimes for `ipw`.
    #[serde(default)]
    pub regimes: Vec<AdaptiveIntervention>,
    /// Variable, aggregation, direction and cutoff used by the
    /// correlational estimators and the positivity check.
    #[serde(default)]
    pub condition: Option<AtomicCondition>,
    /// Decision week for `conditional_mean`, `cutoff_scan` and `positivity`.
    #[serde(default)]
    pub week: Option<Week>,
    /// Candidate decision weeks for `elbow`.
    #[serde(default)]
    pub times: Vec<Week>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Failure threshold for `elbow`; defaults to the recorded `Y_bin`.
    #[serde(default)]
    pub success_threshold: Option<f64>,
    /// Cutoff grid for `cutoff_scan` and `positivity`.
    #[serde(default)]
    pub cutoffs: Vec<f64>,
    #[serde(default = "default_weight")]
    pub w_fp: f64,
    #[serde(default = "default_weight")]
    pub w_fn: f64,
    /// Cost per rescue applied before analysis (`Y_adj = Y - kappa A`).
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Candidate moderators for `moderation`.
    #[serde(default)]
    pub candidates: Vec<Feature>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// A stratum fails positivity when at most this many records are on one
    /// side of the rescue indicator.
    #[serde(default)]
    pub positivity_min_count: usize,
    /// Divide IPW sums by the sample size instead of the total weight.
    #[serde(default)]
    pub unnormalized_ipw: bool,
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    pub replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Population sizes for the power curve; defaults to the scenario's.
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_target")]
    pub target_power: f64,
    #[serde(default)]
    pub reference_population: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub scenario: ScenarioParams,
    pub design: DesignSpec,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub mc: Option<McBlock>,
}

/// Analysis-only document for re-analysing an existing dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub analysis: AnalysisBlock,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg: RunConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks each block and that they refer to the same variables, rescue
    /// options and weeks.
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.design.validate(&self.scenario)?;
        self.analysis.validate(Some(&self.scenario))?;
        let a = &self.analysis;
        let design_factors = self.design.factors();
        if let Some(factors) = &a.factors {
            for f in factors {
                if !design_factors.contains(f) {
                    return Err(Error::config(
                        "analysis.factors",
                        format!("the design does not randomize `{}`", f.name()),
                    ));
                }
            }
        }
        if a.estimators.contains(&Estimator::Quadratic)
            && !matches!(self.design.scheme, Scheme::DecisionTimeTrial { .. })
        {
            return Err(Error::config(
                "analysis.estimators",
                "quadratic needs a decision_time_trial design",
            ));
        }
        if a.estimators.iter().any(|e| e.is_correlational()) && !matches!(self.design.scheme, Scheme::InitialOnly) {
            return Err(Error::config(
                "analysis.estimators",
                "correlational estimators need an initial_only design, where nobody is rescued",
            ));
        }
        if let Some(mc) = &self.mc {
            mc.validate()?;
        }
        Ok(())
    }

    /// Estimators to run, filling in the default.
    pub fn estimators(&self) -> Vec<Estimator> {
        if self.analysis.estimators.is_empty() && !self.design.factors().is_empty() {
            vec![Estimator::Contrasts]
        } else {
            self.analysis.estimators.clone()
        }
    }

    /// Monte Carlo plan at the scenario's population size.
    pub fn mc_plan(&self, seed: u64) -> Result<McPlan> {
        let mc = self
            .mc
            .as_ref()
            .ok_or_else(|| Error::config("mc", "the power command needs an `mc` block"))?;
        let a = &self.analysis;
        let estimators = self.estimators();
        let mut scenario = self.scenario.clone();
        if let Some(k) = a.kappa {
            scenario.cost_per_rescue = k;
        }
        Ok(McPlan {
            scenario,
            design: self.design.clone(),
            analysis: McAnalysis {
                factors: a.factors.clone(),
                scale: a.scale,
                correction: a.correction,
                primary_contrast: a.primary_contrast.clone(),
                regimes: if estimators.contains(&Estimator::Ipw) {
                    a.regimes.clone()
                } else {
                    Vec::new()
                },
                quadratic: estimators.contains(&Estimator::Quadratic),
            },
            replicates: mc.replicates,
            alpha: mc.alpha,
            seed,
            reference_population: mc.reference_population,
        })
    }
}

impl McBlock {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 1 {
            return Err(Error::config("mc.replicates", "at least one replicate is required"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("mc.alpha", "alpha must lie in (0, 1)"));
        }
        if !(self.target_power > 0.0 && self.target_power < 1.0) {
            return Err(Error::config("mc.target_power", "target power must lie in (0, 1)"));
        }
        if self.n_grid.contains(&0) || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("mc.n_grid", "sizes must be positive and strictly increasing"));
        }
        Ok(())
    }
}

impl AnalysisBlock {
    /// Checks the block on its own, and against `scenario` when the data
    /// come from a known simulation.
    pub fn validate(&self, scenario: Option<&ScenarioParams>) -> Result<()> {
        let has = |e: Estimator| self.estimators.contains(&e);
        let need = |cond: bool, field: &str, e: Estimator| {
            if cond {
                Ok(())
            } else {
                Err(Error::config(format!("analysis.{field}"), format!("required by `{}`", e.name())))
            }
        };
        for e in [Estimator::ConditionalMean, Estimator::CutoffScan, Estimator::Positivity, Estimator::Elbow] {
            if has(e) {
                need(self.condition.is_some(), "condition", e)?;
            }
        }
        for e in [Estimator::ConditionalMean, Estimator::CutoffScan, Estimator::Positivity] {
            if has(e) {
                need(self.week.is_some(), "week", e)?;
            }
        }
        for e in [Estimator::CutoffScan, Estimator::Positivity] {
            if has(e) {
                need(!self.cutoffs.is_empty(), "cutoffs", e)?;
            }
        }
        if has(Estimator::Elbow) {
            need(!self.times.is_empty(), "times", Estimator::Elbow)?;
        }
        if has(Estimator::Ipw) {
            need(!self.regimes.is_empty(), "regimes", Estimator::Ipw)?;
        }
        if has(Estimator::Moderation) {
            need(!self.candidates.is_empty(), "candidates", Estimator::Moderation)?;
        }
        if let Some(c) = &self.condition {
            c.validate().map_err(|e| Error::config("analysis.condition", e.to_string()))?;
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config("analysis.delta", "delta must be finite and >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("analysis.alpha", "alpha must lie in (0, 1)"));
        }
        if let Some(k) = self.kappa {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::config("analysis.kappa", "kappa must be finite and >= 0"));
            }
        }
        for (name, w) in [("w_fp", self.w_fp), ("w_fn", self.w_fn)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("analysis.{name}"), "weights must be finite and >= 0"));
            }
        }
        if self.cutoffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("analysis.cutoffs", "cutoffs must be finite"));
        }
        let Some(s) = scenario else { return Ok(()) };
        let week_ok = |w: Week| w >= 1 && w <= s.horizon;
        if let Some(w) = self.week {
            if !week_ok(w) {
                return Err(Error::config("analysis.week", format!("week {w} outside 1..={}", s.horizon)));
            }
        }
        if let Some(t) = self.times.iter().find(|&&t| !week_ok(t)) {
            return Err(Error::config("analysis.times", format!("week {t} outside 1..={}", s.horizon)));
        }
        let variables = self
            .condition
            .iter()
            .map(|c| (&c.variable, "analysis.condition.variable"))
            .chain(self.candidates.iter().map(|f| (&f.variable, "analysis.candidates")));
        for (v, field) in variables {
            if !s.has_variable(v) {
                return Err(Error::config(field, format!("unknown variable id `{v}`")));
            }
        }
        for (i, adi) in self.regimes.iter().enumerate() {
            check_regime(s, adi).map_err(|e| Error::config(format!("analysis.regimes[{i}]"), e.to_string()))?;
        }
        Ok(())
    }
}

impl AnalyzeConfig {
    /// Reads either an analysis document or a full run configuration, whose
    /// `analysis` block is then used.
    pub fn from_path(path: &Path) -> Result<Self> {
        let value: serde_json::Value = read_json(path)?;
        let cfg = if value.get("scenario").is_some() {
            let run: RunConfig = serde_json::from_value(value)?;
            run.validate()?;
            AnalyzeConfig {
                seed: run.seed,
                output_dir: run.output_dir,
                analysis: run.analysis,
            }
        } else {
            serde_json::from_value(value)?
        };
        cfg.analysis.validate(None)?;
        Ok(cfg)
    }
}

/// Seed precedence: command line, configuration, environment, fallback.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, fallback: u64) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::config(SEED_ENV, format!("`{v}` is not an unsigned integer"))),
        Err(_) => Ok(fallback),
    }
}
