//! The `simulate`, `analyze` and `power` commands.
//!
//! Each command returns a process exit code: 0 on success, 1 when an
//! estimator or the positivity gate fails on the data, 2 when the
//! configuration or dataset is malformed.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    arm_contrasts, conditional_mean_below_cutoff, cost_adjust, cutoff_scan_cost, elbow_scan, fit_quadratic_time,
    ipw_regime_value, moderation_scan, positivity_check, ConditionalMean, ContrastOptions, ContrastTable, CutoffScan,
    ElbowCurve, ElbowOptions, IpwEstimate, IpwOptions, ModerationReport, PositivityReport, QuadraticFit,
    QuadraticOptions,
};
use crate::config::{AnalysisBlock, AnalyzeConfig, Estimator, RunConfig};
use crate::datagen::{gen_population, ScenarioParams};
use crate::dataset::{read_dataset, write_dataset};
use crate::designs::{design_seed, run_design};
use crate::error::{Error, Result};
use crate::model::{TrialRecord, Week};
use crate::montecarlo::{default_factors, power_search, PowerSearch};
use crate::rng::{derive_seed, Domain};

pub const DEFAULT_OUTPUT_DIR: &str = "tailorlab-out";

/// Flags shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Worker threads; changes speed only.
    pub threads: Option<usize>,
}

/// An error together with the stage that raised it.
#[derive(Debug)]
pub struct Failure {
    pub stage: String,
    pub error: Error,
}

impl Failure {
    fn at(stage: impl Into<String>) -> impl FnOnce(Error) -> Failure {
        let stage = stage.into();
        move |error| Failure { stage, error }
    }

    pub fn exit_code(&self) -> i32 {
        if self.error.is_configuration() {
            2
        } else {
            1
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Outcome<T> + Send) -> Outcome<T> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::at("threads")(Error::config("threads", e.to_string())))?;
            pool.install(f)
        }
        None => f(),
    }
}

fn report_exit<T>(result: Outcome<T>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(f) => {
            eprintln!("error in {f}");
            f.exit_code()
        }
    }
}

fn output_dir(flag: Option<&Path>, config: Option<&Path>) -> Outcome<PathBuf> {
    let dir = flag
        .or(config)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::at("output")(e.into()))?;
    Ok(dir)
}

fn cell(v: f64) -> String {
    v.to_string()
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(cell).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Everything an analysis run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub command: String,
    pub seed: u64,
    pub records: usize,
    pub estimators: Vec<Estimator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positivity_gate: Option<Vec<PositivityReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrasts: Option<ContrastTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ipw: Option<Vec<IpwEstimate>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadratic: Option<QuadraticFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moderation: Option<Vec<ModerationReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positivity: Option<PositivityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditional_mean: Option<ConditionalMean>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub elbow: Option<ElbowCurve>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff_scan: Option<CutoffScan>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Positivity checks that must pass before the causal estimators run: each
/// regime's conditions at its decision week, each moderation candidate split
/// at its median, and the configured condition and grid if given.
pub fn positivity_gate(
    records: &[TrialRecord],
    a: &AnalysisBlock,
    estimators: &[Estimator],
) -> Result<Vec<PositivityReport>> {
    let m = a.positivity_min_count;
    let mut reports = Vec::new();
    if estimators.contains(&Estimator::Ipw) {
        for adi in &a.regimes {
            for atom in adi.rule.condition.atoms() {
                reports.push(positivity_check(
                    records,
                    &atom.feature(),
                    adi.rule.decision_week,
                    &[atom.cutoff],
                    m,
                )?);
            }
        }
    }
    if estimators.contains(&Estimator::Moderation) {
        let week: Week = records
            .first()
            .and_then(|r| r.path.steps.first().map(|s| s.week))
            .or(a.week)
            .ok_or_else(|| Error::config("analysis.week", "needed to check positivity for moderation"))?;
        for f in &a.candidates {
            let values = records
                .iter()
                .map(|r| f.value(&r.trajectory, week))
                .collect::<Result<Vec<f64>>>()?;
            if values.is_empty() {
                return Err(Error::EmptySet("no records".into()));
            }
            reports.push(positivity_check(records, f, week, &[median(values)], m)?);
        }
    }
    if let (Some(c), Some(w)) = (&a.condition, a.week) {
        if !a.cutoffs.is_empty() {
            reports.push(positivity_check(records, &c.feature(), w, &a.cutoffs, m)?);
        }
    }
    Ok(reports)
}

/// Runs `estimators` on `records`, writing CSV tables and `report.json` into
/// `out`.
pub fn run_analysis(
    command: &str,
    records: &[TrialRecord],
    a: &AnalysisBlock,
    estimators: &[Estimator],
    factors: Option<Vec<crate::model::Factor>>,
    seed: u64,
    out: &Path,
) -> Outcome<AnalysisReport> {
    let adjusted;
    let records = match a.kappa {
        Some(k) => {
            adjusted = cost_adjust(records, k);
            &adjusted[..]
        }
        None => records,
    };
    let boot_seed = derive_seed(seed, Domain::Bootstrap, 0);
    let mut report = AnalysisReport {
        command: command.to_string(),
        seed,
        records: records.len(),
        estimators: estimators.to_vec(),
        kappa: a.kappa,
        positivity_gate: None,
        contrasts: None,
        ipw: None,
        quadratic: None,
        moderation: None,
        positivity: None,
        conditional_mean: None,
        elbow: None,
        cutoff_scan: None,
    };
    let io = |stage: &str| {
        let stage = stage.to_string();
        move |e: Error| Failure { stage, error: e }
    };

    if estimators.iter().any(|e| e.is_causal()) {
        let gate = positivity_gate(records, a, estimators).map_err(Failure::at("positivity"))?;
        let failures: Vec<String> = gate.iter().flat_map(|r| r.failures.clone()).collect();
        write_positivity(&out.join("positivity_gate.csv"), &gate).map_err(io("positivity"))?;
        report.positivity_gate = Some(gate);
        if !failures.is_empty() {
            write_json(&out.join("report.json"), &report).map_err(io("report"))?;
            return Err(Failure {
                stage: "positivity".into(),
                error: Error::Positivity(format!(
                    "causal estimation refused; failing strata: {}",
                    failures.join("; ")
                )),
            });
        }
    }

    for &e in estimators {
        let stage = e.name();
        match e {
            Estimator::Contrasts => {
                let factors = factors
                    .clone()
                    .or_else(|| a.factors.clone())
                    .ok_or_else(|| Failure::at(stage)(Error::config("analysis.factors", "grouping factors are required")))?;
                let options = ContrastOptions {
                    scale: a.scale,
                    correction: a.correction,
                    expected_groups: Vec::new(),
                };
                let t = arm_contrasts(records, &factors, &options).map_err(Failure::at(stage))?;
                let groups: Vec<Vec<String>> = t
                    .groups
                    .iter()
                    .map(|g| {
                        vec![
                            g.label.clone(),
                            g.n.to_string(),
                            cell(g.mean),
                            cell(g.standard_error),
                            g.nonresponders.to_string(),
                            opt_cell(g.nonresponder_mean),
                            opt_cell(g.responder_mean),
                        ]
                    })
                    .collect();
                write_csv(
                    &out.join("contrast_groups.csv"),
                    &["group", "n", "mean", "standard_error", "nonresponders", "nonresponder_mean", "responder_mean"],
                    &groups,
                )
                .map_err(io(stage))?;
                let pairs: Vec<Vec<String>> = t
                    .contrasts
                    .iter()
                    .map(|c| {
                        vec![
                            c.first.clone(),
                            c.second.clone(),
                            cell(c.difference),
                            cell(c.standard_error),
                            cell(c.df),
                            cell(c.p_value),
                            cell(c.p_adjusted),
                        ]
                    })
                    .collect();
                write_csv(
                    &out.join("contrasts.csv"),
                    &["first", "second", "difference", "standard_error", "df", "p_value", "p_adjusted"],
                    &pairs,
                )
                .map_err(io(stage))?;
                report.contrasts = Some(t);
            }
            Estimator::Ipw => {
                let options = IpwOptions {
                    scale: a.scale,
                    normalized: !a.unnormalized_ipw,
                    bootstrap: a.bootstrap,
                    seed: boot_seed,
                };
                let estimates = a
                    .regimes
                    .iter()
                    .map(|adi| ipw_regime_value(records, adi, &options))
                    .collect::<Result<Vec<_>>>()
                    .map_err(Failure::at(stage))?;
                let rows: Vec<Vec<String>> = estimates
                    .iter()
                    .map(|e| {
                        vec![
                            e.regime.clone(),
                            cell(e.estimate),
                            opt_cell(e.standard_error),
                            opt_cell(e.interval.map(|i| i.0)),
                            opt_cell(e.interval.map(|i| i.1)),
                            e.n_consistent.to_string(),
                            cell(e.total_weight),
                        ]
                    })
                    .collect();
                write_csv(
                    &out.join("ipw.csv"),
                    &["regime", "estimate", "standard_error", "lower", "upper", "n_consistent", "total_weight"],
                    &rows,
                )
                .map_err(io(stage))?;
                report.ipw = Some(estimates);
            }
            Estimator::Quadratic => {
                let options = QuadraticOptions {
                    scale: a.scale,
                    bootstrap: a.bootstrap,
                    seed: boot_seed,
                };
                let fit = fit_quadratic_time(records, &options).map_err(Failure::at(stage))?;
                let arms: Vec<Vec<String>> = fit
                    .arm_means
                    .iter()
                    .map(|m| vec![m.time.to_string(), m.n.to_string(), cell(m.mean)])
                    .collect();
                write_csv(&out.join("quadratic_arms.csv"), &["time", "n", "mean"], &arms).map_err(io(stage))?;
                let mut curve = Vec::new();
                if let (Some(first), Some(last)) = (fit.arm_means.first(), fit.arm_means.last()) {
                    for k in (first.time * 10)..=(last.time * 10) {
                        let x = f64::from(k) / 10.0;
                        if let Some(y) = fit.predict(x) {
                            curve.push(vec![cell(x), cell(y), String::new(), String::new()]);
                        }
                    }
                }
                write_csv(&out.join("quadratic_curve.csv"), &["x", "y", "lower", "upper"], &curve).map_err(io(stage))?;
                report.quadratic = Some(fit);
            }
            Estimator::Moderation => {
                let reps = moderation_scan(records, &a.candidates, a.scale, a.alpha).map_err(Failure::at(stage))?;
                let rows: Vec<Vec<String>> = reps
                    .iter()
                    .map(|r| {
                        vec![
                            r.feature.clone(),
                            r.week.to_string(),
                            cell(r.interaction),
                            cell(r.standard_error),
                            cell(r.t),
                            cell(r.p_value),
                            cell(r.effect_at_min),
                            cell(r.effect_at_max),
                            cell(r.o_min),
                            cell(r.o_max),
                            r.qualitative.to_string(),
                            r.flagged.to_string(),
                        ]
                    })
                    .collect();
                write_csv(
                    &out.join("moderation.csv"),
                    &[
                        "feature",
                        "week",
                        "interaction",
                        "standard_error",
                        "t",
                        "p_value",
                        "effect_at_min",
                        "effect_at_max",
                        "o_min",
                        "o_max",
                        "qualitative",
                        "flagged",
                    ],
                    &rows,
                )
                .map_err(io(stage))?;
                report.moderation = Some(reps);
            }
            Estimator::Positivity => {
                let c = a.condition.as_ref().expect("validated");
                let rep = positivity_check(records, &c.feature(), a.week.expect("validated"), &a.cutoffs, a.positivity_min_count)
                    .map_err(Failure::at(stage))?;
                write_positivity(&out.join("positivity.csv"), std::slice::from_ref(&rep)).map_err(io(stage))?;
                report.positivity = Some(rep);
            }
            Estimator::ConditionalMean => {
                let c = a.condition.as_ref().expect("validated");
                let m = conditional_mean_below_cutoff(records, c, a.week.expect("validated")).map_err(Failure::at(stage))?;
                write_csv(
                    &out.join("conditional_mean.csv"),
                    &["variable", "cutoff", "week", "n", "mean"],
                    &[vec![
                        m.variable.clone(),
                        cell(m.cutoff),
                        m.week.to_string(),
                        m.n.to_string(),
                        cell(m.mean),
                    ]],
                )
                .map_err(io(stage))?;
                report.conditional_mean = Some(m);
            }
            Estimator::Elbow => {
                let c = a.condition.as_ref().expect("validated");
                let options = ElbowOptions {
                    delta: a.delta,
                    success_threshold: a.success_threshold,
                    bootstrap: a.bootstrap,
                    seed: boot_seed,
                };
                let curve = elbow_scan(records, &c.feature(), c.direction, &a.times, &options).map_err(Failure::at(stage))?;
                let rows: Vec<Vec<String>> = curve
                    .times
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        vec![
                            t.to_string(),
                            cell(curve.auc[k]),
                            opt_cell(curve.lower.as_ref().map(|l| l[k])),
                            opt_cell(curve.upper.as_ref().map(|u| u[k])),
                        ]
                    })
                    .collect();
                write_csv(&out.join("elbow_curve.csv"), &["x", "y", "lower", "upper"], &rows).map_err(io(stage))?;
                report.elbow = Some(curve);
            }
            Estimator::CutoffScan => {
                let c = a.condition.as_ref().expect("validated");
                let scan = cutoff_scan_cost(records, c, a.week.expect("validated"), &a.cutoffs, a.w_fp, a.w_fn)
                    .map_err(Failure::at(stage))?;
                let rows: Vec<Vec<String>> = scan
                    .rows
                    .iter()
                    .map(|r| {
                        vec![
                            cell(r.cutoff),
                            r.nonresponders.to_string(),
                            r.true_positives.to_string(),
                            r.false_positives.to_string(),
                            r.true_negatives.to_string(),
                            r.false_negatives.to_string(),
                            cell(r.sensitivity),
                            cell(r.specificity),
                            cell(r.cost),
                        ]
                    })
                    .collect();
                write_csv(
                    &out.join("cutoff_scan.csv"),
                    &[
                        "cutoff",
                        "nonresponders",
                        "true_positives",
                        "false_positives",
                        "true_negatives",
                        "false_negatives",
                        "sensitivity",
                        "specificity",
                        "cost",
                    ],
                    &rows,
                )
                .map_err(io(stage))?;
                report.cutoff_scan = Some(scan);
            }
        }
    }
    write_json(&out.join("report.json"), &report).map_err(io("report"))?;
    Ok(report)
}

fn write_positivity(path: &Path, reports: &[PositivityReport]) -> Result<()> {
    let mut rows = Vec::new();
    for r in reports {
        for row in &r.rows {
            for (name, s) in [("below", &row.below), ("at_or_above", &row.at_or_above)] {
                rows.push(vec![
                    r.feature.clone(),
                    r.week.to_string(),
                    cell(row.cutoff),
                    name.to_string(),
                    s.n.to_string(),
                    s.rescued.to_string(),
                    opt_cell(s.propensity),
                ]);
            }
        }
    }
    write_csv(path, &["feature", "week", "cutoff", "stratum", "n", "rescued", "propensity"], &rows)
}

/// Generates a population, runs the design, writes `dataset.csv` and
/// analyses it. Returns the output directory.
pub fn simulate(opts: &RunOptions) -> Outcome<PathBuf> {
    let cfg = RunConfig::from_path(&opts.config).map_err(Failure::at("config"))?;
    let seed = crate::config::resolve_seed(opts.seed, cfg.seed, cfg.scenario.seed).map_err(Failure::at("config"))?;
    let out = output_dir(opts.out.as_deref(), cfg.output_dir.as_deref())?;
    with_threads(opts.threads, || {
        let params = ScenarioParams {
            seed,
            ..cfg.scenario.clone()
        };
        let table = gen_population(&params).map_err(Failure::at("datagen"))?;
        let records = run_design(&table, &cfg.design, design_seed(seed)).map_err(Failure::at("design"))?;
        write_dataset(&out.join("dataset.csv"), &records).map_err(Failure::at("dataset"))?;
        run_analysis(
            "simulate",
            &records,
            &cfg.analysis,
            &cfg.estimators(),
            Some(cfg.analysis.factors.clone().unwrap_or_else(|| default_factors(&cfg.design))),
            seed,
            &out,
        )
    })?;
    Ok(out)
}

pub fn cmd_simulate(opts: &RunOptions) -> i32 {
    report_exit(simulate(opts))
}

/// Analyses an existing dataset with the `analysis` block of `opts.config`.
pub fn analyze(dataset: &Path, opts: &RunOptions) -> Outcome<PathBuf> {
    let cfg = AnalyzeConfig::from_path(&opts.config).map_err(Failure::at("config"))?;
    let seed = crate::config::resolve_seed(opts.seed, cfg.seed, 0).map_err(Failure::at("config"))?;
    let records = read_dataset(dataset)
        .map_err(|e| match e {
            Error::Io(e) => Error::config("dataset", format!("cannot read {}: {e}", dataset.display())),
            e => e,
        })
        .map_err(Failure::at("dataset"))?;
    let out = output_dir(opts.out.as_deref(), cfg.output_dir.as_deref())?;
    with_threads(opts.threads, || {
        run_analysis("analyze", &records, &cfg.analysis, &cfg.analysis.estimators, None, seed, &out)
    })?;
    Ok(out)
}

pub fn cmd_analyze(dataset: &Path, opts: &RunOptions) -> i32 {
    report_exit(analyze(dataset, opts))
}

/// Monte Carlo power curve for the primary contrast.
pub fn power(opts: &RunOptions) -> Outcome<PowerSearch> {
    let cfg = RunConfig::from_path(&opts.config).map_err(Failure::at("config"))?;
    let seed = crate::config::resolve_seed(opts.seed, cfg.seed, cfg.scenario.seed).map_err(Failure::at("config"))?;
    let plan = cfg.mc_plan(seed).map_err(Failure::at("config"))?;
    let mc = cfg.mc.as_ref().expect("checked by mc_plan");
    let grid = if mc.n_grid.is_empty() {
        vec![cfg.scenario.population]
    } else {
        mc.n_grid.clone()
    };
    let out = output_dir(opts.out.as_deref(), cfg.output_dir.as_deref())?;
    let search = with_threads(opts.threads, || {
        power_search(&plan, mc.target_power, &grid).map_err(Failure::at("power"))
    })?;
    let rows: Vec<Vec<String>> = search
        .curve
        .iter()
        .map(|p| vec![p.n.to_string(), cell(p.power), cell(p.mc_se)])
        .collect();
    let io = Failure::at("power");
    write_csv(&out.join("power_curve.csv"), &["N", "power", "mc_se"], &rows)
        .and_then(|_| {
            let mut rows = Vec::new();
            for (pt, rep) in search.curve.iter().zip(&search.reports) {
                for c in &rep.contrasts {
                    rows.push(vec![
                        pt.n.to_string(),
                        c.first.clone(),
                        c.second.clone(),
                        c.replicates.to_string(),
                        cell(c.rejection_rate),
                        cell(c.mc_se),
                        cell(c.mean_estimate),
                        cell(c.mean_truth),
                        cell(c.bias),
                        opt_cell(c.bias_mc_se),
                    ]);
                }
            }
            write_csv(
                &out.join("mc_contrasts.csv"),
                &[
                    "N",
                    "first",
                    "second",
                    "replicates",
                    "rejection_rate",
                    "mc_se",
                    "mean_estimate",
                    "mean_truth",
                    "bias",
                    "bias_mc_se",
                ],
                &rows,
            )
        })
        .and_then(|_| write_json(&out.join("mc_report.json"), &search))
        .map_err(io)?;
    Ok(search)
}

pub fn cmd_power(opts: &RunOptions) -> i32 {
    report_exit(power(opts))
}
