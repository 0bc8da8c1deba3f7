//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tempfile::TempDir;

use tailorlab::analysis::{
    arm_contrasts, fit_quadratic_time, ipw_regime_value, labels_key, moderation_scan, positivity_check,
    roc_auc, ContrastOptions, IpwOptions, QuadraticOptions,
};
use tailorlab::cli::{self, RunOptions};
use tailorlab::datagen::{gen_population, regime_truth, OutcomeScale, ScenarioParams, VariableParams};
use tailorlab::dataset::write_dataset;
use tailorlab::designs::{
    design_seed, run_design, satisfies_rule_constraint, sequential_alloc_probs, CrossVariable, DesignSpec, LabeledRule,
    Scheme, TimeAllocation,
};
use tailorlab::model::{
    AdaptiveIntervention, Aggregation, AtomicCondition, Factor, Feature, TailoringRule, TrialRecord, VariableId, Week,
};
use tailorlab::montecarlo::{run_replicates, McAnalysis, McPlan};
use tailorlab::rng::{derive_seed, Domain};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn illustrative(n: usize, seed: u64) -> ScenarioParams {
    let mut p = ScenarioParams::illustrative();
    p.population = n;
    p.seed = seed;
    p
}

fn adi(initial: &str, week: Week, condition: AtomicCondition, rescue: &str) -> AdaptiveIntervention {
    let mut a = AdaptiveIntervention::new(TailoringRule::new(week, condition), rescue);
    a.initial = initial.into();
    a
}

fn app_below(c: f64) -> AtomicCondition {
    AtomicCondition::below("app", c).unwrap()
}

fn time_shares(records: &[TrialRecord], times: &[Week]) -> Vec<f64> {
    times
        .iter()
        .map(|t| {
            let label = t.to_string();
            records.iter().filter(|r| r.arms.time.as_deref() == Some(label.as_str())).count() as f64
                / records.len() as f64
        })
        .collect()
}

fn within(xs: &[f64], target: &[f64], tol: f64) -> bool {
    xs.iter().zip(target).all(|(x, t)| (x - t).abs() <= tol)
}

fn sequential_allocation() -> Check {
    let start = Instant::now();
    let table = gen_population(&illustrative(10_000, 101)).map_err(err)?;
    let times = [2, 4, 6, 8];
    let scheme = Scheme::DecisionTimeTrial {
        condition: app_below(1.0).into(),
        times: times.to_vec(),
        allocation: TimeAllocation::Sequential {
            stage_probabilities: vec![0.5, 0.5, 0.5],
        },
        rescue: "coach".into(),
    };
    let records = run_design(&table, &scheme.into(), design_seed(101)).map_err(err)?;
    let elapsed = start.elapsed();
    let shares = time_shares(&records, &times);
    let target = [0.5, 0.25, 0.125, 0.125];
    ensure(
        within(&shares, &target, 0.02) && elapsed < Duration::from_secs(5),
        format!("shares {shares:.3?} vs {target:?} (tol 0.02), {:.2}s (limit 5s)", elapsed.as_secs_f64()),
    )
}

fn uniform_target_allocation() -> Check {
    let probs = sequential_alloc_probs(&[0.25; 4]).map_err(err)?;
    let expected = [1.0 / 4.0, 1.0 / 3.0, 1.0 / 2.0, 1.0];
    let exact = probs.len() == 4 && probs.iter().zip(&expected).all(|(a, b)| (a - b).abs() <= 1e-15);
    let table = gen_population(&illustrative(10_000, 102)).map_err(err)?;
    let times = [2, 4, 6, 8];
    let scheme = Scheme::DecisionTimeTrial {
        condition: app_below(1.0).into(),
        times: times.to_vec(),
        allocation: TimeAllocation::Sequential {
            stage_probabilities: probs.clone(),
        },
        rescue: "coach".into(),
    };
    let records = run_design(&table, &scheme.into(), design_seed(102)).map_err(err)?;
    let shares = time_shares(&records, &times);
    ensure(
        exact && within(&shares, &[0.25; 4], 0.02),
        format!("stage probabilities {probs:?}, shares {shares:.3?} (tol 0.02)"),
    )
}

fn rule_designs() -> Vec<(&'static str, DesignSpec)> {
    let cond = app_below(1.0);
    let cannabis = AtomicCondition::above("cannabis", 2.5).unwrap();
    vec![
        (
            "cutoff_trial",
            Scheme::CutoffTrial {
                condition: cond.clone(),
                cutoffs: vec![0.75, 1.0, 1.5],
                decision_week: 4,
                rescue: "coach".into(),
                allocation: None,
            }
            .into(),
        ),
        (
            "decision_time_upfront",
            Scheme::DecisionTimeTrial {
                condition: cond.clone().into(),
                times: vec![2, 4, 6, 8],
                allocation: TimeAllocation::Upfront { probabilities: None },
                rescue: "coach".into(),
            }
            .into(),
        ),
        (
            "decision_time_sequential",
            Scheme::DecisionTimeTrial {
                condition: cond.clone().into(),
                times: vec![2, 4, 6, 8],
                allocation: TimeAllocation::SequentialTarget { target: vec![0.25; 4] },
                rescue: "coach".into(),
            }
            .into(),
        ),
        (
            "factorial_cutoff_time",
            Scheme::FactorialCutoffTime {
                condition: cond.clone(),
                cutoffs: vec![1.0, 1.5],
                times: vec![2, 6],
                rescue: "coach".into(),
            }
            .into(),
        ),
        (
            "hybrid_factorial_smart",
            Scheme::HybridFactorialSmart {
                condition: cond.clone(),
                cutoffs: vec![1.0, 1.5],
                times: vec![2, 6],
                rescue_options: vec!["coach".into(), "intense".into()],
                rescue_probabilities: None,
            }
            .into(),
        ),
        (
            "variable_trial",
            Scheme::VariableTrial {
                arms: vec![
                    LabeledRule {
                        label: "app".into(),
                        rule: TailoringRule::new(4, cond.clone()),
                    },
                    LabeledRule {
                        label: "cannabis".into(),
                        rule: TailoringRule::new(4, cannabis.clone()),
                    },
                ],
                rescue: "coach".into(),
            }
            .into(),
        ),
        (
            "full_cross",
            DesignSpec {
                scheme: Scheme::FullCross {
                    variables: vec![
                        CrossVariable {
                            label: "app".into(),
                            levels: vec![cond.clone().into(), app_below(1.5).into()],
                        },
                        CrossVariable {
                            label: "cannabis".into(),
                            levels: vec![cannabis.clone().into(), cannabis.with_cutoff(2.0).into()],
                        },
                    ],
                    cutoff_labels: vec!["strict".into(), "lenient".into()],
                    times: vec![2, 4, 6],
                    rescue: "coach".into(),
                },
                block_size: Some(12),
            },
        ),
    ]
}

fn rule_constraint() -> Check {
    let mut total = 0usize;
    let mut violations = Vec::new();
    for (name, spec) in rule_designs() {
        let arms = spec.arms().map_err(err)?.ok_or(format!("{name} has no rule arms"))?;
        for s in 0..20u64 {
            let table = gen_population(&illustrative(500, 1000 + s)).map_err(err)?;
            let records = run_design(&table, &spec, design_seed(1000 + s)).map_err(err)?;
            for r in &records {
                total += 1;
                if !satisfies_rule_constraint(r, &arms).map_err(err)? {
                    violations.push(format!("{name} seed {s} participant {}", r.participant_id));
                }
            }
        }
    }
    ensure(
        violations.is_empty(),
        format!(
            "{} of {total} records across 7 designs x 20 seeds violate A = 1{{nonresponder}}{}",
            violations.len(),
            violations.first().map(|v| format!(", first: {v}")).unwrap_or_default()
        ),
    )
}

/// Mean and Monte Carlo SE of per-replicate errors.
fn bias(errors: &[f64]) -> (f64, f64) {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn arm_bias(name: &str, spec: &DesignSpec, replicates: u64, master: u64) -> Result<Vec<String>, String> {
    let arms = spec.arms().map_err(err)?.ok_or("no rule arms")?;
    let factors = spec.factors();
    let per_rep: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(master, Domain::Replicate, r);
            let params = illustrative(200, derive_seed(seed, Domain::Population, 0));
            let table = gen_population(&params).map_err(err)?;
            let records = run_design(&table, spec, design_seed(seed)).map_err(err)?;
            let t = arm_contrasts(&records, &factors, &ContrastOptions::default()).map_err(err)?;
            arms.iter()
                .map(|arm| {
                    let label = labels_key(&arm.labels, &factors).ok_or("arm without label")?;
                    let g = t.group(&label).ok_or(format!("empty arm {label}"))?;
                    let regime = AdaptiveIntervention {
                        initial: params.initial_treatment.clone(),
                        rule: arm.rule.clone(),
                        rescue: arm.options[0].0.clone(),
                    };
                    Ok(g.mean - regime_truth(&table, &regime, OutcomeScale::Raw).map_err(err)?)
                })
                .collect::<Result<Vec<f64>, String>>()
        })
        .collect::<Result<_, String>>()?;
    let mut lines = Vec::new();
    for (k, arm) in arms.iter().enumerate() {
        let errors: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
        let (b, se) = bias(&errors);
        let label = labels_key(&arm.labels, &factors).unwrap_or_default();
        let line = format!("{name} {label}: bias {b:+.4} (MC SE {se:.4})");
        if b.abs() > 3.0 * se {
            return Err(line);
        }
        lines.push(line);
    }
    Ok(lines)
}

fn estimator_oracle() -> Check {
    const R: u64 = 500;
    let start = Instant::now();
    let mut lines = Vec::new();
    let designs = rule_designs();
    for name in ["cutoff_trial", "decision_time_upfront"] {
        let spec = &designs.iter().find(|d| d.0 == name).unwrap().1;
        lines.extend(arm_bias(name, spec, R, 400)?);
    }

    let scheme: DesignSpec = Scheme::UnrestrictedSmart {
        times: vec![2, 4, 6, 8],
        rescue_probabilities: vec![0.3; 4],
        rescue: "coach".into(),
    }
    .into();
    let regimes = [
        adi("app", 2, app_below(1.0), "coach"),
        adi("app", 4, app_below(1.0), "coach"),
        adi("app", 4, app_below(1.5), "coach"),
        adi("app", 6, app_below(1.0), "coach"),
    ];
    let options = IpwOptions {
        bootstrap: 0,
        ..Default::default()
    };
    let per_rep: Vec<Vec<f64>> = (0..R)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(401, Domain::Replicate, r);
            let table = gen_population(&illustrative(200, derive_seed(seed, Domain::Population, 0))).map_err(err)?;
            let records = run_design(&table, &scheme, design_seed(seed)).map_err(err)?;
            regimes
                .iter()
                .map(|a| {
                    let est = ipw_regime_value(&records, a, &options).map_err(err)?;
                    Ok(est.estimate - regime_truth(&table, a, OutcomeScale::Raw).map_err(err)?)
                })
                .collect::<Result<Vec<f64>, String>>()
        })
        .collect::<Result<_, String>>()?;
    for (k, a) in regimes.iter().enumerate() {
        let errors: Vec<f64> = per_rep.iter().map(|v| v[k]).collect();
        let (b, se) = bias(&errors);
        let line = format!("ipw {a}: bias {b:+.4} (MC SE {se:.4})");
        if b.abs() > 3.0 * se {
            return Err(line);
        }
        lines.push(line);
    }
    let elapsed = start.elapsed();
    ensure(
        elapsed < Duration::from_secs(60),
        format!(
            "N=200, {R} replicates, all |bias| <= 3 MC SE, {:.1}s (limit 60s); worst: {}",
            elapsed.as_secs_f64(),
            lines.iter().max_by(|a, b| ratio(a).total_cmp(&ratio(b))).cloned().unwrap_or_default()
        ),
    )
}

fn ratio(line: &str) -> f64 {
    let num = |key: &str| -> f64 {
        line.split(key)
            .nth(1)
            .and_then(|s| s.trim_start().split(|c: char| c == ' ' || c == ')').next())
            .and_then(|s| s.parse().ok())
            .unwrap_or(0.0)
    };
    num("bias ").abs() / num("MC SE ").max(f64::MIN_POSITIVE)
}

fn quadratic_recovery() -> Check {
    let table = gen_population(&illustrative(400, 5)).map_err(err)?;
    let run = |times: Vec<Week>| -> Result<Vec<TrialRecord>, String> {
        let scheme = Scheme::DecisionTimeTrial {
            condition: app_below(1.0).into(),
            times,
            allocation: TimeAllocation::Upfront { probabilities: None },
            rescue: "coach".into(),
        };
        run_design(&table, &scheme.into(), design_seed(5)).map_err(err)
    };
    let time_of = |r: &TrialRecord| -> f64 { r.arms.time.as_deref().unwrap().parse().unwrap() };
    let no_boot = QuadraticOptions {
        bootstrap: 0,
        ..Default::default()
    };

    let mut records = run(vec![2, 4, 6, 8])?;
    for r in &mut records {
        let t = time_of(r);
        r.outcome = 5.0 + 1.6 * t - 0.2 * t * t;
    }
    let fit = fit_quadratic_time(&records, &no_boot).map_err(err)?;
    let mut worst = 0.0f64;
    for a in &fit.arm_means {
        let yhat = fit.predict(f64::from(a.time)).ok_or("no coefficients")?;
        worst = worst.max((yhat - a.mean).abs() / a.mean.abs());
    }

    let mut three = run(vec![2, 4, 8])?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for r in &mut three {
        r.outcome += rng.random_range(-1.0..1.0);
    }
    let fit3 = fit_quadratic_time(&three, &no_boot).map_err(err)?;
    let mut worst3 = 0.0f64;
    for a in &fit3.arm_means {
        let yhat = fit3.predict(f64::from(a.time)).ok_or("no coefficients")?;
        worst3 = worst3.max((yhat - a.mean).abs() / a.mean.abs().max(1.0));
    }
    ensure(
        worst < 1e-9 && fit.argmax == 4.0 && worst3 <= 1e-12,
        format!(
            "max relative residual {worst:.1e} (limit 1e-9), t* = {:?} (want exactly 4.0), 3-arm max |fitted - mean| {worst3:.1e} (limit 1e-12)",
            fit.argmax
        ),
    )
}

fn enumerate_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1;
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn auc_oracle() -> Check {
    let fixture = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tested = 0;
    let mut mismatches = 0;
    while tested < 5000 {
        let n = rng.random_range(2..=12);
        // a coarse grid forces ties
        let levels = rng.random_range(1..=6);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels)) * 0.1).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        tested += 1;
        if roc_auc(&scores, &labels).map_err(err)? != enumerate_auc(&scores, &labels) {
            mismatches += 1;
        }
    }
    ensure(
        fixture == 0.75 && mismatches == 0,
        format!("fixture {fixture} (want 0.75), {mismatches} mismatches over {tested} random instances with n <= 12"),
    )
}

fn null_scenario(n: usize) -> ScenarioParams {
    let mut p = illustrative(n, 0);
    for r in &mut p.rescue_options {
        r.main_effect = 0.0;
        r.severity_moderation = 0.0;
    }
    p
}

fn type_one_error() -> Check {
    let start = Instant::now();
    let scheme = Scheme::CutoffTrial {
        condition: app_below(1.0),
        cutoffs: vec![1.0, 1.5],
        decision_week: 4,
        rescue: "coach".into(),
        allocation: None,
    };
    let plan = McPlan::new(null_scenario(500), scheme.into(), McAnalysis::default(), 2000, 7);
    let report = run_replicates(&plan).map_err(err)?;
    let c = report.primary(None).map_err(err)?;
    let elapsed = start.elapsed();
    ensure(
        (c.rejection_rate - 0.05).abs() <= 0.02 && elapsed < Duration::from_secs(120),
        format!(
            "rejection rate {:.4} (MC SE {:.4}) over {} replicates at N=500 (target 0.05 +/- 0.02), {:.1}s (limit 120s)",
            c.rejection_rate,
            c.mc_se,
            c.replicates,
            elapsed.as_secs_f64()
        ),
    )
}

fn moderation_recovery() -> Check {
    const R: u64 = 200;
    let mut base = illustrative(5000, 0);
    for r in &mut base.rescue_options {
        r.main_effect = -0.2;
        r.severity_moderation = 0.8;
    }
    base.variables.push(VariableParams {
        id: VariableId::new("noise").unwrap(),
        baseline: 2.0,
        severity_loading: 0.0,
        ar_coef: 0.6,
        innovation_sd: 0.8,
    });
    let scheme: DesignSpec = Scheme::SinglyRandomizedRescue {
        decision_week: 4,
        rescue_probability: 0.5,
        rescue: "coach".into(),
    }
    .into();
    let candidates = [
        Feature::new("app", Aggregation::MeanRate).unwrap(),
        Feature::new("noise", Aggregation::MeanRate).unwrap(),
    ];
    let outcomes: Vec<(bool, bool)> = (0..R)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(8, Domain::Replicate, r);
            let params = ScenarioParams {
                seed: derive_seed(seed, Domain::Population, 0),
                ..base.clone()
            };
            let table = gen_population(&params).map_err(err)?;
            let records = run_design(&table, &scheme, design_seed(seed)).map_err(err)?;
            let reports = moderation_scan(&records, &candidates, OutcomeScale::Raw, 0.05).map_err(err)?;
            let flagged = |name: &str| reports.iter().any(|m| m.feature == name && m.flagged);
            Ok((flagged("app"), flagged("noise")))
        })
        .collect::<Result<_, String>>()?;
    let signal = outcomes.iter().filter(|o| o.0).count();
    let noise = outcomes.iter().filter(|o| o.1).count();
    let both = outcomes.iter().filter(|o| o.0 && !o.1).count();
    ensure(
        both as f64 >= 0.95 * R as f64,
        format!(
            "app flagged and noise not flagged in {both}/{R} replicates (need >= 95%); app flagged {signal}, noise flagged {noise}"
        ),
    )
}

fn positivity_gate() -> Check {
    let table = gen_population(&illustrative(500, 9)).map_err(err)?;
    let scheme = Scheme::CutoffTrial {
        condition: app_below(1.0),
        cutoffs: vec![1.0],
        decision_week: 4,
        rescue: "coach".into(),
        allocation: None,
    };
    let records = run_design(&table, &scheme.into(), design_seed(9)).map_err(err)?;
    let feature = Feature::new("app", Aggregation::MeanRate).unwrap();
    let report = positivity_check(&records, &feature, 4, &[1.0], 0).map_err(err)?;
    let row = &report.rows[0];
    let exact = row.below.propensity == Some(1.0) && row.at_or_above.propensity == Some(0.0);

    let dir = TempDir::new().map_err(err)?;
    let dataset = dir.path().join("dataset.csv");
    write_dataset(&dataset, &records).map_err(err)?;
    let config = dir.path().join("analysis.json");
    let doc = serde_json::json!({
        "analysis": {
            "estimators": ["ipw"],
            "regimes": [adi("app", 4, app_below(1.5), "coach")],
        }
    });
    fs::write(&config, doc.to_string()).map_err(err)?;
    let out = dir.path().join("out");
    let code = cli::cmd_analyze(
        &dataset,
        &RunOptions {
            config,
            out: Some(out.clone()),
            ..Default::default()
        },
    );
    let refused = code == 1 && !out.join("ipw.csv").exists();
    ensure(
        !report.passed && exact && refused,
        format!(
            "propensities below/at-or-above cutoff {:?}/{:?}, check passed = {}, analyze exit code {code}",
            row.below.propensity, row.at_or_above.propensity, report.passed
        ),
    )
}

fn cost_direction() -> Check {
    let strict = 1.0;
    let inclusive = 1.5;
    let mut lines = Vec::new();
    for (kappa, want_inclusive) in [(0.0, true), (1.5, false)] {
        let mut params = illustrative(500, 0);
        params.cost_per_rescue = kappa;
        for r in &mut params.rescue_options {
            r.main_effect = 0.5;
            r.severity_moderation = 0.0;
        }
        let big = gen_population(&ScenarioParams {
            population: 200_000,
            seed: 10,
            ..params.clone()
        })
        .map_err(err)?;
        let value = |c: f64| regime_truth(&big, &adi("app", 4, app_below(c), "coach"), OutcomeScale::CostAdjusted);
        let truth = value(inclusive).map_err(err)? - value(strict).map_err(err)?;

        let scheme = Scheme::CutoffTrial {
            condition: app_below(1.0),
            cutoffs: vec![strict, inclusive],
            decision_week: 4,
            rescue: "coach".into(),
            allocation: None,
        };
        let analysis = McAnalysis {
            scale: OutcomeScale::CostAdjusted,
            factors: Some(vec![Factor::Cutoff]),
            ..Default::default()
        };
        let report = run_replicates(&McPlan::new(params, scheme.into(), analysis, 400, 10)).map_err(err)?;
        let c = report.primary(None).map_err(err)?;
        let sign = if c.first == "cutoff=1.5" { 1.0 } else { -1.0 };
        let estimate = sign * c.mean_estimate;
        let se = c.bias_mc_se.unwrap_or(f64::INFINITY);
        let ok = (truth > 0.0) == want_inclusive && (estimate > 0.0) == want_inclusive && c.bias.abs() <= 3.0 * se;
        let best = if estimate > 0.0 { inclusive } else { strict };
        let line = format!(
            "kappa {kappa}: V(1.5) - V(1.0) truth {truth:+.4}, MC mean {estimate:+.4}, bias {:+.4} (MC SE {se:.4}), best cutoff {best}",
            sign * c.bias
        );
        if !ok {
            return Err(line);
        }
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Check {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let dir = TempDir::new().map_err(err)?;
    let mut compared = 0;
    for name in ["unrestricted_smart", "natural_history", "decision_time", "variable_moderation", "hybrid"] {
        let mut trees = Vec::new();
        for (k, threads) in [1, 1, 8].into_iter().enumerate() {
            let out: PathBuf = dir.path().join(format!("{name}-{k}"));
            let opts = RunOptions {
                config: configs.join(format!("{name}.json")),
                out: Some(out.clone()),
                threads: Some(threads),
                ..Default::default()
            };
            cli::simulate(&opts).map_err(|f| format!("{name}: {f}"))?;
            trees.push(tree(&out));
        }
        compared += trees[0].len();
        if trees[0] != trees[1] || trees[0] != trees[2] {
            return Err(format!("{name}: output trees differ"));
        }
    }

    let mut cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(configs.join("cutoff_trial.json")).map_err(err)?).map_err(err)?;
    cfg["mc"]["replicates"] = 50.into();
    cfg["mc"]["n_grid"] = serde_json::json!([200, 400]);
    let power_cfg = dir.path().join("power.json");
    fs::write(&power_cfg, cfg.to_string()).map_err(err)?;
    let mut trees = Vec::new();
    for (k, threads) in [1, 1, 8].into_iter().enumerate() {
        let out = dir.path().join(format!("power-{k}"));
        let opts = RunOptions {
            config: power_cfg.clone(),
            out: Some(out.clone()),
            threads: Some(threads),
            ..Default::default()
        };
        cli::power(&opts).map_err(|f| format!("power: {f}"))?;
        trees.push(tree(&out));
    }
    compared += trees[0].len();
    ensure(
        trees[0] == trees[1] && trees[0] == trees[2],
        format!("{compared} files from 5 simulate configs and 1 power run identical across 2 runs and 1 vs 8 threads"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("1 sequential allocation 0.5/0.25/0.125/0.125", sequential_allocation),
        ("2 sequential probabilities for a uniform target", uniform_target_allocation),
        ("3 rule constraint holds for every record", rule_constraint),
        ("4 arm means and IPW agree with regime truth", estimator_oracle),
        ("5 quadratic recovery and saturation", quadratic_recovery),
        ("6 AUC matches pairwise enumeration", auc_oracle),
        ("7 type-I error of the cutoff contrast", type_one_error),
        ("8 qualitative moderation recovery", moderation_recovery),
        ("9 positivity gate refuses deterministic cutoff data", positivity_gate),
        ("10 cost penalty direction", cost_direction),
        ("11 byte-identical outputs", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS [{name}] {detail} ({secs:.1}s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL [{name}] {detail} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
