//! Charging a cost per rescue changes which cutoff is best. Shows the
//! population value of each cutoff on the raw and cost-adjusted scales, and
//! a weighted misclassification scan on natural-history data.

use tailorlab::analysis::cutoff_scan_cost;
use tailorlab::datagen::{gen_population, regime_truth, OutcomeScale, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, Scheme};
use tailorlab::model::{AdaptiveIntervention, AtomicCondition, TailoringRule};

fn main() -> tailorlab::error::Result<()> {
    let cutoffs = [0.5, 1.0, 1.5, 2.0, 2.5];
    let condition = AtomicCondition::below("app", 1.0)?;
    for kappa in [0.0, 0.3, 0.6] {
        let mut params = ScenarioParams::illustrative();
        params.population = 20_000;
        params.cost_per_rescue = kappa;
        let table = gen_population(&params)?;
        print!("kappa {kappa}:");
        for c in cutoffs {
            let mut adi = AdaptiveIntervention::new(TailoringRule::new(4, condition.with_cutoff(c)), "coach");
            adi.initial = "app".into();
            print!("  c={c}: {:.3}", regime_truth(&table, &adi, OutcomeScale::CostAdjusted)?);
        }
        println!();
    }

    let mut params = ScenarioParams::illustrative();
    params.population = 2000;
    let table = gen_population(&params)?;
    let records = run_design(&table, &Scheme::InitialOnly.into(), design_seed(0))?;
    for (w_fp, w_fn) in [(1.0, 1.0), (1.0, 4.0), (4.0, 1.0)] {
        let scan = cutoff_scan_cost(&records, &condition, 4, &cutoffs, w_fp, w_fn)?;
        println!("w_fp {w_fp} w_fn {w_fn}: best cutoff {}", scan.best_cutoff);
        for w in &scan.warnings {
            println!("  warning: {w}");
        }
    }
    Ok(())
}
