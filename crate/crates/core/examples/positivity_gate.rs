//! A single deterministic cutoff leaves no variation in rescue on either side
//! of the cutoff, so no other cutoff can be evaluated from these data.

use tailorlab::analysis::positivity_check;
use tailorlab::datagen::{gen_population, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, Scheme};
use tailorlab::model::{Aggregation, AtomicCondition, Feature};

fn main() -> tailorlab::error::Result<()> {
    let params = ScenarioParams::illustrative();
    let table = gen_population(&params)?;
    let scheme = Scheme::CutoffTrial {
        condition: AtomicCondition::below("app", 1.0)?,
        cutoffs: vec![1.0],
        decision_week: 4,
        rescue: "coach".into(),
        allocation: None,
    };
    let records = run_design(&table, &scheme.into(), design_seed(0))?;
    let report = positivity_check(&records, &Feature::new("app", Aggregation::MeanRate)?, 4, &[1.0, 1.5], 0)?;
    for row in &report.rows {
        println!(
            "cutoff {}: below n={} p={:?}, at or above n={} p={:?}",
            row.cutoff, row.below.n, row.below.propensity, row.at_or_above.n, row.at_or_above.propensity
        );
    }
    println!("passed: {}", report.passed);
    for f in &report.failures {
        println!("  {f}");
    }
    Ok(())
}
