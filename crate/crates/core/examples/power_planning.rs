//! Monte Carlo power for the cutoff contrast across population sizes.

use tailorlab::datagen::ScenarioParams;
use tailorlab::designs::Scheme;
use tailorlab::model::AtomicCondition;
use tailorlab::montecarlo::{power_search, McAnalysis, McPlan};

fn main() -> tailorlab::error::Result<()> {
    let scheme = Scheme::CutoffTrial {
        condition: AtomicCondition::below("app", 1.0)?,
        cutoffs: vec![0.75, 1.75],
        decision_week: 4,
        rescue: "intense".into(),
        allocation: None,
    };
    let plan = McPlan::new(ScenarioParams::illustrative(), scheme.into(), McAnalysis::default(), 200, 2024);
    let search = power_search(&plan, 0.8, &[200, 400, 800, 1600])?;
    println!("contrast {} vs {}", search.contrast[0], search.contrast[1]);
    for p in &search.curve {
        println!("N {:>5}: power {:.3} +/- {:.3}", p.n, p.power, p.mc_se);
    }
    match search.required_n {
        Some(n) => println!("smallest N reaching {}: {n}", search.target),
        None => println!("target {} not reached on this grid", search.target),
    }
    if let Some(report) = search.reports.last() {
        for a in &report.arms {
            println!("arm {}: mean nonresponders {:.1}", a.arm, a.mean_nonresponders);
        }
    }
    Ok(())
}
