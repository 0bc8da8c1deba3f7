//! Factorial cutoff x decision-time cells with a second randomization among
//! rescue options for nonresponders.

use tailorlab::analysis::{arm_contrasts, ContrastOptions};
use tailorlab::datagen::{gen_population, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, Scheme};
use tailorlab::model::{AtomicCondition, Factor};

fn main() -> tailorlab::error::Result<()> {
    let mut params = ScenarioParams::illustrative();
    params.population = 4000;
    params.seed = 16;
    let table = gen_population(&params)?;
    let scheme = Scheme::HybridFactorialSmart {
        condition: AtomicCondition::below("app", 1.0)?,
        cutoffs: vec![1.0, 1.5],
        times: vec![2, 6],
        rescue_options: vec!["coach".into(), "intense".into()],
        rescue_probabilities: None,
    };
    let records = run_design(&table, &scheme.into(), design_seed(16))?;

    let cells = arm_contrasts(&records, &[Factor::Cutoff, Factor::Time], &ContrastOptions::default())?;
    for g in &cells.groups {
        println!("{:<18} n {:<5} mean {:.3} nonresponders {}", g.label, g.n, g.mean, g.nonresponders);
    }

    let nonresponders: Vec<_> = records.iter().filter(|r| r.rescued).cloned().collect();
    let by_rescue = arm_contrasts(&nonresponders, &[Factor::Rescue], &ContrastOptions::default())?;
    println!("among nonresponders:");
    for c in &by_rescue.contrasts {
        println!("  {} - {}: {:.3} (p {:.3})", c.first, c.second, c.difference, c.p_value);
    }
    Ok(())
}
