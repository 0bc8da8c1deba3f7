//! Decide-now / decide-later randomization that reaches equal shares across
//! four decision times.

use tailorlab::datagen::{gen_population, ScenarioParams};
use tailorlab::designs::{design_seed, induced_marginals, run_design, sequential_alloc_probs, Scheme, TimeAllocation};
use tailorlab::model::{AtomicCondition, Condition};

fn main() -> tailorlab::error::Result<()> {
    let target = [0.25, 0.25, 0.25, 0.25];
    let stages = sequential_alloc_probs(&target)?;
    println!("stage probabilities: {stages:?}");
    println!("induced marginals:   {:?}", induced_marginals(&stages));

    let mut params = ScenarioParams::illustrative();
    params.population = 10_000;
    let table = gen_population(&params)?;
    let scheme = Scheme::DecisionTimeTrial {
        condition: Condition::from(AtomicCondition::below("app", 1.0)?),
        times: vec![2, 4, 6, 8],
        allocation: TimeAllocation::SequentialTarget { target: target.to_vec() },
        rescue: "coach".into(),
    };
    let records = run_design(&table, &scheme.into(), design_seed(0))?;
    for t in ["2", "4", "6", "8"] {
        let n = records.iter().filter(|r| r.arms.time.as_deref() == Some(t)).count();
        println!("week {t}: {:.3}", n as f64 / records.len() as f64);
    }
    Ok(())
}
