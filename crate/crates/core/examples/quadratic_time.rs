//! Fit a quadratic in decision time across the arms of a decision-time trial
//! and report the estimated best week with a bootstrap interval.

use tailorlab::analysis::{fit_quadratic_time, QuadraticOptions};
use tailorlab::datagen::{gen_population, regime_truth, OutcomeScale, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, Scheme, TimeAllocation};
use tailorlab::model::{AdaptiveIntervention, AtomicCondition, TailoringRule};

fn main() -> tailorlab::error::Result<()> {
    let mut params = ScenarioParams::illustrative();
    params.population = 4000;
    params.seed = 21;
    let table = gen_population(&params)?;
    let condition = AtomicCondition::below("app", 1.5)?;
    let scheme = Scheme::DecisionTimeTrial {
        condition: condition.clone().into(),
        times: vec![2, 4, 6, 8],
        allocation: TimeAllocation::Upfront { probabilities: None },
        rescue: "coach".into(),
    };
    let records = run_design(&table, &scheme.into(), design_seed(21))?;
    let fit = fit_quadratic_time(
        &records,
        &QuadraticOptions {
            bootstrap: 500,
            seed: 21,
            ..Default::default()
        },
    )?;
    for a in &fit.arm_means {
        let mut adi = AdaptiveIntervention::new(TailoringRule::new(a.time, condition.clone()), "coach");
        adi.initial = "app".into();
        let truth = regime_truth(&table, &adi, OutcomeScale::Raw)?;
        println!("week {}: n {} mean {:.3} truth {:.3}", a.time, a.n, a.mean, truth);
    }
    if let Some([b0, b1, b2]) = fit.coefficients {
        println!("E[Y|t] = {b0:.3} + {b1:.3} t + {b2:.4} t^2");
    }
    println!("best week {:.2} interval {:?}", fit.argmax, fit.interval);
    if let Some(note) = &fit.note {
        println!("note: {note}");
    }
    Ok(())
}
