//! Randomize participants between two nonresponse cutoffs and compare the
//! embedded adaptive interventions by their arm means.

use tailorlab::analysis::{arm_contrasts, ContrastOptions};
use tailorlab::datagen::{gen_population, regime_truth, OutcomeScale, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, Scheme};
use tailorlab::model::{AdaptiveIntervention, AtomicCondition, Factor, TailoringRule};

fn main() -> tailorlab::error::Result<()> {
    let mut params = ScenarioParams::illustrative();
    params.population = 2000;
    params.seed = 7;
    let table = gen_population(&params)?;

    let condition = AtomicCondition::below("app", 1.0)?;
    let cutoffs = [1.0, 1.5];
    let scheme = Scheme::CutoffTrial {
        condition: condition.clone(),
        cutoffs: cutoffs.to_vec(),
        decision_week: 4,
        rescue: "coach".into(),
        allocation: None,
    };
    let records = run_design(&table, &scheme.into(), design_seed(7))?;
    let table_out = arm_contrasts(&records, &[Factor::Cutoff], &ContrastOptions::default())?;

    println!("arm      n     mean    se      nonresponders");
    for g in &table_out.groups {
        println!("{:<8} {:<5} {:>7.3} {:>7.3} {}", g.label, g.n, g.mean, g.standard_error, g.nonresponders);
    }
    for c in &table_out.contrasts {
        println!(
            "{} vs {}: diff {:.3} (se {:.3}, p {:.3})",
            c.first, c.second, c.difference, c.standard_error, c.p_value
        );
    }

    println!("population truth:");
    for c in cutoffs {
        let mut adi = AdaptiveIntervention::new(TailoringRule::new(4, condition.with_cutoff(c)), "coach");
        adi.initial = "app".into();
        println!("  {adi}: {:.3}", regime_truth(&table, &adi, OutcomeScale::Raw)?);
    }
    Ok(())
}
