//! Tailoring variable x cutoff level x decision time, analysed one factor at
//! a time.

use tailorlab::analysis::{arm_contrasts, ContrastOptions};
use tailorlab::datagen::{gen_population, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, CrossVariable, DesignSpec, Scheme};
use tailorlab::model::{AtomicCondition, Factor};

fn main() -> tailorlab::error::Result<()> {
    let mut params = ScenarioParams::illustrative();
    params.population = 4000;
    params.seed = 17;
    let table = gen_population(&params)?;
    let scheme = Scheme::FullCross {
        variables: vec![
            CrossVariable {
                label: "app".into(),
                levels: vec![AtomicCondition::below("app", 1.0)?.into(), AtomicCondition::below("app", 1.5)?.into()],
            },
            CrossVariable {
                label: "cannabis".into(),
                levels: vec![
                    AtomicCondition::above("cannabis", 3.0)?.into(),
                    AtomicCondition::above("cannabis", 2.5)?.into(),
                ],
            },
        ],
        cutoff_labels: vec!["strict".into(), "lenient".into()],
        times: vec![2, 6],
        rescue: "coach".into(),
    };
    let spec = DesignSpec {
        scheme,
        block_size: Some(8),
    };
    println!("{} cells", spec.cell_count());
    let records = run_design(&table, &spec, design_seed(17))?;
    for factor in [Factor::Variable, Factor::Cutoff, Factor::Time] {
        let t = arm_contrasts(&records, &[factor], &ContrastOptions::default())?;
        for c in &t.contrasts {
            println!("{:<8} {} - {}: {:.3} (se {:.3})", factor.name(), c.first, c.second, c.difference, c.standard_error);
        }
    }
    Ok(())
}
