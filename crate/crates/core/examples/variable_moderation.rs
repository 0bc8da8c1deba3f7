//! Randomize rescue once at week 4 and screen candidate tailoring variables
//! for qualitative moderation of the rescue effect.

use tailorlab::analysis::moderation_scan;
use tailorlab::datagen::{gen_population, OutcomeScale, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, Scheme};
use tailorlab::model::{Aggregation, Feature};

fn main() -> tailorlab::error::Result<()> {
    let mut params = ScenarioParams::illustrative();
    params.population = 5000;
    params.seed = 5;
    for r in &mut params.rescue_options {
        r.main_effect = 0.0;
        r.severity_moderation = 0.8;
    }
    let table = gen_population(&params)?;
    let scheme = Scheme::SinglyRandomizedRescue {
        decision_week: 4,
        rescue_probability: 0.5,
        rescue: "coach".into(),
    };
    let records = run_design(&table, &scheme.into(), design_seed(5))?;
    let candidates = [
        Feature::new("app", Aggregation::MeanRate)?,
        Feature::new("cannabis", Aggregation::MeanRate)?,
        Feature::new("cannabis", Aggregation::RunningMaximum)?,
    ];
    for m in moderation_scan(&records, &candidates, OutcomeScale::Raw, 0.05)? {
        println!(
            "{:<14} interaction {:>7.3} t {:>6.2} p {:.4} effect {:.2}..{:.2} flagged {}",
            m.feature, m.interaction, m.t, m.p_value, m.effect_at_min, m.effect_at_max, m.flagged
        );
    }
    Ok(())
}
