//! Unrestricted SMART: rescue-or-wait is randomized at every decision time,
//! and embedded regimes are estimated by inverse probability weighting.

use tailorlab::analysis::{ipw_regime_value, IpwOptions};
use tailorlab::datagen::{gen_population, regime_truth, OutcomeScale, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, Scheme};
use tailorlab::model::{AdaptiveIntervention, AtomicCondition, TailoringRule};

fn main() -> tailorlab::error::Result<()> {
    let mut params = ScenarioParams::illustrative();
    params.population = 3000;
    params.seed = 9;
    let table = gen_population(&params)?;
    let scheme = Scheme::UnrestrictedSmart {
        times: vec![2, 4, 6, 8],
        rescue_probabilities: vec![0.3; 4],
        rescue: "coach".into(),
    };
    let records = run_design(&table, &scheme.into(), design_seed(9))?;
    let options = IpwOptions {
        bootstrap: 300,
        seed: 9,
        ..Default::default()
    };
    for (week, cutoff) in [(2, 1.0), (4, 1.0), (4, 1.5), (6, 1.0), (8, 1.0)] {
        let mut adi = AdaptiveIntervention::new(TailoringRule::new(week, AtomicCondition::below("app", cutoff)?), "coach");
        adi.initial = "app".into();
        let est = ipw_regime_value(&records, &adi, &options)?;
        let truth = regime_truth(&table, &adi, OutcomeScale::Raw)?;
        println!(
            "{adi}: ipw {:.3} (se {:.3}, {} consistent) truth {truth:.3}",
            est.estimate,
            est.standard_error.unwrap_or(f64::NAN),
            est.n_consistent
        );
    }
    Ok(())
}
