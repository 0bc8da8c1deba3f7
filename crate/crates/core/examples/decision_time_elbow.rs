//! Natural-history data under the initial treatment: how early does app use
//! separate eventual successes from failures?

use tailorlab::analysis::{elbow_scan, ElbowOptions};
use tailorlab::datagen::{gen_population, ScenarioParams};
use tailorlab::designs::{design_seed, run_design, Scheme};
use tailorlab::model::{Aggregation, Direction, Feature};

fn main() -> tailorlab::error::Result<()> {
    let mut params = ScenarioParams::illustrative();
    params.population = 1000;
    params.seed = 3;
    let table = gen_population(&params)?;
    let records = run_design(&table, &Scheme::InitialOnly.into(), design_seed(3))?;

    let feature = Feature::new("app", Aggregation::MeanRate)?;
    let options = ElbowOptions {
        delta: 0.02,
        bootstrap: 200,
        seed: 3,
        ..Default::default()
    };
    let curve = elbow_scan(&records, &feature, Direction::BelowIsNonresponse, &[1, 2, 3, 4, 5, 6, 7, 8], &options)?;
    for (k, t) in curve.times.iter().enumerate() {
        let band = match (&curve.lower, &curve.upper) {
            (Some(l), Some(u)) => format!("[{:.3}, {:.3}]", l[k], u[k]),
            _ => String::new(),
        };
        println!("week {t}: AUC {:.3} {band}", curve.auc[k]);
    }
    println!("elbow at week {} (delta {})", curve.elbow, curve.delta);
    println!("{}", curve.caveat);
    Ok(())
}
