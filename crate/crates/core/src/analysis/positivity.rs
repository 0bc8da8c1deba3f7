use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Feature, TrialRecord, Week};

/// Rescue counts in one stratum of the aggregated variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub n: usize,
    pub rescued: usize,
    /// Empirical `P(A = 1)`; `None` for an empty stratum.
    pub propensity: Option<f64>,
}

impl Stratum {
    fn new(n: usize, rescued: usize) -> Self {
        Stratum {
            n,
            rescued,
            propensity: (n > 0).then(|| rescued as f64 / n as f64),
        }
    }

    fn problem(&self, min_count: usize) -> Option<String> {
        if self.n == 0 {
            Some("empty stratum, propensity unidentifiable".into())
        } else if self.rescued <= min_count || self.n - self.rescued <= min_count {
            Some(format!(
                "propensity {} ({} of {} rescued)",
                self.rescued as f64 / self.n as f64,
                self.rescued,
                self.n
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityRow {
    pub cutoff: f64,
    /// `O < c`.
    pub below: Stratum,
    /// `O >= c`.
    pub at_or_above: Stratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub feature: String,
    pub week: Week,
    pub min_count: usize,
    pub rows: Vec<PositivityRow>,
    pub passed: bool,
    /// One entry per failing stratum.
    pub failures: Vec<String>,
}

/// Empirical rescue propensity on either side of each cutoff. A stratum
/// fails when it is empty or when at most `min_count` of its records are on
/// one side of `A`.
pub fn positivity_check(
    records: &[TrialRecord],
    feature: &Feature,
    week: Week,
    grid: &[f64],
    min_count: usize,
) -> Result<PositivityReport> {
    if grid.is_empty() {
        return Err(Error::config("analysis.positivity.cutoffs", "cutoff grid must not be empty"));
    }
    let values = records
        .iter()
        .map(|r| feature.value(&r.trajectory, week))
        .collect::<Result<Vec<f64>>>()?;
    let label = feature.label();
    let mut rows = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for &c in grid {
        let (mut nb, mut rb, mut na, mut ra) = (0, 0, 0, 0);
        for (r, &x) in records.iter().zip(&values) {
            if x < c {
                nb += 1;
                rb += usize::from(r.rescued);
            } else {
                na += 1;
                ra += usize::from(r.rescued);
            }
        }
        let row = PositivityRow {
            cutoff: c,
            below: Stratum::new(nb, rb),
            at_or_above: Stratum::new(na, ra),
        };
        if let Some(p) = row.below.problem(min_count) {
            failures.push(format!("{label} < {c} at week {week}: {p}"));
        }
        if let Some(p) = row.at_or_above.problem(min_count) {
            failures.push(format!("{label} >= {c} at week {week}: {p}"));
        }
        rows.push(row);
    }
    Ok(PositivityReport {
        feature: label,
        week,
        min_count,
        passed: failures.is_empty(),
        rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Aggregation;
    use crate::testutil::{record, rescued_at};

    fn app() -> Feature {
        Feature::new("app", Aggregation::MeanRate).unwrap()
    }

    #[test]
    fn deterministic_rule_fails() {
        let recs: Vec<TrialRecord> = (0..20)
            .map(|i| {
                let a = i as f64 * 0.1;
                let r = record(i, a, 0.0);
                if a < 1.0 {
                    rescued_at(r, 4)
                } else {
                    r
                }
            })
            .collect();
        let rep = positivity_check(&recs, &app(), 4, &[1.0], 0).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.rows[0].below.propensity, Some(1.0));
        assert_eq!(rep.rows[0].at_or_above.propensity, Some(0.0));
        assert_eq!(rep.failures.len(), 2);
        assert!(rep.failures[0].starts_with("app < 1 at week 4"));
    }

    #[test]
    fn randomized_rescue_passes() {
        let recs: Vec<TrialRecord> = (0..40)
            .map(|i| {
                let r = record(i, (i % 4) as f64 * 0.5, 0.0);
                if (i / 4) % 2 == 0 {
                    rescued_at(r, 4)
                } else {
                    r
                }
            })
            .collect();
        let rep = positivity_check(&recs, &app(), 4, &[0.75, 1.25], 0).unwrap();
        assert!(rep.passed, "{:?}", rep.failures);
        assert_eq!(rep.rows[0].below.propensity, Some(0.5));
        // a count threshold of 10 rejects strata with only 10 rescued
        assert!(!positivity_check(&recs, &app(), 4, &[0.75], 10).unwrap().passed);
    }

    #[test]
    fn empty_stratum_is_unidentifiable() {
        let recs = vec![rescued_at(record(0, 2.0, 0.0), 4), record(1, 3.0, 0.0)];
        let rep = positivity_check(&recs, &app(), 4, &[1.0], 0).unwrap();
        assert!(!rep.passed);
        assert_eq!(rep.rows[0].below.propensity, None);
        assert!(rep.failures[0].contains("unidentifiable"));
    }
}
