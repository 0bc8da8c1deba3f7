use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::record_value;
use super::stats::{exact_mean, quantile_sorted};
use crate::datagen::OutcomeScale;
use crate::error::{Error, Result};
use crate::model::{TrialRecord, Week};
use crate::rng::{substream, Domain};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticOptions {
    pub scale: OutcomeScale,
    /// Arm-stratified bootstrap resamples for the interval around `argmax`.
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for QuadraticOptions {
    fn default() -> Self {
        QuadraticOptions {
            scale: OutcomeScale::Raw,
            bootstrap: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMean {
    pub time: Week,
    pub n: usize,
    pub mean: f64,
}

/// `E[Y | t] = b0 + b1 t + b2 t^2` fitted across decision-time arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub arm_means: Vec<ArmMean>,
    /// `[b0, b1, b2]`; `None` with fewer than three distinct times.
    pub coefficients: Option<[f64; 3]>,
    /// Estimated best decision time.
    pub argmax: f64,
    pub concave: bool,
    /// `argmax` fell back to the best observed arm.
    pub clamped: bool,
    pub interval: Option<(f64, f64)>,
    pub note: Option<String>,
}

impl QuadraticFit {
    pub fn predict(&self, t: f64) -> Option<f64> {
        self.coefficients.map(|[b0, b1, b2]| b0 + b1 * t + b2 * t * t)
    }
}

pub(crate) struct Curve {
    pub coefficients: Option<[f64; 3]>,
    pub argmax: f64,
    pub concave: bool,
    pub clamped: bool,
}

/// Weighted fit on arm means, which gives the same coefficients as the
/// participant-level fit.
pub(crate) fn fit_curve(arms: &[ArmMean]) -> Result<Curve> {
    let times: Vec<Week> = arms.iter().map(|a| a.time).collect();
    let means: Vec<f64> = arms.iter().map(|a| a.mean).collect();
    let weights: Vec<f64> = arms.iter().map(|a| a.n as f64).collect();
    fit_weighted(&times, &means, &weights)
}

/// Exact weighted least-squares solution `[b0, b1, b2]`, or `None` when the
/// normal equations are singular.
fn exact_normal_equations(times: &[Week], means: &[f64], weights: &[f64]) -> Option<[BigRational; 3]> {
    let zero = || BigRational::zero();
    let mut a: Vec<Vec<BigRational>> = vec![vec![zero(); 4]; 3];
    for ((&t, &y), &w) in times.iter().zip(means).zip(weights) {
        let t = BigRational::from_integer(BigInt::from(t));
        let w = BigRational::from_float(w)?;
        let y = BigRational::from_float(y)?;
        let powers = [BigRational::one(), t.clone(), &t * &t, &t * &t * &t, &t * &t * &t * &t];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += &w * &powers[r + c];
            }
            a[r][3] += &w * &powers[r] * &y;
        }
    }
    for col in 0..3 {
        let pivot = (col..3).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        let p = a[col][col].clone();
        for v in a[col].iter_mut() {
            *v /= &p;
        }
        for r in 0..3 {
            if r != col && !a[r][col].is_zero() {
                let k = a[r][col].clone();
                for c in col..4 {
                    let delta = &k * &a[col][c];
                    a[r][c] -= delta;
                }
            }
        }
    }
    Some([a[0][3].clone(), a[1][3].clone(), a[2][3].clone()])
}

/// Quadratic fit through `means` at increasing `times` with arm `weights`.
/// The normal equations are solved in exact rational arithmetic, so the
/// coefficients and vertex are correctly rounded.
pub(crate) fn fit_weighted(times: &[Week], means: &[f64], weights: &[f64]) -> Result<Curve> {
    let best = || {
        let mut k = 0;
        for j in 1..means.len() {
            if means[j] > means[k] {
                k = j;
            }
        }
        f64::from(times[k])
    };
    if times.len() < 3 {
        return Ok(Curve {
            coefficients: None,
            argmax: best(),
            concave: false,
            clamped: true,
        });
    }
    let [b0, b1, b2] = exact_normal_equations(times, means, weights)
        .ok_or_else(|| Error::DegenerateLabels("quadratic design is singular or has non-finite values".into()))?;
    let coefficients = [&b0, &b1, &b2].map(|b| b.to_f64().unwrap_or(f64::NAN));
    let concave = b2.is_negative();
    let lo = BigRational::from_integer(BigInt::from(times[0]));
    let hi = BigRational::from_integer(BigInt::from(times[times.len() - 1]));
    let (argmax, clamped) = if concave {
        let vertex = -&b1 / (BigRational::from_integer(BigInt::from(2)) * &b2);
        if vertex >= lo && vertex <= hi {
            (vertex.to_f64().unwrap_or(f64::NAN), false)
        } else {
            (best(), true)
        }
    } else {
        (best(), true)
    };
    Ok(Curve {
        coefficients: Some(coefficients),
        argmax,
        concave,
        clamped,
    })
}

fn arm_means(groups: &BTreeMap<Week, Vec<f64>>) -> Vec<ArmMean> {
    groups
        .iter()
        .map(|(&time, ys)| ArmMean {
            time,
            n: ys.len(),
            mean: exact_mean(ys),
        })
        .collect()
}

/// Quadratic model of the outcome in decision time over the time arms of a
/// decision-time trial.
pub fn fit_quadratic_time(records: &[TrialRecord], options: &QuadraticOptions) -> Result<QuadraticFit> {
    let mut groups: BTreeMap<Week, Vec<f64>> = BTreeMap::new();
    for r in records {
        let label = r.arms.time.as_deref().ok_or_else(|| {
            Error::Schema(format!("record {} has no time arm label", r.participant_id))
        })?;
        let time: Week = label
            .parse()
            .map_err(|_| Error::Schema(format!("time arm `{label}` is not a week")))?;
        groups.entry(time).or_default().push(record_value(r, options.scale));
    }
    if groups.is_empty() {
        return Err(Error::EmptySet("no records to fit".into()));
    }
    let arms = arm_means(&groups);
    let curve = fit_curve(&arms)?;
    let note = if curve.coefficients.is_none() {
        Some(format!(
            "{} distinct decision times; a quadratic needs at least 3, so only arm means are reported",
            arms.len()
        ))
    } else if !curve.concave {
        Some("fitted curve is not concave; best observed arm reported".into())
    } else if curve.clamped {
        Some("vertex lies outside the observed times; best observed arm reported".into())
    } else {
        None
    };
    let interval = if options.bootstrap > 0 && curve.coefficients.is_some() {
        let strata: Vec<(Week, &Vec<f64>)> = groups.iter().map(|(&t, ys)| (t, ys)).collect();
        let mut draws: Vec<f64> = (0..options.bootstrap)
            .into_par_iter()
            .filter_map(|b| {
                let mut rng = substream(options.seed, Domain::Bootstrap, b as u64);
                let resampled: BTreeMap<Week, Vec<f64>> = strata
                    .iter()
                    .map(|&(t, ys)| (t, (0..ys.len()).map(|_| ys[rng.random_range(0..ys.len())]).collect()))
                    .collect();
                fit_curve(&arm_means(&resampled)).ok().map(|c| c.argmax)
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        (!draws.is_empty()).then(|| (quantile_sorted(&draws, 0.025), quantile_sorted(&draws, 0.975)))
    } else {
        None
    };
    Ok(QuadraticFit {
        arm_means: arms,
        coefficients: curve.coefficients,
        argmax: curve.argmax,
        concave: curve.concave,
        clamped: curve.clamped,
        interval,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::record;

    fn timed(id: usize, t: Week, y: f64) -> TrialRecord {
        let mut r = record(id, 1.0, y);
        r.arms.time = Some(t.to_string());
        r
    }

    fn exact(times: &[Week], per_arm: usize, f: impl Fn(f64) -> f64) -> Vec<TrialRecord> {
        let mut out = Vec::new();
        for &t in times {
            for _ in 0..per_arm {
                out.push(timed(out.len(), t, f(f64::from(t))));
            }
        }
        out
    }

    fn no_boot() -> QuadraticOptions {
        QuadraticOptions {
            bootstrap: 0,
            ..Default::default()
        }
    }

    #[test]
    fn recovers_exact_quadratic() {
        let f = |t: f64| 5.0 + 1.6 * t - 0.2 * t * t;
        let recs = exact(&[2, 4, 6, 8], 5, f);
        let fit = fit_quadratic_time(&recs, &no_boot()).unwrap();
        let [b0, b1, b2] = fit.coefficients.unwrap();
        assert!((b0 - 5.0).abs() < 1e-9 && (b1 - 1.6).abs() < 1e-9 && (b2 + 0.2).abs() < 1e-9);
        assert_eq!(fit.argmax, 4.0);
        assert!(fit.concave && !fit.clamped);
        for a in &fit.arm_means {
            let yhat = fit.predict(f64::from(a.time)).unwrap();
            assert!((yhat - a.mean).abs() <= 1e-9 * a.mean.abs());
        }
    }

    #[test]
    fn non_concave_clamps_to_best_arm() {
        let recs = exact(&[2, 4, 6, 8], 3, |t| 1.0 + 0.1 * (t - 5.0) * (t - 5.0));
        let fit = fit_quadratic_time(&recs, &no_boot()).unwrap();
        assert!(!fit.concave && fit.clamped);
        // arms 2 and 8 tie at 1.9; the earlier one wins
        assert_eq!(fit.argmax, 2.0);
    }

    #[test]
    fn vertex_outside_range_is_clamped() {
        let recs = exact(&[2, 4, 6, 8], 3, |t| -(t - 12.0) * (t - 12.0));
        let fit = fit_quadratic_time(&recs, &no_boot()).unwrap();
        assert!(fit.concave && fit.clamped);
        assert_eq!(fit.argmax, 8.0);
    }

    #[test]
    fn three_arms_are_saturated() {
        let ys = [(2, [1.0, 2.0, 4.0]), (4, [3.5, 2.5, 3.0]), (8, [0.0, 1.0, -0.5])];
        let mut recs = Vec::new();
        for (t, vals) in ys {
            for y in vals {
                recs.push(timed(recs.len(), t, y));
            }
        }
        let fit = fit_quadratic_time(&recs, &no_boot()).unwrap();
        for a in &fit.arm_means {
            let yhat = fit.predict(f64::from(a.time)).unwrap();
            assert!((yhat - a.mean).abs() < 1e-12, "{yhat} vs {}", a.mean);
        }
    }

    #[test]
    fn two_arms_report_means_only() {
        let recs = exact(&[2, 4], 2, |t| t);
        let fit = fit_quadratic_time(&recs, &no_boot()).unwrap();
        assert!(fit.coefficients.is_none());
        assert_eq!(fit.arm_means.len(), 2);
        assert_eq!(fit.argmax, 4.0);
        assert!(fit.note.is_some());
    }

    #[test]
    fn bootstrap_interval_brackets_estimate() {
        let mut recs = Vec::new();
        for (k, &t) in [2u32, 4, 6, 8].iter().enumerate() {
            for j in 0..30 {
                let noise = ((j * 7 + k * 3) % 11) as f64 / 11.0 - 0.5;
                let tf = f64::from(t);
                recs.push(timed(recs.len(), t, 5.0 + 1.6 * tf - 0.2 * tf * tf + noise));
            }
        }
        let opts = QuadraticOptions {
            bootstrap: 200,
            seed: 1,
            ..Default::default()
        };
        let fit = fit_quadratic_time(&recs, &opts).unwrap();
        let (lo, hi) = fit.interval.unwrap();
        assert!(lo <= fit.argmax && fit.argmax <= hi);
        assert_eq!(fit, fit_quadratic_time(&recs, &opts).unwrap());
    }
}
