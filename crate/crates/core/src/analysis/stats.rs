//! Small numerical helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Float, ToPrimitive, Zero};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// n, mean and unbiased variance of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Neumaier-compensated sum.
pub fn accurate_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

pub fn mean(values: &[f64]) -> f64 {
    accurate_sum(values.iter().copied()) / values.len() as f64
}

/// Correctly rounded mean of finite values.
pub fn exact_mean(values: &[f64]) -> f64 {
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return mean(values);
    }
    let parts: Vec<(u64, i16, i8)> = values.iter().map(|v| v.integer_decode()).collect();
    let emin = parts.iter().map(|p| p.1).min().unwrap_or(0);
    let mut total = BigInt::zero();
    for &(m, e, sign) in &parts {
        let term = BigInt::from(m) << (e - emin) as usize;
        if sign < 0 {
            total -= term;
        } else {
            total += term;
        }
    }
    let mut denominator = BigInt::from(values.len());
    let mut numerator = total;
    if emin < 0 {
        denominator <<= (-emin) as usize;
    } else {
        numerator <<= emin as usize;
    }
    BigRational::new(numerator, denominator).to_f64().unwrap_or(f64::NAN)
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                n,
                mean: f64::NAN,
                variance: f64::NAN,
            };
        }
        let mean = mean(values);
        let variance = if n > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            f64::NAN
        };
        Summary { n, mean, variance }
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance / self.n as f64).sqrt()
    }
}

/// Two-sided test of a difference in means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoSampleTest {
    pub difference: f64,
    pub standard_error: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Two-sided p-value of a t statistic; falls back to the exact limits when
/// the standard error is zero.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    if !(df > 0.0) || !df.is_finite() {
        return f64::NAN;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}

/// Welch two-sample t test of `a - b`. Requires at least two observations per
/// group.
pub fn welch(a: &Summary, b: &Summary) -> Option<TwoSampleTest> {
    if a.n < 2 || b.n < 2 {
        return None;
    }
    let va = a.variance / a.n as f64;
    let vb = b.variance / b.n as f64;
    let se = (va + vb).sqrt();
    let difference = a.mean - b.mean;
    let df = if va + vb > 0.0 {
        (va + vb).powi(2) / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64)
    } else {
        (a.n + b.n - 2) as f64
    };
    let t = if se > 0.0 {
        difference / se
    } else if difference == 0.0 {
        0.0
    } else {
        difference.signum() * f64::INFINITY
    };
    Some(TwoSampleTest {
        difference,
        standard_error: se,
        df,
        p_value: two_sided_p(t, df),
    })
}

/// Linear-interpolated quantile of an already sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Sample standard deviation; NaN for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    Summary::of(values).variance.sqrt()
}

/// Ordinary least squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub residual_df: usize,
    pub residual_sum_of_squares: f64,
}

/// Least squares of `y` on the rows of `design` with optional row weights.
/// Standard errors use the classical homoskedastic formula.
pub fn ols(design: &[Vec<f64>], y: &[f64], weights: Option<&[f64]>) -> Result<OlsFit> {
    let n = design.len();
    let p = design.first().map(Vec::len).unwrap_or(0);
    if n != y.len() || p == 0 {
        return Err(Error::Schema("design matrix and response disagree in length".into()));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let x = DMatrix::from_fn(n, p, |i, j| design[i][j] * w(i).sqrt());
    let yv = DVector::from_fn(n, |i, _| y[i] * w(i).sqrt());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &yv;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateLabels("design matrix is rank deficient".into()))?;
    // QR, then one step of iterative refinement
    let qr = x.clone().qr();
    let solve = |rhs: &DVector<f64>| -> Option<DVector<f64>> { qr.r().solve_upper_triangular(&(qr.q().transpose() * rhs)) };
    let mut beta = solve(&yv).unwrap_or_else(|| chol.solve(&xty));
    if let Some(step) = solve(&(&yv - &x * &beta)) {
        beta += step;
    }
    let residuals = &yv - &x * &beta;
    let rss = residuals.norm_squared();
    let residual_df = n.saturating_sub(p);
    let inverse = chol.inverse();
    let sigma2 = if residual_df > 0 { rss / residual_df as f64 } else { f64::NAN };
    let standard_errors = (0..p).map(|j| (sigma2 * inverse[(j, j)]).sqrt()).collect();
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        residual_df,
        residual_sum_of_squares: rss,
    })
}
