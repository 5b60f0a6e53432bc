//! CDF kernels used by the test battery (regularized incomplete beta/gamma via statrs).

use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF, FisherSnedecor, Normal, StudentsT};

use super::StatsError;

fn invalid(what: impl Into<String>) -> StatsError {
    StatsError::InvalidParameter(what.into())
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided normal tail probability `2 * P(Z > |z|)`.
pub fn normal_two_sided(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

fn students_t(df: f64) -> Result<StudentsT, StatsError> {
    if df.is_nan() || df <= 0.0 || !df.is_finite() {
        return Err(invalid(format!("t df {df}")));
    }
    StudentsT::new(0.0, 1.0, df).map_err(|e| invalid(e.to_string()))
}

pub fn t_cdf(t: f64, df: f64) -> Result<f64, StatsError> {
    Ok(students_t(df)?.cdf(t))
}

/// `2 * P(T > |t|)` for Student's t with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> Result<f64, StatsError> {
    Ok((2.0 * students_t(df)?.sf(t.abs())).min(1.0))
}

fn chi_squared(df: f64) -> Result<ChiSquared, StatsError> {
    if df.is_nan() || df <= 0.0 || !df.is_finite() {
        return Err(invalid(format!("chi-square df {df}")));
    }
    ChiSquared::new(df).map_err(|e| invalid(e.to_string()))
}

pub fn chi_square_cdf(x: f64, df: f64) -> Result<f64, StatsError> {
    Ok(chi_squared(df)?.cdf(x.max(0.0)))
}

pub fn chi_square_sf(x: f64, df: f64) -> Result<f64, StatsError> {
    Ok(chi_squared(df)?.sf(x.max(0.0)))
}

pub fn f_sf(x: f64, df1: f64, df2: f64) -> Result<f64, StatsError> {
    if !(df1 > 0.0 && df2 > 0.0) {
        return Err(invalid(format!("F df ({df1}, {df2})")));
    }
    let f = FisherSnedecor::new(df1, df2).map_err(|e| invalid(e.to_string()))?;
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(f.sf(x.max(0.0)))
}

/// `P(X <= k)` for `X ~ Binomial(n, p)`.
pub fn binomial_cdf(k: u64, n: u64, p: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("binomial p {p}")));
    }
    let b = Binomial::new(p, n).map_err(|e| invalid(e.to_string()))?;
    Ok(b.cdf(k))
}
