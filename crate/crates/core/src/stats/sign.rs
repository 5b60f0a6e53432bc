use super::distributions::binomial_cdf;
use super::rank::snap;
use super::{EffectKind, PairedSample, StatsError, TestResult};

/// Exact two-sided sign test on `x - y`; zero differences are dropped.
pub fn sign_test(sample: &PairedSample) -> Result<TestResult, StatsError> {
    let diffs: Vec<f64> = sample.differences().into_iter().map(snap).collect();
    let pos = diffs.iter().filter(|d| **d > 0.0).count();
    let neg = diffs.iter().filter(|d| **d < 0.0).count();
    let n = pos + neg;
    if n == 0 {
        return Err(StatsError::TooFewDifferences { needed: 1, got: 0 });
    }
    let k = pos.min(neg);
    let p = (2.0 * binomial_cdf(k as u64, n as u64, 0.5)?).min(1.0);
    let share = pos as f64 / n as f64;
    Ok(TestResult::new("sign_test", pos as f64, p, (EffectKind::ProportionPositive, share), n, true)
        .with_note(format!("{pos} positive, {neg} negative")))
}
