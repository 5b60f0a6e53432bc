use super::distributions::t_two_sided;
use super::{check_finite, mean, EffectKind, StatsError, TestResult};

fn sum_sq(v: &[f64], m: f64) -> f64 {
    v.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Pooled-variance two-sample t-test with Cohen's d.
pub fn t_test_independent(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    for (which, v) in [("a", a), ("b", b)] {
        if v.len() < 2 {
            return Err(StatsError::SampleTooSmall { which: which.into(), got: v.len(), needed: 2 });
        }
        check_finite(v)?;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let df = na + nb - 2.0;
    let sp = ((sum_sq(a, ma) + sum_sq(b, mb)) / df).sqrt();
    let n = a.len() + b.len();
    if sp == 0.0 {
        if ma == mb {
            return Ok(TestResult::new("t_test", 0.0, 1.0, (EffectKind::D, 0.0), n, false).with_note("zero variance"));
        }
        return Err(StatsError::DegenerateVariance { mean_a: ma, mean_b: mb });
    }
    let t = (ma - mb) / (sp * (1.0 / na + 1.0 / nb).sqrt());
    let p = t_two_sided(t, df)?;
    let d = (ma - mb) / sp;
    Ok(TestResult::new("t_test", t, p, (EffectKind::D, d), n, false).with_note(format!("df={df}")))
}
