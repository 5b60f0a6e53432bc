use super::distributions::f_sf;
use super::{check_finite, mean, EffectKind, StatsError, TestResult};

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

/// Brown-Forsythe variant: deviations from each group's median.
pub fn levene_test(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    let k = groups.len();
    if k < 2 {
        return Err(StatsError::TooFewGroups(k));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(StatsError::SampleTooSmall { which: format!("group {i}"), got: 0, needed: 1 });
        }
        check_finite(g)?;
    }
    let z: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = median(g);
            g.iter().map(|x| (x - m).abs()).collect()
        })
        .collect();
    let n: usize = z.iter().map(Vec::len).sum();
    if n <= k {
        return Err(StatsError::SampleTooSmall { which: "pooled".into(), got: n, needed: k + 1 });
    }
    let means: Vec<f64> = z.iter().map(|g| mean(g)).collect();
    let grand = z.iter().flatten().sum::<f64>() / n as f64;
    let between: f64 = z.iter().zip(&means).map(|(g, m)| g.len() as f64 * (m - grand).powi(2)).sum();
    let within: f64 = z.iter().zip(&means).map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sum();
    let (df1, df2) = ((k - 1) as f64, (n - k) as f64);
    let (f, p) = if within == 0.0 {
        if between == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = (df2 / df1) * between / within;
        (f, f_sf(f, df1, df2)?)
    };
    Ok(TestResult::new("levene_median", f, p, (EffectKind::None, 0.0), n, false)
        .with_note(format!("df=({df1}, {df2})")))
}
