use std::f64::consts::PI;

use super::distributions::{normal_quantile, normal_sf};
use super::{check_finite, EffectKind, StatsError, TestResult};

const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
const C3: [f64; 4] = [0.5440, -0.39978, 0.025054, -6.714e-4];
const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
const G: [f64; 2] = [-2.273, 0.459];

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

/// Upper-half weights, `a[0]` pairing the extremes.
fn weights(n: usize) -> Vec<f64> {
    let half = n / 2;
    if n == 3 {
        return vec![0.5f64.sqrt()];
    }
    let nf = n as f64;
    // m[j] is the expected j-th largest normal order statistic, j = 0..half
    let m: Vec<f64> = (0..half).map(|j| normal_quantile((nf - j as f64 - 0.375) / (nf + 0.25))).collect();
    let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
    let ssumm2 = summ2.sqrt();
    let u = 1.0 / nf.sqrt();
    let mut a = vec![0.0; half];
    a[0] = m[0] / ssumm2 + poly(&C1, u);
    let (first, fac) = if n > 5 {
        a[1] = m[1] / ssumm2 + poly(&C2, u);
        let num = summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1];
        let den = 1.0 - 2.0 * a[0] * a[0] - 2.0 * a[1] * a[1];
        (2, (num / den).sqrt())
    } else {
        (1, ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a[0] * a[0])).sqrt())
    };
    for j in first..half {
        a[j] = m[j] / fac;
    }
    a
}

fn p_value(w: f64, n: usize) -> f64 {
    if w >= 1.0 {
        return 1.0;
    }
    let nf = n as f64;
    if n == 3 {
        return ((6.0 / PI) * (w.sqrt().asin() - PI / 3.0)).clamp(0.0, 1.0);
    }
    let w1 = (1.0 - w).ln();
    let (y, m, s) = if n <= 11 {
        let gamma = poly(&G, nf);
        if w1 >= gamma {
            return 0.0;
        }
        (-(gamma - w1).ln(), poly(&C3, nf), poly(&C4, nf).exp())
    } else {
        let x = nf.ln();
        (w1, poly(&C5, x), poly(&C6, x).exp())
    };
    normal_sf((y - m) / s)
}

/// Shapiro-Wilk W with Royston's approximation, for 3 to 50 values.
pub fn normality_screen(values: &[f64]) -> Result<TestResult, StatsError> {
    let n = values.len();
    if !(3..=50).contains(&n) {
        return Err(StatsError::NormalityRange(n));
    }
    check_finite(values)?;
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let mean = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss == 0.0 || x[n - 1] - x[0] == 0.0 {
        return Err(StatsError::Constant);
    }
    let a = weights(n);
    let b: f64 = a.iter().enumerate().map(|(j, aj)| aj * (x[n - 1 - j] - x[j])).sum();
    let w = (b * b / ss).min(1.0);
    Ok(TestResult::new("shapiro_wilk", w, p_value(w, n), (EffectKind::None, 0.0), n, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(values: &[f64], w: f64, p: f64) {
        let r = normality_screen(values).unwrap();
        assert!((r.statistic - w).abs() < 1e-6, "W {} vs {w}", r.statistic);
        assert!((r.p_value - p).abs() < 1e-6 + 1e-4 * p, "p {} vs {p}", r.p_value);
    }

    #[test]
    fn reference_values() {
        // scipy.stats.shapiro
        let ramp: Vec<f64> = (1..=10).map(f64::from).collect();
        check(&ramp, 0.9701646110856056, 0.8923673061902978);
        check(&[10.0, 10.1, 9.9, 10.05, 9.95, 10.02, 9.98, 25.0], 0.42960434589750873, 1.4386250462691704e-06);
        check(&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689);
        check(&[2.1, 3.3, 1.7, 5.9, 4.4], 0.9484940702934832, 0.7264262438654729);
        check(
            &[0.87, 0.12, 0.12, 0.13, 0.14, 0.58, 0.13, 0.08, 1.27, 0.07, 0.5, 0.33],
            0.7708041361673104,
            0.004445706255107933,
        );
    }

    #[test]
    fn range_and_constant() {
        assert_eq!(normality_screen(&[1.0, 2.0]).unwrap_err(), StatsError::NormalityRange(2));
        assert_eq!(normality_screen(&[1.0; 5]).unwrap_err(), StatsError::Constant);
    }
}
