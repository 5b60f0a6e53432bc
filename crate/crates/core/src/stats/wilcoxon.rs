use serde::{Deserialize, Serialize};

use super::distributions::normal_two_sided;
use super::rank::{midranks, snap, tie_term};
use super::{EffectKind, PairedSample, StatsError, TestResult, WILCOXON_EXACT_MAX_N};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieHandling {
    /// Rank the raw differences and read the exact p-value off the untied
    /// null distribution at `floor(W)`, as standard tables do.
    #[default]
    Standard,
    /// Snap differences to a 1e-10 grid first and build the exact null over
    /// the observed midranks.
    Midrank,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonOptions {
    /// Exact enumeration is used up to this many nonzero differences.
    pub exact_max_n: usize,
    /// Shrink `|W - mean|` by one half in the normal approximation.
    pub continuity: bool,
    pub ties: TieHandling,
}

impl Default for WilcoxonOptions {
    fn default() -> Self {
        Self { exact_max_n: WILCOXON_EXACT_MAX_N, continuity: false, ties: TieHandling::Standard }
    }
}

pub fn wilcoxon_signed_rank(sample: &PairedSample) -> Result<TestResult, StatsError> {
    wilcoxon_signed_rank_with(sample, &WilcoxonOptions::default())
}

/// Two-sided signed-rank test on `x - y`. Zero differences are dropped.
///
/// `statistic` is `W = min(T+, T-)` over midranks of `|x - y|`. The effect is `r = Z / sqrt(n)` with `Z` from the
/// untied normal form of `W`, so it is never positive; the note records
/// which side dominated.
pub fn wilcoxon_signed_rank_with(sample: &PairedSample, opts: &WilcoxonOptions) -> Result<TestResult, StatsError> {
    let diffs: Vec<f64> = sample
        .differences()
        .into_iter()
        .map(|d| if opts.ties == TieHandling::Midrank { snap(d) } else { d })
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Err(StatsError::TooFewDifferences { needed: 1, got: 0 });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let t_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let total = (n * (n + 1)) as f64 / 2.0;
    let t_minus = total - t_plus;
    let w = t_plus.min(t_minus);

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var_untied = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;

    let exact = n <= opts.exact_max_n;
    let p = if exact && opts.ties == TieHandling::Standard {
        let counts = signed_rank_null_counts(n);
        let below: u64 = counts[..=(w.floor() as usize).min(counts.len() - 1)].iter().sum();
        below as f64 / 2f64.powi(n as i32)
    } else if exact {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        exact_lower_tail(&doubled, (2.0 * w).round() as usize)
    } else {
        let var = var_untied - tie_term(&abs) / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let mut d = w - mean;
            if opts.continuity {
                d = (d.abs() - 0.5).max(0.0) * d.signum();
            }
            normal_two_sided(d / var.sqrt()) / 2.0
        }
    };
    let p = (2.0 * p).min(1.0);

    let z = (w - mean) / var_untied.sqrt();
    let r = z / nf.sqrt();
    let direction = if t_plus > t_minus {
        "x>y"
    } else if t_plus < t_minus {
        "x<y"
    } else {
        "x=y"
    };
    Ok(TestResult::new("wilcoxon_signed_rank", w, p, (EffectKind::R, r), n, exact).with_note(direction))
}

/// `P(T <= w)` where `T` is the sum of a uniformly random subset of `ranks`.
fn exact_lower_tail(ranks: &[usize], w: usize) -> f64 {
    let max: usize = ranks.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in ranks {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let below: u64 = counts[..=w.min(max)].iter().sum();
    below as f64 / 2f64.powi(ranks.len() as i32)
}

/// Null frequencies of the untied statistic `T+` for `n` pairs, indexed by `T+`.
pub fn signed_rank_null_counts(n: usize) -> Vec<u64> {
    let max = n * (n + 1) / 2;
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    for k in 1..=n {
        for s in (0..=max - k).rev() {
            if counts[s] > 0 {
                counts[s + k] += counts[s];
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(x: &[f64], y: &[f64]) -> PairedSample {
        PairedSample::from_vectors(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn all_positive_ten() {
        let x: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let y = vec![0.0; 10];
        let r = wilcoxon_signed_rank(&sample(&x, &y)).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 2.0 / 1024.0).abs() < 1e-15);
        assert!((r.effect_size + 0.886_405_7).abs() < 1e-6);
        assert!(r.exact);
        assert_eq!(r.note, "x>y");
    }

    #[test]
    fn null_counts_sum_to_power_of_two() {
        for n in 1..=15 {
            let c = signed_rank_null_counts(n);
            assert_eq!(c.iter().sum::<u64>(), 1u64 << n);
            for t in 0..c.len() {
                assert_eq!(c[t], c[c.len() - 1 - t]);
            }
        }
    }

    #[test]
    fn zeros_dropped_and_all_zero_rejected() {
        let r = wilcoxon_signed_rank(&sample(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0])).unwrap();
        assert_eq!(r.n_effective, 2);
        assert!(wilcoxon_signed_rank(&sample(&[1.0, 2.0], &[1.0, 2.0])).is_err());
    }

    #[test]
    fn normal_approximation_reference() {
        // scipy.stats.wilcoxon(method="approx")
        let d: Vec<f64> = (1..=30).map(|i| if (i - 1) % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let s = sample(&d, &vec![0.0; 30]);
        let plain = wilcoxon_signed_rank(&s).unwrap();
        assert!(!plain.exact);
        assert_eq!(plain.statistic, 145.0);
        assert!((plain.p_value - 0.07190333008390941).abs() < 1e-10);
        let cc = wilcoxon_signed_rank_with(&s, &WilcoxonOptions { continuity: true, ..Default::default() }).unwrap();
        assert!((cc.p_value - 0.07354309334531801).abs() < 1e-10);
    }

    #[test]
    fn exact_with_ties_uses_midranks() {
        // |d| = 1, 1, 2: doubled ranks 3, 3, 6; T- = 1.5 -> P(T2 <= 3) = 3/8
        let opts = WilcoxonOptions { ties: TieHandling::Midrank, ..Default::default() };
        let r = wilcoxon_signed_rank_with(&sample(&[1.0, -1.0, 2.0], &[0.0, 0.0, 0.0]), &opts).unwrap();
        assert_eq!(r.statistic, 1.5);
        assert!((r.p_value - 0.75).abs() < 1e-15);
    }

    #[test]
    fn standard_ties_read_untied_table() {
        // W = 1.5 -> P(T <= 1) = 2/8 for n = 3
        let r = wilcoxon_signed_rank(&sample(&[1.0, -1.0, 2.0], &[0.0, 0.0, 0.0])).unwrap();
        assert_eq!(r.statistic, 1.5);
        assert!((r.p_value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn float_noise_breaks_ties_unless_snapped() {
        // 0.17 - 0.20 and 0.33 - 0.36 differ in the last bits
        let x = [0.17, 0.33, 0.58, 0.36, 0.79, 0.32, 0.28, 1.20, 0.27, 1.75];
        let y = [0.20, 0.36, 0.06, 0.28, 0.35, 0.11, 0.25, 0.28, 0.22, 0.08];
        let raw = wilcoxon_signed_rank(&sample(&x, &y)).unwrap();
        assert_eq!(raw.statistic, 3.0);
        assert!((raw.p_value - 10.0 / 1024.0).abs() < 1e-15);
        let opts = WilcoxonOptions { ties: TieHandling::Midrank, ..Default::default() };
        assert_eq!(wilcoxon_signed_rank_with(&sample(&x, &y), &opts).unwrap().statistic, 4.0);
    }
}
