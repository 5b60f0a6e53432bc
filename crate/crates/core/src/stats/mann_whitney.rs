use super::distributions::normal_two_sided;
use super::rank::{midranks, tie_term};
use super::{check_finite, EffectKind, StatsError, TestResult, MANN_WHITNEY_EXACT_MAX_TOTAL};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitneyOptions {
    pub exact_max_total: usize,
    pub continuity: bool,
}

impl Default for MannWhitneyOptions {
    fn default() -> Self {
        Self { exact_max_total: MANN_WHITNEY_EXACT_MAX_TOTAL, continuity: true }
    }
}

/// `U_a`: pairs with `a > b`, ties counting one half.
fn u_a(a: &[f64], b: &[f64]) -> f64 {
    let mut all = a.to_vec();
    all.extend_from_slice(b);
    let ranks = midranks(&all);
    let ra: f64 = ranks[..a.len()].iter().sum();
    let na = a.len() as f64;
    ra - na * (na + 1.0) / 2.0
}

/// Vargha-Delaney `A12 = P(a > b) + P(a = b) / 2`.
pub fn a12(a: &[f64], b: &[f64]) -> f64 {
    u_a(a, b) / (a.len() * b.len()) as f64
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, StatsError> {
    mann_whitney_u_with(a, b, &MannWhitneyOptions::default())
}

/// Two-sided rank-sum test. `statistic` is `min(U_a, U_b)`; the primary
/// effect is A12 and the secondary one is the rank-biserial `2 * A12 - 1`.
pub fn mann_whitney_u_with(a: &[f64], b: &[f64], opts: &MannWhitneyOptions) -> Result<TestResult, StatsError> {
    for (which, v) in [("a", a), ("b", b)] {
        if v.is_empty() {
            return Err(StatsError::SampleTooSmall { which: which.into(), got: 0, needed: 1 });
        }
        check_finite(v)?;
    }
    let (na, nb) = (a.len(), b.len());
    let ua = u_a(a, b);
    let prod = (na * nb) as f64;
    let u = ua.min(prod - ua);
    let mut all = a.to_vec();
    all.extend_from_slice(b);
    let ties = tie_term(&all);
    let n = na + nb;

    let exact = n <= opts.exact_max_total && ties == 0.0;
    let p = if exact {
        let counts = rank_sum_null_counts(na, nb);
        let total: u64 = counts.iter().sum();
        let below: u64 = counts[..=u.round() as usize].iter().sum();
        (2.0 * below as f64 / total as f64).min(1.0)
    } else {
        let nf = n as f64;
        let var = prod / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
        if var <= 0.0 {
            1.0
        } else {
            let mut d = u - prod / 2.0;
            if opts.continuity {
                d = (d.abs() - 0.5).max(0.0) * d.signum();
            }
            normal_two_sided(d / var.sqrt())
        }
    };
    let effect = ua / prod;
    let mut r = TestResult::new("mann_whitney_u", u, p, (EffectKind::A12, effect), n, exact);
    r.secondary_effect = Some((EffectKind::RankBiserial, 2.0 * effect - 1.0));
    Ok(r)
}

/// Null frequencies of `U` for sample sizes `m`, `n`, indexed by `U`.
pub(crate) fn rank_sum_null_counts(m: usize, n: usize) -> Vec<u64> {
    // c[i][j][u] via c(i, j) = c(i-1, j) shifted by j + c(i, j-1)
    let max = m * n;
    let mut table = vec![vec![Vec::new(); n + 1]; m + 1];
    for i in 0..=m {
        for j in 0..=n {
            let mut c = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                c[0] = 1;
            } else {
                for (u, v) in table[i - 1][j].iter().enumerate() {
                    c[u + j] += v;
                }
                for (u, v) in table[i][j - 1].iter().enumerate() {
                    c[u] += v;
                }
            }
            table[i][j] = c;
        }
    }
    let out = std::mem::take(&mut table[m][n]);
    debug_assert_eq!(out.len(), max + 1);
    out
}
