use serde::{Deserialize, Serialize};

use super::distributions::chi_square_sf;
use super::rank::{midranks, tie_term};
use super::{check_finite, EffectKind, StatsError, TestResult};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonSquaredFormula {
    /// `H / (n - 1)`
    #[default]
    HOverNMinusOne,
    /// `(H - k + 1) / (n - k)`
    Adjusted,
}

impl EpsilonSquaredFormula {
    pub fn as_str(self) -> &'static str {
        match self {
            EpsilonSquaredFormula::HOverNMinusOne => "h_over_n_minus_one",
            EpsilonSquaredFormula::Adjusted => "adjusted",
        }
    }

    fn apply(self, h: f64, n: usize, k: usize) -> f64 {
        match self {
            EpsilonSquaredFormula::HOverNMinusOne => h / (n as f64 - 1.0),
            EpsilonSquaredFormula::Adjusted => {
                if n == k {
                    0.0
                } else {
                    (h - k as f64 + 1.0) / (n - k) as f64
                }
            }
        }
    }
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<TestResult, StatsError> {
    kruskal_wallis_with(groups, EpsilonSquaredFormula::default())
}

/// Tie-corrected H with a chi-square p-value on `k - 1` degrees of freedom.
pub fn kruskal_wallis_with(groups: &[Vec<f64>], formula: EpsilonSquaredFormula) -> Result<TestResult, StatsError> {
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
    let all: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = all.len();
    let nf = n as f64;
    let ranks = midranks(&all);
    let mut offset = 0;
    let mut acc = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        acc += r * r / g.len() as f64;
        offset += g.len();
    }
    let correction = 1.0 - tie_term(&all) / (nf * nf * nf - nf);
    let note = format!("epsilon_sq={}", formula.as_str());
    if correction <= 0.0 {
        return Ok(TestResult::new("kruskal_wallis", 0.0, 1.0, (EffectKind::EpsilonSq, 0.0), n, false)
            .with_note(format!("{note}; all observations identical")));
    }
    let h = ((12.0 / (nf * (nf + 1.0))) * acc - 3.0 * (nf + 1.0)) / correction;
    let h = h.max(0.0);
    let p = chi_square_sf(h, (k - 1) as f64)?;
    let eps = formula.apply(h, n, k);
    Ok(TestResult::new("kruskal_wallis", h, p, (EffectKind::EpsilonSq, eps), n, false).with_note(note))
}
