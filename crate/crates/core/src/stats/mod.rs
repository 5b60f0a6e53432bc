//! Hypothesis tests and effect sizes for language-level comparisons.
//!
//! Small samples get exact null distributions (signed-rank, rank-sum, sign
//! test); larger ones fall back to normal approximations with tie corrections.

mod correction;
pub mod distributions;
mod kruskal;
mod levene;
mod mann_whitney;
mod rank;
mod shapiro;
mod sign;
mod ttest;
mod wilcoxon;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use correction::{benjamini_hochberg, holm};
pub use kruskal::{kruskal_wallis, kruskal_wallis_with, EpsilonSquaredFormula};
pub use levene::levene_test;
pub use mann_whitney::{a12, mann_whitney_u, mann_whitney_u_with, MannWhitneyOptions};
pub use rank::midranks;
pub use shapiro::normality_screen;
pub use sign::sign_test;
pub use ttest::t_test_independent;
pub use wilcoxon::{
    signed_rank_null_counts, wilcoxon_signed_rank, wilcoxon_signed_rank_with, TieHandling, WilcoxonOptions,
};

/// Largest nonzero-difference count for exact signed-rank enumeration.
pub const WILCOXON_EXACT_MAX_N: usize = 25;
/// Largest combined sample size for exact rank-sum enumeration.
pub const MANN_WHITNEY_EXACT_MAX_TOTAL: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} nonzero differences, got {got}")]
    TooFewDifferences { needed: usize, got: usize },
    #[error("x and y differ in length ({x} vs {y}) or do not match {labels} labels")]
    LengthMismatch { x: usize, y: usize, labels: usize },
    #[error("non-finite input value")]
    NonFinite,
    #[error("sample {which} has {got} values, need at least {needed}")]
    SampleTooSmall { which: String, got: usize, needed: usize },
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("pooled variance is zero but means differ ({mean_a} vs {mean_b})")]
    DegenerateVariance { mean_a: f64, mean_b: f64 },
    #[error("normality screen needs 3..=50 values, got {0}")]
    NormalityRange(usize),
    #[error("constant input")]
    Constant,
    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),
    #[error("test result csv: {0}")]
    Csv(String),
}

/// Paired measurements per unit (language).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    labels: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSample {
    pub fn new(labels: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        if x.len() != y.len() || x.len() != labels.len() {
            return Err(StatsError::LengthMismatch { x: x.len(), y: y.len(), labels: labels.len() });
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(Self { labels, x, y })
    }

    /// Unlabelled pairs; units are numbered from 0.
    pub fn from_vectors(x: Vec<f64>, y: Vec<f64>) -> Result<Self, StatsError> {
        let labels = (0..x.len()).map(|i| i.to_string()).collect();
        Self::new(labels, x, y)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn differences(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    /// `Z / sqrt(n)`
    R,
    /// Cohen's d with pooled SD.
    D,
    RankBiserial,
    A12,
    EpsilonSq,
    /// Share of positive differences.
    ProportionPositive,
    None,
}

impl EffectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectKind::R => "r",
            EffectKind::D => "d",
            EffectKind::RankBiserial => "rank_biserial",
            EffectKind::A12 => "A12",
            EffectKind::EpsilonSq => "epsilon_sq",
            EffectKind::ProportionPositive => "proportion_positive",
            EffectKind::None => "none",
        }
    }
}

impl fmt::Display for EffectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EffectKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            EffectKind::R,
            EffectKind::D,
            EffectKind::RankBiserial,
            EffectKind::A12,
            EffectKind::EpsilonSq,
            EffectKind::ProportionPositive,
            EffectKind::None,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| format!("unknown effect kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: String,
    pub statistic: f64,
    pub p_value: f64,
    pub effect_size: f64,
    pub effect_kind: EffectKind,
    pub n_effective: usize,
    pub exact: bool,
    /// A second effect size where the method reports two (rank-biserial for Mann-Whitney).
    pub secondary_effect: Option<(EffectKind, f64)>,
    /// Free-form flags: direction, degeneracy, formula labels.
    pub note: String,
}

impl TestResult {
    pub(crate) fn new(
        method: &str,
        statistic: f64,
        p_value: f64,
        effect: (EffectKind, f64),
        n: usize,
        exact: bool,
    ) -> Self {
        Self {
            method: method.into(),
            statistic,
            p_value: p_value.clamp(0.0, 1.0),
            effect_size: effect.1,
            effect_kind: effect.0,
            n_effective: n,
            exact,
            secondary_effect: None,
            note: String::new(),
        }
    }

    pub(crate) fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

pub const TEST_RESULT_COLUMNS: [&str; 10] = [
    "method",
    "statistic",
    "p_value",
    "effect_size",
    "effect_kind",
    "n_effective",
    "exact",
    "secondary_effect_kind",
    "secondary_effect",
    "note",
];

impl TestResult {
    /// Cells in [`TEST_RESULT_COLUMNS`] order, numbers at full precision.
    pub fn csv_fields(&self) -> Vec<String> {
        let (sk, sv) = match self.secondary_effect {
            Some((k, v)) => (k.as_str().to_string(), crate::metrics::format_value(v)),
            None => (String::new(), String::new()),
        };
        vec![
            self.method.clone(),
            crate::metrics::format_value(self.statistic),
            crate::metrics::format_value(self.p_value),
            crate::metrics::format_value(self.effect_size),
            self.effect_kind.as_str().to_string(),
            self.n_effective.to_string(),
            self.exact.to_string(),
            sk,
            sv,
            self.note.clone(),
        ]
    }

    pub fn from_csv_fields(fields: &[&str]) -> Result<Self, StatsError> {
        if fields.len() < TEST_RESULT_COLUMNS.len() {
            return Err(StatsError::Csv(format!("expected {} fields", TEST_RESULT_COLUMNS.len())));
        }
        let num = |s: &str| crate::metrics::parse_value(s).ok_or_else(|| StatsError::Csv(format!("bad number {s:?}")));
        let secondary = if fields[7].is_empty() {
            None
        } else {
            Some((EffectKind::from_str(fields[7]).map_err(StatsError::Csv)?, num(fields[8])?))
        };
        Ok(Self {
            method: fields[0].to_string(),
            statistic: num(fields[1])?,
            p_value: num(fields[2])?,
            effect_size: num(fields[3])?,
            effect_kind: EffectKind::from_str(fields[4]).map_err(StatsError::Csv)?,
            n_effective: fields[5].parse().map_err(|_| StatsError::Csv(format!("bad n {:?}", fields[5])))?,
            exact: fields[6] == "true",
            secondary_effect: secondary,
            note: fields[9].to_string(),
        })
    }
}

/// A test result labelled with what was compared.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledResult {
    pub dataset: String,
    pub axis: String,
    pub metric: String,
    pub comparison: String,
    pub result: TestResult,
}

pub fn write_results_csv(writer: impl Write, results: &[LabeledResult]) -> Result<(), StatsError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| StatsError::Csv(e.to_string());
    let mut header = vec!["dataset", "axis", "metric", "comparison"];
    header.extend(TEST_RESULT_COLUMNS);
    w.write_record(&header).map_err(err)?;
    for r in results {
        let mut row = vec![r.dataset.clone(), r.axis.clone(), r.metric.clone(), r.comparison.clone()];
        row.extend(r.result.csv_fields());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| StatsError::Csv(e.to_string()))
}

pub fn read_results_csv(reader: impl Read) -> Result<Vec<LabeledResult>, StatsError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| StatsError::Csv(e.to_string()))?;
        let fields: Vec<&str> = rec.iter().collect();
        if fields.len() < 4 + TEST_RESULT_COLUMNS.len() {
            return Err(StatsError::Csv("short row".into()));
        }
        out.push(LabeledResult {
            dataset: fields[0].into(),
            axis: fields[1].into(),
            metric: fields[2].into(),
            comparison: fields[3].into(),
            result: TestResult::from_csv_fields(&fields[4..])?,
        });
    }
    Ok(out)
}

pub(crate) fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
