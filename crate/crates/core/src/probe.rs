//! Zero-shot scoring: cosine similarity matrices, temperature-scaled softmax,
//! group-conditioned association scores and top-1 classification.
//!
//! Every reduction runs in a fixed chunk order, so results are bit-identical
//! regardless of the size of the rayon pool they execute in.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CheckpointMeta, EmbeddingMatrix, GroupIndex};
use crate::prompts::{Axis, Polarity, PromptInventory};

/// Rows per partial sum in group reductions.
const REDUCE_CHUNK: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("zero-norm {side} vector at row {row}")]
    ZeroNorm { side: &'static str, row: usize },
    #[error("group {0:?} has no images")]
    EmptyGroup(String),
    #[error("candidate caption set is empty")]
    EmptyCandidates,
    #[error("caption column {column} out of range ({captions} captions)")]
    ColumnOutOfRange { column: usize, captions: usize },
}

fn dot_and_norms(v: &[f32], u: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut vv = 0.0f64;
    let mut uu = 0.0f64;
    for (&a, &b) in v.iter().zip(u) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        vv += a * a;
        uu += b * b;
    }
    (dot, vv.sqrt(), uu.sqrt())
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>().sqrt()
}

pub fn cosine_sim(v: &[f32], u: &[f32]) -> Result<f64, ProbeError> {
    if v.len() != u.len() {
        return Err(ProbeError::DimMismatch { left: v.len(), right: u.len() });
    }
    let (dot, nv, nu) = dot_and_norms(v, u);
    if nv == 0.0 {
        return Err(ProbeError::ZeroNorm { side: "first", row: 0 });
    }
    if nu == 0.0 {
        return Err(ProbeError::ZeroNorm { side: "second", row: 0 });
    }
    Ok((dot / (nv * nu)).clamp(-1.0, 1.0))
}

/// Image × caption cosine similarities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    images: usize,
    captions: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_values(images: usize, captions: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), images * captions, "score matrix shape");
        assert!(values.iter().all(|v| v.is_finite()), "score matrix must be finite");
        Self { images, captions, values }
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn captions(&self) -> usize {
        self.captions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, image: usize, caption: usize) -> f64 {
        self.values[image * self.captions + caption]
    }

    pub fn row(&self, image: usize) -> &[f64] {
        &self.values[image * self.captions..(image + 1) * self.captions]
    }

    pub fn select_rows(&self, rows: &[usize]) -> ScoreMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.captions);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        ScoreMatrix { images: rows.len(), captions: self.captions, values }
    }
}

pub fn score_matrix(images: &EmbeddingMatrix, captions: &EmbeddingMatrix) -> Result<ScoreMatrix, ProbeError> {
    if images.dim() != captions.dim() {
        return Err(ProbeError::DimMismatch { left: images.dim(), right: captions.dim() });
    }
    let caption_norms: Vec<f64> = (0..captions.rows()).map(|j| norm(captions.row(j))).collect();
    if let Some(row) = caption_norms.iter().position(|&n| n == 0.0) {
        return Err(ProbeError::ZeroNorm { side: "caption", row });
    }
    let image_norms: Vec<f64> = (0..images.rows()).map(|i| norm(images.row(i))).collect();
    if let Some(row) = image_norms.iter().position(|&n| n == 0.0) {
        return Err(ProbeError::ZeroNorm { side: "image", row });
    }
    let n_cap = captions.rows();
    let mut values = vec![0.0f64; images.rows() * n_cap];
    if n_cap > 0 {
        values.par_chunks_mut(n_cap).enumerate().for_each(|(i, out)| {
            let v = images.row(i);
            for (j, slot) in out.iter_mut().enumerate() {
                let u = captions.row(j);
                let dot: f64 = v.iter().zip(u).map(|(&a, &b)| a as f64 * b as f64).sum();
                *slot = (dot / (image_norms[i] * caption_norms[j])).clamp(-1.0, 1.0);
            }
        });
    }
    Ok(ScoreMatrix { images: images.rows(), captions: n_cap, values })
}

/// Softmax of `exp(log_temperature) * row`, computed with max subtraction.
pub fn scaled_probabilities(row: &[f64], log_temperature: f64) -> Vec<f64> {
    if row.is_empty() {
        return Vec::new();
    }
    let scale = log_temperature.exp();
    let logits: Vec<f64> = row.iter().map(|&s| scale * s).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// How per-image scores are turned into a group association score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreAggregationMode {
    /// Mean raw cosine over the group's images.
    RawCosineMean,
    /// Mean of per-image temperature-scaled softmax over the candidate set.
    #[default]
    SoftmaxProbabilityMean,
}

impl ScoreAggregationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RawCosineMean => "raw_cosine_mean",
            Self::SoftmaxProbabilityMean => "softmax_probability_mean",
        }
    }
}

impl std::str::FromStr for ScoreAggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw_cosine_mean" => Ok(Self::RawCosineMean),
            "softmax_probability_mean" => Ok(Self::SoftmaxProbabilityMean),
            other => Err(format!("unknown aggregation mode {other:?}")),
        }
    }
}

/// A caption column of a score matrix together with what it stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caption {
    pub column: usize,
    pub label_key: String,
    pub axis: Axis,
    pub polarity: Polarity,
}

/// Captions competing in one zero-shot decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    captions: Vec<Caption>,
}

impl CandidateSet {
    pub fn new(captions: Vec<Caption>) -> Result<Self, ProbeError> {
        if captions.is_empty() {
            return Err(ProbeError::EmptyCandidates);
        }
        Ok(Self { captions })
    }

    /// Candidates for `axis` in `language`; columns are row positions in the
    /// inventory, which must be aligned with the caption embedding store.
    pub fn for_axis(inventory: &PromptInventory, language: &str, axis: Axis) -> Result<Self, ProbeError> {
        let captions = inventory
            .positions(language, axis)
            .into_iter()
            .map(|i| {
                let t = &inventory.templates()[i];
                Caption { column: i, label_key: t.label_key.clone(), axis: t.axis, polarity: t.polarity }
            })
            .collect();
        Self::new(captions)
    }

    pub fn captions(&self) -> &[Caption] {
        &self.captions
    }

    pub fn columns(&self) -> Vec<usize> {
        self.captions.iter().map(|c| c.column).collect()
    }

    pub fn has_polarity(&self, polarity: Polarity) -> bool {
        self.captions.iter().any(|c| c.polarity == polarity)
    }

    fn check(&self, scores: &ScoreMatrix) -> Result<(), ProbeError> {
        match self.captions.iter().find(|c| c.column >= scores.captions()) {
            Some(c) => Err(ProbeError::ColumnOutOfRange { column: c.column, captions: scores.captions() }),
            None => Ok(()),
        }
    }
}

/// Association score per (group, caption).
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationTable {
    pub mode: ScoreAggregationMode,
    pub groups: Vec<String>,
    pub captions: Vec<Caption>,
    /// Row-major `groups × captions`.
    pub values: Vec<f64>,
}

impl AssociationTable {
    pub fn get(&self, group: usize, caption: usize) -> f64 {
        self.values[group * self.captions.len() + caption]
    }

    pub fn caption_position(&self, label_key: &str) -> Option<usize> {
        self.captions.iter().position(|c| c.label_key == label_key)
    }

    /// Scores of every group for one caption, in group order.
    pub fn column(&self, caption: usize) -> Vec<f64> {
        (0..self.groups.len()).map(|g| self.get(g, caption)).collect()
    }
}

/// Mean of `value(row)` over `rows`, accumulated in fixed-size chunks whose
/// partial sums are combined in chunk order.
fn ordered_mean(rows: &[usize], value: impl Fn(usize) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> =
        rows.par_chunks(REDUCE_CHUNK).map(|chunk| chunk.iter().map(|&r| value(r)).sum::<f64>()).collect();
    partials.iter().sum::<f64>() / rows.len() as f64
}

pub fn group_association(
    scores: &ScoreMatrix,
    groups: &[GroupIndex],
    candidates: &CandidateSet,
    mode: ScoreAggregationMode,
    meta: &CheckpointMeta,
) -> Result<AssociationTable, ProbeError> {
    candidates.check(scores)?;
    if let Some(g) = groups.iter().find(|g| g.rows.is_empty()) {
        return Err(ProbeError::EmptyGroup(g.name.clone()));
    }
    let columns = candidates.columns();
    let k = columns.len();
    // per-image values over the candidate set, images × k
    let per_image: Vec<f64> = match mode {
        ScoreAggregationMode::RawCosineMean => {
            (0..scores.images()).flat_map(|i| columns.iter().map(move |&c| scores.get(i, c))).collect()
        }
        ScoreAggregationMode::SoftmaxProbabilityMean => {
            let rows: Vec<Vec<f64>> = (0..scores.images())
                .into_par_iter()
                .map(|i| {
                    let sims: Vec<f64> = columns.iter().map(|&c| scores.get(i, c)).collect();
                    scaled_probabilities(&sims, meta.log_temperature)
                })
                .collect();
            rows.into_iter().flatten().collect()
        }
    };
    let mut values = Vec::with_capacity(groups.len() * k);
    for g in groups {
        for j in 0..k {
            values.push(ordered_mean(&g.rows, |r| per_image[r * k + j]));
        }
    }
    Ok(AssociationTable {
        mode,
        groups: groups.iter().map(|g| g.name.clone()).collect(),
        captions: candidates.captions().to_vec(),
        values,
    })
}

/// Winning caption column per image; ties go to the lowest column index.
pub fn top1_classify(scores: &ScoreMatrix, candidates: &[usize]) -> Result<Vec<usize>, ProbeError> {
    if candidates.is_empty() {
        return Err(ProbeError::EmptyCandidates);
    }
    if let Some(&c) = candidates.iter().find(|&&c| c >= scores.captions()) {
        return Err(ProbeError::ColumnOutOfRange { column: c, captions: scores.captions() });
    }
    Ok((0..scores.images())
        .map(|i| {
            let row = scores.row(i);
            let mut best = candidates[0];
            for &c in &candidates[1..] {
                if row[c] > row[best] || (row[c] == row[best] && c < best) {
                    best = c;
                }
            }
            best
        })
        .collect())
}
