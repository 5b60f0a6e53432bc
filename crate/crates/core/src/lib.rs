//! Bias auditing for multilingual vision-language embeddings.
//!
//! Embeddings are produced offline; this crate loads them, probes images
//! against captions zero-shot, and turns the probe results into skew,
//! divergence and harm-rate metrics plus a small battery of exact tests.

pub mod corpus;
pub mod metrics;
pub mod probe;
pub mod prompts;
pub mod report;
pub mod stats;

pub use corpus::{
    balanced_subset, load_embeddings, load_manifest, validate_alignment, write_embeddings, AlignedCorpus,
    CheckpointMeta, CorpusError, DemographicSchema, EmbeddingMatrix, GroupIndex, ImageRecord,
};
pub use metrics::{
    gender_kl, mean_pairwise_skew, pairwise_max_skew, Attribute, CaptionReduction, HarmBreakdown, KlResult,
    MetricEntry, MetricError, MetricKey, MetricKind, MetricTable,
};
pub use probe::{
    cosine_sim, group_association, score_matrix, top1_classify, AssociationTable, CandidateSet, ProbeError,
    ScoreAggregationMode, ScoreMatrix,
};
pub use prompts::{
    likert_summary, render_prompt, Axis, LikertSummary, Polarity, PromptError, PromptInventory, PromptTemplate,
    AUDITED_LANGUAGES,
};
pub use report::{
    aggregate_language_group, emit_table, ReportDocument, ReportError, ReportFormat, ReportSpec, TableKind,
};
pub use stats::{EffectKind, PairedSample, StatsError, TestResult};
