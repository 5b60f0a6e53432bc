use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use fairlens_core::corpus::{
    balanced_subset, load_embeddings, load_manifest, validate_alignment, AlignedCorpus, CheckpointMeta, EmbeddingMatrix,
};
use fairlens_core::metrics::{
    axis_skew, gender_kl, harm_breakdown, negative_rate, Attribute, CaptionReduction, MetricEntry, MetricKey,
    MetricKind, MetricTable,
};
use fairlens_core::probe::{group_association, score_matrix, CandidateSet, ScoreAggregationMode};
use fairlens_core::prompts::{load_inventory, Axis, PromptInventory};
use fairlens_core::report::{emit_table, ReportFormat, ReportInputs, ReportSpec, TableKind};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::AuditConfig;
use crate::hashing::{sha256_hex, FileHash};
use crate::CliError;

/// Mode label for metrics derived from top-1 decisions rather than association scores.
pub const TOP1_MODE: &str = "top1";

/// Wide tables written next to `metrics.csv`.
pub const AUDIT_TABLES: [TableKind; 4] =
    [TableKind::GenderSkew, TableKind::GenderKl, TableKind::RaceSkew, TableKind::HarmRate];

struct LoadedModel {
    meta: CheckpointMeta,
    /// One corpus per configured dataset, same order.
    corpora: Vec<AlignedCorpus>,
    /// Caption embeddings and manifest per configured language, same order.
    captions: Vec<(EmbeddingMatrix, PromptInventory)>,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    config: &'a AuditConfig,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

#[derive(Debug, Clone)]
pub struct AuditOutcome {
    pub metrics: MetricTable,
    pub written: Vec<PathBuf>,
}

fn data<E: std::fmt::Display>(ctx: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{ctx}: {e}"))
}

fn same_keys(a: &PromptInventory, b: &PromptInventory) -> bool {
    let keys = |inv: &PromptInventory| {
        inv.templates().iter().map(|t| (t.axis, t.polarity, t.label_key.clone())).collect::<BTreeSet<_>>()
    };
    keys(a) == keys(b)
}

fn load_model(cfg: &AuditConfig, idx: usize, inventory: &PromptInventory) -> Result<LoadedModel, CliError> {
    let m = &cfg.models[idx];
    let text = fs::read_to_string(&m.meta).map_err(data(m.meta.display()))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(data(m.meta.display()))?;
    let mut corpora = Vec::new();
    for d in &cfg.datasets {
        let ctx = format!("{}/{}", meta.model_name, d.name);
        let schema = d.schema.resolve()?;
        let path = &m.images[&d.name];
        let matrix = load_embeddings(path).map_err(data(&ctx))?;
        meta.check_dim(&matrix).map_err(data(&ctx))?;
        let manifest = load_manifest(&d.manifest, &schema).map_err(data(&ctx))?;
        let mut corpus = validate_alignment(matrix, manifest, &schema).map_err(data(&ctx))?;
        if let Some(n) = d.balanced_per_cell {
            corpus = balanced_subset(&corpus, n, cfg.seed).map_err(data(&ctx))?;
        }
        corpora.push(corpus);
    }
    let mut captions = Vec::new();
    for lang in &cfg.languages {
        let ctx = format!("{}/{lang}", meta.model_name);
        let files = &m.captions[lang];
        let matrix = load_embeddings(&files.embeddings).map_err(data(&ctx))?;
        meta.check_dim(&matrix).map_err(data(&ctx))?;
        let manifest = load_inventory(&files.manifest).map_err(data(&ctx))?;
        if let Some(t) = manifest.templates().iter().find(|t| &t.language != lang) {
            return Err(CliError::Data(format!("{ctx}: caption {:?} is tagged {}", t.label_key, t.language)));
        }
        if matrix.rows() != manifest.len() {
            return Err(CliError::Data(format!(
                "{ctx}: {} caption embeddings for {} manifest rows",
                matrix.rows(),
                manifest.len()
            )));
        }
        if !inventory.languages().contains(lang) {
            return Err(CliError::Data(format!("{ctx}: language missing from inventory")));
        }
        if !same_keys(&manifest, &inventory.for_language(lang)) {
            return Err(CliError::Data(format!("{ctx}: caption manifest does not match the inventory")));
        }
        captions.push((matrix, manifest));
    }
    Ok(LoadedModel { meta, corpora, captions })
}

fn put(table: &mut MetricTable, key: MetricKey, value: f64, mode: &str, excluded: usize) -> Result<(), CliError> {
    table
        .insert(key, MetricEntry { value, mode: mode.into(), infinite_pairs_excluded: excluded })
        .map_err(|e| CliError::Internal(e.to_string()))
}

/// All metrics of one (model, dataset, language) cell.
fn audit_cell(
    cfg: &AuditConfig,
    model: &LoadedModel,
    dataset: &str,
    corpus: &AlignedCorpus,
    lang: &str,
    captions: &(EmbeddingMatrix, PromptInventory),
    out: &mut MetricTable,
) -> Result<(), CliError> {
    let name = &model.meta.model_name;
    let ctx = format!("{name}/{dataset}/{lang}");
    let (matrix, inv) = captions;
    let scores = score_matrix(corpus.matrix(), matrix).map_err(data(&ctx))?;
    let mode = cfg.mode.as_str();
    let key = |axis: Axis, kind: MetricKind| MetricKey::new(name, dataset, lang, axis, kind);
    let genders = corpus.gender_groups();
    for axis in Axis::ALL {
        let cands = CandidateSet::for_axis(inv, lang, axis).map_err(data(format!("{ctx}/{axis}")))?;
        let by_gender = group_association(&scores, genders, &cands, cfg.mode, &model.meta).map_err(data(&ctx))?;
        let by_race =
            group_association(&scores, corpus.race_groups(), &cands, cfg.mode, &model.meta).map_err(data(&ctx))?;
        for (assoc, attr, max_kind, mean_kind) in [
            (&by_gender, Attribute::Gender, MetricKind::GenderSkewMax, MetricKind::GenderSkewMean),
            (&by_race, Attribute::Race, MetricKind::RaceSkewMax, MetricKind::RaceSkewMean),
        ] {
            for (reduction, kind) in [(CaptionReduction::Max, max_kind), (CaptionReduction::Mean, mean_kind)] {
                let s =
                    axis_skew(assoc, axis, attr, cfg.skew_epsilon, reduction).map_err(data(format!("{ctx}/{axis}")))?;
                put(out, key(axis, kind), s.value, mode, s.infinite_pairs_excluded)?;
            }
        }
        let rate = |g: &str| negative_rate(corpus, &scores, &cands, axis, g).map_err(data(format!("{ctx}/{axis}")));
        let p_f = rate(&genders[0].name)?;
        let p_m = rate(&genders[1].name)?;
        let kl = gender_kl(p_f, p_m, cfg.kl_epsilon);
        put(out, key(axis, MetricKind::NegativeRateF), p_f, TOP1_MODE, 0)?;
        put(out, key(axis, MetricKind::NegativeRateM), p_m, TOP1_MODE, 0)?;
        put(out, key(axis, MetricKind::KlFm), kl.kl_fm, TOP1_MODE, 0)?;
        put(out, key(axis, MetricKind::KlMf), kl.kl_mf, TOP1_MODE, 0)?;
        put(out, key(axis, MetricKind::Skl), kl.skl, TOP1_MODE, 0)?;
    }
    let harm = harm_breakdown(corpus, &scores, inv, lang).map_err(data(&ctx))?;
    for (kind, v) in [
        (MetricKind::PctNa, harm.pct_na),
        (MetricKind::PctNc, harm.pct_nc),
        (MetricKind::PctC, harm.pct_c),
        (MetricKind::PctNh, harm.pct_nh),
    ] {
        put(out, key(kind.harm_axis().expect("harm kind"), kind), v, TOP1_MODE, 0)?;
    }
    Ok(())
}

/// Loads and validates every input, computes all metrics, then writes the
/// bundle. Nothing is written unless every stage succeeds.
pub fn run_audit(cfg: &AuditConfig, config_bytes: &[u8]) -> Result<AuditOutcome, CliError> {
    cfg.validate()?;
    let inventory = load_inventory(&cfg.inventory).map_err(data(cfg.inventory.display()))?;
    let models = (0..cfg.models.len()).map(|i| load_model(cfg, i, &inventory)).collect::<Result<Vec<_>, _>>()?;
    let mut names = BTreeSet::new();
    for m in &models {
        if !names.insert(m.meta.model_name.as_str()) {
            return Err(CliError::Config(format!("model {:?} configured twice", m.meta.model_name)));
        }
    }

    let jobs: Vec<(usize, usize)> =
        (0..models.len()).flat_map(|m| (0..cfg.languages.len()).map(move |l| (m, l))).collect();
    let parts = jobs
        .par_iter()
        .map(|&(m, l)| {
            let model = &models[m];
            let mut table = MetricTable::new();
            for (d, corpus) in cfg.datasets.iter().zip(&model.corpora) {
                audit_cell(cfg, model, &d.name, corpus, &cfg.languages[l], &model.captions[l], &mut table)?;
            }
            Ok(table)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut metrics = MetricTable::new();
    for part in parts {
        metrics.merge(part).map_err(|e| CliError::Internal(e.to_string()))?;
    }

    let model_names: Vec<String> = models.iter().map(|m| m.meta.model_name.clone()).collect();
    let written = write_bundle(cfg, config_bytes, &metrics, &model_names)?;
    Ok(AuditOutcome { metrics, written })
}

fn write_bundle(
    cfg: &AuditConfig,
    config_bytes: &[u8],
    metrics: &MetricTable,
    models: &[String],
) -> Result<Vec<PathBuf>, CliError> {
    let inputs = ReportInputs { metrics: metrics.clone(), ..Default::default() };
    let mut docs = Vec::new();
    for kind in AUDIT_TABLES {
        let spec = ReportSpec {
            table_kind: kind,
            datasets: cfg.datasets.iter().map(|d| d.name.clone()).collect(),
            languages: cfg.languages.clone(),
            models: models.to_vec(),
            format: ReportFormat::Csv,
            metric: None,
        };
        docs.push(emit_table(&spec, &inputs).map_err(|e| CliError::Internal(e.to_string()))?);
    }

    let out = &cfg.output_dir;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| CliError::Data(format!("{}: {e}", p.display()))
    };
    fs::create_dir_all(out).map_err(io(out))?;
    let mut written = Vec::new();
    let metrics_path = out.join("metrics.csv");
    fs::write(&metrics_path, metrics.to_csv_string()).map_err(io(&metrics_path))?;
    written.push(metrics_path);
    for doc in &docs {
        for format in [ReportFormat::Csv, ReportFormat::Markdown] {
            written.push(doc.write_to(out, format).map_err(|e| CliError::Data(e.to_string()))?);
        }
    }

    let manifest = RunManifest {
        tool: "fairlens",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: sha256_hex(config_bytes),
        config: cfg,
        inputs: cfg.input_paths().iter().map(|p| FileHash::of(p, None)).collect::<Result<_, _>>()?,
        outputs: written.iter().map(|p| FileHash::of(p, Some(out))).collect::<Result<_, _>>()?,
    };
    let manifest_path = out.join("run_manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&manifest_path, json + "\n").map_err(io(&manifest_path))?;
    written.push(manifest_path);
    Ok(written)
}

/// Mode labels that may appear in an audit's `metrics.csv`.
pub fn known_modes() -> [&'static str; 3] {
    [ScoreAggregationMode::RawCosineMean.as_str(), ScoreAggregationMode::SoftmaxProbabilityMean.as_str(), TOP1_MODE]
}
