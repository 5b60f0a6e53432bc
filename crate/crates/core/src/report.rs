//! Table assembly: metric tables and test results laid out as wide
//! language-column reports, rendered as CSV (full precision) or Markdown.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{format_value, parse_value, MetricError, MetricKind, MetricTable};
use crate::prompts::{Axis, LikertSummary, AUDITED_LANGUAGES};
use crate::stats::LabeledResult;

pub const HIGH_RESOURCE: [&str; 3] = ["en", "es", "fr"];
pub const LOW_RESOURCE: [&str; 3] = ["pt", "hi", "xh"];
pub const GENDER_NEUTRAL: [&str; 3] = ["tr", "fa", "fi"];
pub const GENDERED: [&str; 3] = ["sl", "es", "fr"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing cell {0}")]
    MissingCell(String),
    #[error("language {0:?} is not one of the audited codes")]
    UnknownLanguage(String),
    #[error("report spec: {0}")]
    InvalidSpec(String),
    #[error("report csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    EnglishBaseline,
    GenderSkew,
    GenderKl,
    RaceSkew,
    HarmRate,
    Likert,
    StatTests,
}

impl TableKind {
    pub const ALL: [TableKind; 7] = [
        TableKind::EnglishBaseline,
        TableKind::GenderSkew,
        TableKind::GenderKl,
        TableKind::RaceSkew,
        TableKind::HarmRate,
        TableKind::Likert,
        TableKind::StatTests,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TableKind::EnglishBaseline => "english_baseline",
            TableKind::GenderSkew => "gender_skew",
            TableKind::GenderKl => "gender_kl",
            TableKind::RaceSkew => "race_skew",
            TableKind::HarmRate => "harm_rate",
            TableKind::Likert => "likert",
            TableKind::StatTests => "stat_tests",
        }
    }

    /// Metric shown in a per-axis wide table, unless the spec overrides it.
    pub fn default_metric(self) -> Option<MetricKind> {
        match self {
            TableKind::GenderSkew => Some(MetricKind::GenderSkewMax),
            TableKind::GenderKl => Some(MetricKind::Skl),
            TableKind::RaceSkew => Some(MetricKind::RaceSkewMax),
            _ => None,
        }
    }
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TableKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TableKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown table kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub table_kind: TableKind,
    #[serde(default)]
    pub datasets: Vec<String>,
    pub languages: Vec<String>,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub format: ReportFormat,
    /// Replaces the table kind's default metric (e.g. the mean-reduced skew).
    #[serde(default)]
    pub metric: Option<MetricKind>,
}

impl ReportSpec {
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.languages.is_empty() {
            return Err(ReportError::InvalidSpec("no languages".into()));
        }
        for lang in &self.languages {
            if !AUDITED_LANGUAGES.contains(&lang.as_str()) {
                return Err(ReportError::UnknownLanguage(lang.clone()));
            }
        }
        let needs_grid = !matches!(self.table_kind, TableKind::Likert | TableKind::StatTests);
        if needs_grid && (self.models.is_empty() || self.datasets.is_empty()) {
            return Err(ReportError::InvalidSpec(format!("{} needs at least one model and dataset", self.table_kind)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Number(f64),
    Count(usize),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Number(v) => format_value(*v),
            Cell::Count(n) => n.to_string(),
        }
    }

    fn markdown(&self) -> String {
        match self {
            Cell::Text(s) => s.replace('|', "\\|"),
            Cell::Number(v) if v.is_infinite() => format_value(*v),
            Cell::Number(v) => format!("{v:.2}"),
            Cell::Count(n) => n.to_string(),
        }
    }
}

/// Everything a report can draw from.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub metrics: MetricTable,
    pub tests: Vec<LabeledResult>,
    pub likert: BTreeMap<String, LikertSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportDocument {
    pub table_kind: TableKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ReportDocument {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("| {} |\n", self.columns.join(" | ")));
        out.push_str(&format!("|{}\n", "---|".repeat(self.columns.len())));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::markdown).collect();
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => self.to_markdown(),
        }
    }

    /// Writes `<dir>/<table_kind>.<ext>` and returns the path.
    pub fn write_to(&self, dir: &Path, format: ReportFormat) -> Result<PathBuf, ReportError> {
        let path = dir.join(format!("{}.{}", self.table_kind, format.extension()));
        fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
        fs::write(&path, self.render(format)).map_err(|source| ReportError::Io { path: path.clone(), source })?;
        Ok(path)
    }
}

pub fn emit_table(spec: &ReportSpec, inputs: &ReportInputs) -> Result<ReportDocument, ReportError> {
    spec.validate()?;
    match spec.table_kind {
        TableKind::EnglishBaseline => english_baseline(spec, &inputs.metrics),
        TableKind::GenderSkew | TableKind::GenderKl | TableKind::RaceSkew => {
            let kind = spec.metric.or(spec.table_kind.default_metric()).expect("axis table");
            let rows: Vec<(Axis, MetricKind)> = Axis::ALL.into_iter().map(|a| (a, kind)).collect();
            wide_table(spec, &inputs.metrics, &rows)
        }
        TableKind::HarmRate => {
            let rows: Vec<(Axis, MetricKind)> =
                MetricKind::HARM.into_iter().map(|k| (k.harm_axis().expect("harm kind"), k)).collect();
            wide_table(spec, &inputs.metrics, &rows)
        }
        TableKind::Likert => likert_table(spec, &inputs.likert),
        TableKind::StatTests => Ok(stat_table(&inputs.tests)),
    }
}

fn lookup(
    metrics: &MetricTable,
    model: &str,
    dataset: &str,
    language: &str,
    axis: Axis,
    kind: MetricKind,
) -> Result<f64, ReportError> {
    metrics
        .value(model, dataset, language, axis, kind)
        .ok_or_else(|| ReportError::MissingCell(format!("{model}/{dataset}/{language}/{axis}/{kind}")))
}

/// Languages holding the row maximum, `;`-joined.
fn argmax_labels(labels: &[String], values: &[f64]) -> String {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    labels.iter().zip(values).filter(|(_, v)| **v == max).map(|(l, _)| l.as_str()).collect::<Vec<_>>().join(";")
}

fn wide_table(
    spec: &ReportSpec,
    metrics: &MetricTable,
    rows: &[(Axis, MetricKind)],
) -> Result<ReportDocument, ReportError> {
    let mut columns: Vec<String> = ["model", "dataset", "axis", "metric"].map(String::from).to_vec();
    columns.extend(spec.languages.iter().cloned());
    columns.push("axis_worst".into());
    let mut out = Vec::new();
    for model in &spec.models {
        for dataset in &spec.datasets {
            for &(axis, kind) in rows {
                let values = spec
                    .languages
                    .iter()
                    .map(|l| lookup(metrics, model, dataset, l, axis, kind))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut row = vec![
                    Cell::Text(model.clone()),
                    Cell::Text(dataset.clone()),
                    Cell::Text(axis.as_str().into()),
                    Cell::Text(kind.as_str().into()),
                ];
                row.extend(values.iter().map(|v| Cell::Number(*v)));
                row.push(Cell::Text(argmax_labels(&spec.languages, &values)));
                out.push(row);
            }
        }
    }
    Ok(ReportDocument { table_kind: spec.table_kind, columns, rows: out })
}

fn english_baseline(spec: &ReportSpec, metrics: &MetricTable) -> Result<ReportDocument, ReportError> {
    let lang = &spec.languages[0];
    let cols: Vec<(String, Axis, MetricKind)> = [MetricKind::GenderSkewMax, MetricKind::RaceSkewMax]
        .into_iter()
        .flat_map(|k| {
            let prefix = if k == MetricKind::GenderSkewMax { "gender" } else { "race" };
            Axis::ALL.into_iter().map(move |a| (format!("{prefix}_{}", a.short()), a, k))
        })
        .collect();
    let mut columns: Vec<String> = ["dataset", "model", "language"].map(String::from).to_vec();
    columns.extend(cols.iter().map(|c| c.0.clone()));
    columns.push("axis_worst".into());
    let mut out = Vec::new();
    for dataset in &spec.datasets {
        let block = spec
            .models
            .iter()
            .map(|m| {
                cols.iter().map(|(_, a, k)| lookup(metrics, m, dataset, lang, *a, *k)).collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let col_max: Vec<f64> =
            (0..cols.len()).map(|j| block.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
        for (model, values) in spec.models.iter().zip(&block) {
            let worst: Vec<&str> = cols
                .iter()
                .zip(values)
                .zip(&col_max)
                .filter(|((_, v), m)| *v == *m)
                .map(|((c, _), _)| c.0.as_str())
                .collect();
            let mut row = vec![Cell::Text(dataset.clone()), Cell::Text(model.clone()), Cell::Text(lang.clone())];
            row.extend(values.iter().map(|v| Cell::Number(*v)));
            row.push(Cell::Text(worst.join(";")));
            out.push(row);
        }
    }
    Ok(ReportDocument { table_kind: TableKind::EnglishBaseline, columns, rows: out })
}

fn likert_table(spec: &ReportSpec, likert: &BTreeMap<String, LikertSummary>) -> Result<ReportDocument, ReportError> {
    let columns = ["language", "n", "mean", "sd", "pct_ge4", "pct_2", "pct_3", "pct_4_5"].map(String::from).to_vec();
    let mut rows = Vec::new();
    for lang in &spec.languages {
        let s = likert.get(lang).ok_or_else(|| ReportError::MissingCell(format!("likert/{lang}")))?;
        rows.push(vec![
            Cell::Text(lang.clone()),
            Cell::Count(s.n),
            Cell::Number(s.mean),
            Cell::Number(s.sd),
            Cell::Number(s.pct_ge4),
            Cell::Number(s.band_pct.two),
            Cell::Number(s.band_pct.three),
            Cell::Number(s.band_pct.four_five),
        ]);
    }
    Ok(ReportDocument { table_kind: TableKind::Likert, columns, rows })
}

fn stat_table(tests: &[LabeledResult]) -> ReportDocument {
    let columns = [
        "dataset",
        "axis",
        "metric",
        "comparison",
        "method",
        "n",
        "statistic",
        "p_value",
        "effect_kind",
        "effect_size",
        "exact",
        "note",
    ]
    .map(String::from)
    .to_vec();
    let rows = tests
        .iter()
        .map(|t| {
            let r = &t.result;
            vec![
                Cell::Text(t.dataset.clone()),
                Cell::Text(t.axis.clone()),
                Cell::Text(t.metric.clone()),
                Cell::Text(t.comparison.clone()),
                Cell::Text(r.method.clone()),
                Cell::Count(r.n_effective),
                Cell::Number(r.statistic),
                Cell::Number(r.p_value),
                Cell::Text(r.effect_kind.as_str().into()),
                Cell::Number(r.effect_size),
                Cell::Text(r.exact.to_string()),
                Cell::Text(r.note.clone()),
            ]
        })
        .collect();
    ReportDocument { table_kind: TableKind::StatTests, columns, rows }
}

/// Parses a wide per-axis CSV (as written by [`emit_table`]) back into metric values.
pub fn parse_wide_csv(text: &str, mode: &str) -> Result<MetricTable, ReportError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let err = |e: csv::Error| ReportError::Csv(e.to_string());
    let header: Vec<String> = rdr.headers().map_err(err)?.iter().map(String::from).collect();
    if header.len() < 6
        || header[..4] != ["model", "dataset", "axis", "metric"]
        || header.last().map(String::as_str) != Some("axis_worst")
    {
        return Err(ReportError::Csv("not a wide metric table".into()));
    }
    let langs = &header[4..header.len() - 1];
    let mut table = MetricTable::new();
    for rec in rdr.records() {
        let rec = rec.map_err(err)?;
        let axis = Axis::from_str(&rec[2]).map_err(|e| ReportError::Csv(e.to_string()))?;
        let kind = MetricKind::from_str(&rec[3]).map_err(ReportError::Csv)?;
        for (j, lang) in langs.iter().enumerate() {
            let cell = &rec[4 + j];
            let v = parse_value(cell).ok_or_else(|| ReportError::Csv(format!("bad number {cell:?}")))?;
            table.insert_value(crate::metrics::MetricKey::new(&rec[0], &rec[1], lang, axis, kind), v, mode)?;
        }
    }
    Ok(table)
}

/// Mean of one metric over a language group. Summation runs in sorted
/// language order so the result does not depend on how the group is listed.
pub fn aggregate_language_group(
    metrics: &MetricTable,
    model: &str,
    dataset: &str,
    axis: Axis,
    kind: MetricKind,
    group: &[&str],
) -> Result<f64, ReportError> {
    if group.is_empty() {
        return Err(ReportError::InvalidSpec("empty language group".into()));
    }
    let mut langs = group.to_vec();
    langs.sort_unstable();
    let mut sum = 0.0;
    for lang in &langs {
        sum += lookup(metrics, model, dataset, lang, axis, kind)?;
    }
    Ok(sum / langs.len() as f64)
}
