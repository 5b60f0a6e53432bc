use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fairlens_core::metrics::MetricTable;
use fairlens_core::prompts::{likert_summary, read_ratings_csv};
use fairlens_core::report::{emit_table, ReportInputs, ReportSpec};
use fairlens_core::stats::read_results_csv;
use serde::{Deserialize, Serialize};

use crate::hashing::{sha256_hex, FileHash};
use crate::CliError;

/// A `report --spec` job: where inputs come from and which tables to emit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJob {
    /// Long-form metric CSV, as written by `audit`.
    #[serde(default)]
    pub metrics: Option<PathBuf>,
    /// Test-result CSVs, as written by `stats`.
    #[serde(default)]
    pub tests: Vec<PathBuf>,
    /// `language,label_key,rating` CSV.
    #[serde(default)]
    pub ratings: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub tables: Vec<ReportSpec>,
}

#[derive(Debug, Serialize)]
struct ReportManifest {
    tool: &'static str,
    version: &'static str,
    spec_sha256: String,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl ReportJob {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut job: ReportJob =
            serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        job.metrics.iter_mut().for_each(fix);
        job.tests.iter_mut().for_each(fix);
        job.ratings.iter_mut().for_each(fix);
        fix(&mut job.output_dir);
        Ok((job, bytes))
    }

    fn input_paths(&self) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = self.metrics.iter().cloned().collect();
        out.extend(self.tests.iter().cloned());
        out.extend(self.ratings.iter().cloned());
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.tables.is_empty() {
            return Err(CliError::Config("no tables requested".into()));
        }
        for t in &self.tables {
            t.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        for p in self.input_paths() {
            if !p.is_file() {
                return Err(CliError::Config(format!("missing input file {}", p.display())));
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load_inputs(job: &ReportJob) -> Result<ReportInputs, CliError> {
    let mut inputs = ReportInputs::default();
    if let Some(p) = &job.metrics {
        inputs.metrics =
            MetricTable::read_csv(read(p)?.as_slice()).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    }
    for p in &job.tests {
        inputs.tests.extend(
            read_results_csv(read(p)?.as_slice()).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        );
    }
    if let Some(p) = &job.ratings {
        inputs.likert = likert_tables(&read(p)?, p)?;
    }
    Ok(inputs)
}

pub(crate) fn likert_tables(
    bytes: &[u8],
    path: &Path,
) -> Result<BTreeMap<String, fairlens_core::prompts::LikertSummary>, CliError> {
    let ctx = |e: fairlens_core::prompts::PromptError| CliError::Data(format!("{}: {e}", path.display()));
    read_ratings_csv(bytes)
        .map_err(ctx)?
        .into_iter()
        .map(|(lang, r)| Ok((lang, likert_summary(&r).map_err(ctx)?)))
        .collect()
}

/// Renders every requested table before writing any of them.
pub fn run_report(job: &ReportJob, spec_bytes: &[u8]) -> Result<Vec<PathBuf>, CliError> {
    job.validate()?;
    let inputs = load_inputs(job)?;
    let docs = job
        .tables
        .iter()
        .map(|spec| Ok((emit_table(spec, &inputs).map_err(|e| CliError::Data(e.to_string()))?, spec.format)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let out = &job.output_dir;
    let mut written = Vec::new();
    for (doc, format) in &docs {
        written.push(doc.write_to(out, *format).map_err(|e| CliError::Data(e.to_string()))?);
    }
    let manifest = ReportManifest {
        tool: "fairlens",
        version: env!("CARGO_PKG_VERSION"),
        spec_sha256: sha256_hex(spec_bytes),
        inputs: job.input_paths().iter().map(|p| FileHash::of(p, None)).collect::<Result<_, _>>()?,
        outputs: written.iter().map(|p| FileHash::of(p, Some(out))).collect::<Result<_, _>>()?,
    };
    let path = out.join("report_manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    written.push(path);
    Ok(written)
}
