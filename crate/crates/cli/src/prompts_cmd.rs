use std::fs;
use std::path::Path;

use fairlens_core::report::{emit_table, ReportDocument, ReportFormat, ReportInputs, ReportSpec, TableKind};

use crate::report_cmd::likert_tables;
use crate::CliError;

/// Likert summary table for every language present in the ratings file.
pub fn likert_document(ratings: &Path) -> Result<ReportDocument, CliError> {
    let bytes = fs::read(ratings).map_err(|e| CliError::Config(format!("{}: {e}", ratings.display())))?;
    let likert = likert_tables(&bytes, ratings)?;
    if likert.is_empty() {
        return Err(CliError::Data(format!("{}: no ratings", ratings.display())));
    }
    let spec = ReportSpec {
        table_kind: TableKind::Likert,
        datasets: Vec::new(),
        languages: likert.keys().cloned().collect(),
        models: Vec::new(),
        format: ReportFormat::Markdown,
        metric: None,
    };
    let inputs = ReportInputs { likert, ..Default::default() };
    emit_table(&spec, &inputs).map_err(|e| CliError::Data(e.to_string()))
}
