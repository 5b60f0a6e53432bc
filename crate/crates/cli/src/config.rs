use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use fairlens_core::corpus::DemographicSchema;
use fairlens_core::metrics::{DEFAULT_KL_EPSILON, DEFAULT_SKEW_EPSILON};
use fairlens_core::probe::ScoreAggregationMode;
use fairlens_core::prompts::AUDITED_LANGUAGES;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Largest accepted smoothing / degeneracy threshold.
pub const MAX_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionFiles {
    pub embeddings: PathBuf,
    /// JSON-lines caption manifest, one row per embedding row.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Checkpoint metadata JSON.
    pub meta: PathBuf,
    /// Image embedding file per dataset name.
    pub images: BTreeMap<String, PathBuf>,
    /// Caption embeddings per language code.
    pub captions: BTreeMap<String, CaptionFiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaChoice {
    /// `"fairface"` or `"pata"`.
    Named(String),
    Custom(DemographicSchema),
}

impl SchemaChoice {
    pub fn resolve(&self) -> Result<DemographicSchema, CliError> {
        let schema = match self {
            SchemaChoice::Named(n) if n.eq_ignore_ascii_case("fairface") => DemographicSchema::fairface(),
            SchemaChoice::Named(n) if n.eq_ignore_ascii_case("pata") => DemographicSchema::pata(),
            SchemaChoice::Named(n) => return Err(CliError::Config(format!("unknown schema {n:?}"))),
            SchemaChoice::Custom(s) => s.clone(),
        };
        schema.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(schema)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Label used in reports (e.g. `FF`, `PT`).
    pub name: String,
    pub schema: SchemaChoice,
    pub manifest: PathBuf,
    /// Draw this many images per (race, gender) cell before scoring.
    #[serde(default)]
    pub balanced_per_cell: Option<usize>,
}

fn default_skew_epsilon() -> f64 {
    DEFAULT_SKEW_EPSILON
}

fn default_kl_epsilon() -> f64 {
    DEFAULT_KL_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub models: Vec<ModelConfig>,
    pub datasets: Vec<DatasetConfig>,
    pub inventory: PathBuf,
    pub languages: Vec<String>,
    #[serde(default)]
    pub mode: ScoreAggregationMode,
    #[serde(default = "default_skew_epsilon")]
    pub skew_epsilon: f64,
    #[serde(default = "default_kl_epsilon")]
    pub kl_epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl AuditConfig {
    /// Parses a config file; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: AuditConfig =
            serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.resolve_paths(&base);
        Ok((cfg, bytes))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.inventory);
        resolve(base, &mut self.output_dir);
        for d in &mut self.datasets {
            resolve(base, &mut d.manifest);
        }
        for m in &mut self.models {
            resolve(base, &mut m.meta);
            for p in m.images.values_mut() {
                resolve(base, p);
            }
            for c in m.captions.values_mut() {
                resolve(base, &mut c.embeddings);
                resolve(base, &mut c.manifest);
            }
        }
    }

    /// Every input file, in a fixed order.
    pub fn input_paths(&self) -> Vec<PathBuf> {
        let mut out = vec![self.inventory.clone()];
        out.extend(self.datasets.iter().map(|d| d.manifest.clone()));
        for m in &self.models {
            out.push(m.meta.clone());
            out.extend(m.images.values().cloned());
            for c in m.captions.values() {
                out.push(c.embeddings.clone());
                out.push(c.manifest.clone());
            }
        }
        out
    }

    /// Structural checks plus existence of every referenced file.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        if self.datasets.is_empty() {
            return bad("no datasets configured".into());
        }
        if self.languages.is_empty() {
            return bad("no languages configured".into());
        }
        let mut langs = BTreeSet::new();
        for l in &self.languages {
            if !AUDITED_LANGUAGES.contains(&l.as_str()) {
                return bad(format!("language {l:?} is not one of {AUDITED_LANGUAGES:?}"));
            }
            if !langs.insert(l) {
                return bad(format!("language {l:?} listed twice"));
            }
        }
        for (name, eps) in [("skew_epsilon", self.skew_epsilon), ("kl_epsilon", self.kl_epsilon)] {
            if !(eps > 0.0 && eps <= MAX_EPSILON) {
                return bad(format!("{name} = {eps} outside (0, {MAX_EPSILON}]"));
            }
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return bad(format!("dataset {:?} listed twice", d.name));
            }
            d.schema.resolve()?;
            if d.balanced_per_cell == Some(0) {
                return bad(format!("dataset {}: balanced_per_cell must be positive", d.name));
            }
        }
        for (i, m) in self.models.iter().enumerate() {
            for d in &self.datasets {
                if !m.images.contains_key(&d.name) {
                    return bad(format!("model #{i}: no image embeddings for dataset {}", d.name));
                }
            }
            for l in &self.languages {
                if !m.captions.contains_key(l) {
                    return bad(format!("model #{i}: no caption embeddings for language {l}"));
                }
            }
        }
        for p in self.input_paths() {
            if !p.is_file() {
                return bad(format!("missing input file {}", p.display()));
            }
        }
        Ok(())
    }
}
