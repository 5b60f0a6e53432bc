//! Image-embedding stores and their demographic manifests.
//!
//! Embeddings live in a small binary container (`EMB1`): a 24-byte little-endian
//! header followed by `rows * dim` `f32` values in row-major order. Manifests are
//! JSON-lines files whose i-th record labels the i-th matrix row.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: unknown {field} label {label:?}")]
    UnknownLabel { line: usize, field: &'static str, label: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("bad magic bytes {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("truncated embedding file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("data length {len} does not equal rows*dim = {rows}*{dim}")]
    ShapeMismatch { len: usize, rows: usize, dim: usize },
    #[error("matrix has {rows} rows but manifest has {records} records")]
    RowCountMismatch { rows: usize, records: usize },
    #[error("cell ({race}, {gender}) has {available} members, {requested} requested")]
    InsufficientCell { race: String, gender: String, available: usize, requested: usize },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

/// Group vocabulary of one dataset.
///
/// The first gender group is treated as the "f" arm and the second as the "m"
/// arm when directed KL divergences are reported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemographicSchema {
    pub dataset_name: String,
    pub gender_groups: Vec<String>,
    pub race_groups: Vec<String>,
}

impl DemographicSchema {
    pub fn new(
        dataset_name: impl Into<String>,
        gender_groups: Vec<String>,
        race_groups: Vec<String>,
    ) -> Result<Self, CorpusError> {
        let schema = Self { dataset_name: dataset_name.into(), gender_groups, race_groups };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.gender_groups.len() != 2 {
            return Err(CorpusError::InvalidSchema(format!(
                "expected exactly 2 gender groups, got {}",
                self.gender_groups.len()
            )));
        }
        if self.gender_groups[0] == self.gender_groups[1] {
            return Err(CorpusError::InvalidSchema("gender groups must differ".into()));
        }
        if self.race_groups.is_empty() {
            return Err(CorpusError::InvalidSchema("race groups are empty".into()));
        }
        let unique: HashSet<_> = self.race_groups.iter().collect();
        if unique.len() != self.race_groups.len() {
            return Err(CorpusError::InvalidSchema("race groups must be unique".into()));
        }
        Ok(())
    }

    /// FairFace: binary gender, seven race categories.
    pub fn fairface() -> Self {
        Self {
            dataset_name: "fairface".into(),
            gender_groups: vec!["Female".into(), "Male".into()],
            race_groups: [
                "White",
                "Black",
                "Indian",
                "East_Asian",
                "Southeast_Asian",
                "Middle_Eastern",
                "Latino_Hispanic",
            ]
            .map(String::from)
            .to_vec(),
        }
    }

    /// PATA: binary gender, five ethno-racial identities.
    pub fn pata() -> Self {
        Self {
            dataset_name: "pata".into(),
            gender_groups: vec!["Female".into(), "Male".into()],
            race_groups: ["Black", "Caucasian", "East_Asian", "Hispanic_Latino", "Indian"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub gender: String,
    pub race: String,
}

/// Reads a JSON-lines manifest, validating every label against `schema`.
pub fn load_manifest(path: impl AsRef<Path>, schema: &DemographicSchema) -> Result<Vec<ImageRecord>, CorpusError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_manifest(BufReader::new(file), schema).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_err(path)(source),
        other => other,
    })
}

pub fn parse_manifest(reader: impl BufRead, schema: &DemographicSchema) -> Result<Vec<ImageRecord>, CorpusError> {
    schema.validate()?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io { path: "<manifest>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ImageRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::MalformedLine { line: line_no, message: e.to_string() })?;
        if !schema.gender_groups.contains(&record.gender) {
            return Err(CorpusError::UnknownLabel { line: line_no, field: "gender", label: record.gender });
        }
        if !schema.race_groups.contains(&record.race) {
            return Err(CorpusError::UnknownLabel { line: line_no, field: "race", label: record.race });
        }
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: record.id });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Dense row-major `f32` matrix of image or caption embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self, CorpusError> {
        if data.len() != rows * dim {
            return Err(CorpusError::ShapeMismatch { len: data.len(), rows, dim });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite { row: pos / dim.max(1), col: pos % dim.max(1) });
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, CorpusError> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(CorpusError::ShapeMismatch { len: r.len(), rows: 1, dim });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dtype_code(&self) -> u32 {
        DTYPE_F32
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: indices.len(), dim: self.dim, data }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CorpusError> {
        if bytes.len() < HEADER_LEN {
            let mut found = [0u8; 4];
            let n = bytes.len().min(4);
            found[..n].copy_from_slice(&bytes[..n]);
            if found[..n] != MAGIC[..n] {
                return Err(CorpusError::BadMagic { found });
            }
            return Err(CorpusError::Truncated { expected: HEADER_LEN as u64, actual: bytes.len() as u64 });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if &magic != MAGIC {
            return Err(CorpusError::BadMagic { found: magic });
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CorpusError::UnsupportedVersion(version));
        }
        let dtype = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if dtype != DTYPE_F32 {
            return Err(CorpusError::UnsupportedDtype(dtype));
        }
        let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[20..24].try_into().unwrap()) as u64;
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN as u64))
            .unwrap_or(u64::MAX);
        if bytes.len() as u64 != expected {
            return Err(CorpusError::Truncated { expected, actual: bytes.len() as u64 });
        }
        let data = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(rows as usize, dim as usize, data)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, CorpusError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn write_embeddings(path: impl AsRef<Path>, matrix: &EmbeddingMatrix) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&matrix.to_bytes()).map_err(io_err(path))
}

/// Released metadata of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_name: String,
    pub vision_backbone: String,
    /// Natural log of the logit scale; softmax logits are `exp(log_temperature) * cos`.
    pub log_temperature: f64,
    pub embedding_dim: usize,
}

impl CheckpointMeta {
    pub fn check_dim(&self, matrix: &EmbeddingMatrix) -> Result<(), CorpusError> {
        if matrix.dim() != self.embedding_dim {
            return Err(CorpusError::InvalidSchema(format!(
                "checkpoint {} has embedding_dim {} but matrix has dim {}",
                self.model_name,
                self.embedding_dim,
                matrix.dim()
            )));
        }
        Ok(())
    }
}

/// Row index set for one group, in ascending row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    pub name: String,
    pub rows: Vec<usize>,
}

/// An embedding matrix with validated, positionally aligned demographic labels.
///
/// Immutable after construction; clones share the matrix.
#[derive(Debug, Clone)]
pub struct AlignedCorpus {
    schema: DemographicSchema,
    matrix: Arc<EmbeddingMatrix>,
    records: Arc<Vec<ImageRecord>>,
    by_gender: Vec<GroupIndex>,
    by_race: Vec<GroupIndex>,
}

pub fn validate_alignment(
    matrix: EmbeddingMatrix,
    manifest: Vec<ImageRecord>,
    schema: &DemographicSchema,
) -> Result<AlignedCorpus, CorpusError> {
    schema.validate()?;
    if matrix.rows() != manifest.len() {
        return Err(CorpusError::RowCountMismatch { rows: matrix.rows(), records: manifest.len() });
    }
    let index = |groups: &[String], pick: fn(&ImageRecord) -> &str, field: &'static str| {
        let mut out: Vec<GroupIndex> =
            groups.iter().map(|g| GroupIndex { name: g.clone(), rows: Vec::new() }).collect();
        for (row, rec) in manifest.iter().enumerate() {
            let label = pick(rec);
            let slot = groups.iter().position(|g| g == label).ok_or_else(|| CorpusError::UnknownLabel {
                line: row + 1,
                field,
                label: label.to_string(),
            })?;
            out[slot].rows.push(row);
        }
        Ok::<_, CorpusError>(out)
    };
    let by_gender = index(&schema.gender_groups, |r| &r.gender, "gender")?;
    let by_race = index(&schema.race_groups, |r| &r.race, "race")?;
    Ok(AlignedCorpus {
        schema: schema.clone(),
        matrix: Arc::new(matrix),
        records: Arc::new(manifest),
        by_gender,
        by_race,
    })
}

impl AlignedCorpus {
    pub fn schema(&self) -> &DemographicSchema {
        &self.schema
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn gender_groups(&self) -> &[GroupIndex] {
        &self.by_gender
    }

    pub fn race_groups(&self) -> &[GroupIndex] {
        &self.by_race
    }

    pub fn gender_group(&self, name: &str) -> Option<&GroupIndex> {
        self.by_gender.iter().find(|g| g.name == name)
    }

    /// Row indices per (race, gender) cell, keyed in schema order.
    pub fn cells(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for r in 0..self.schema.race_groups.len() {
            for g in 0..self.schema.gender_groups.len() {
                cells.insert((r, g), Vec::new());
            }
        }
        for (row, rec) in self.records.iter().enumerate() {
            let r = self.schema.race_groups.iter().position(|x| *x == rec.race).unwrap();
            let g = self.schema.gender_groups.iter().position(|x| *x == rec.gender).unwrap();
            cells.get_mut(&(r, g)).unwrap().push(row);
        }
        cells
    }

    /// Cells whose population falls outside `target ± tolerance`.
    pub fn unbalanced_cells(&self, target: usize, tolerance: usize) -> Vec<(String, String, usize)> {
        self.cells()
            .into_iter()
            .filter(|(_, rows)| rows.len().abs_diff(target) > tolerance)
            .map(|((r, g), rows)| {
                (self.schema.race_groups[r].clone(), self.schema.gender_groups[g].clone(), rows.len())
            })
            .collect()
    }

    /// Restricts the corpus to `rows` (kept in the given order).
    pub fn subset(&self, rows: &[usize]) -> AlignedCorpus {
        let matrix = self.matrix.select_rows(rows);
        let records = rows.iter().map(|&i| self.records[i].clone()).collect();
        validate_alignment(matrix, records, &self.schema).expect("subset of a valid corpus")
    }
}

/// Draws exactly `per_cell` rows from every (race, gender) cell.
///
/// Each cell is shuffled with a ChaCha8 stream seeded from `seed`; the chosen
/// rows keep their original relative order.
pub fn balanced_subset(corpus: &AlignedCorpus, per_cell: usize, seed: u64) -> Result<AlignedCorpus, CorpusError> {
    let cells = corpus.cells();
    for ((r, g), rows) in &cells {
        if rows.len() < per_cell {
            return Err(CorpusError::InsufficientCell {
                race: corpus.schema.race_groups[*r].clone(),
                gender: corpus.schema.gender_groups[*g].clone(),
                available: rows.len(),
                requested: per_cell,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(cells.len() * per_cell);
    for (_, mut rows) in cells {
        rows.shuffle(&mut rng);
        chosen.extend_from_slice(&rows[..per_cell]);
    }
    chosen.sort_unstable();
    Ok(corpus.subset(&chosen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn schema() -> DemographicSchema {
        DemographicSchema::new("toy", vec!["Female".into(), "Male".into()], vec!["A".into(), "B".into()]).unwrap()
    }

    #[test]
    fn manifest_in_file_order() {
        let text = r#"{"id":"a","gender":"Male","race":"A"}
{"id":"b","gender":"Female","race":"B"}
"#;
        let recs = parse_manifest(Cursor::new(text), &schema()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].id, "a");
        assert_eq!(recs[1].race, "B");
    }

    #[test]
    fn manifest_unknown_label_names_line() {
        let text = r#"{"id":"a","gender":"Male","race":"A"}
{"id":"b","gender":"Male","race":"Martian"}
"#;
        let err = parse_manifest(Cursor::new(text), &schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("Martian"), "{msg}");
    }

    #[test]
    fn manifest_malformed_and_duplicate() {
        let err = parse_manifest(Cursor::new("{\"id\":1}\n"), &schema()).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLine { line: 1, .. }));
        let text = r#"{"id":"a","gender":"Male","race":"A"}
{"id":"a","gender":"Male","race":"A"}
"#;
        let err = parse_manifest(Cursor::new(text), &schema()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn schema_rejects_bad_groups() {
        assert!(DemographicSchema::new("x", vec!["F".into()], vec!["A".into()]).is_err());
        assert!(DemographicSchema::new("x", vec!["F".into(), "M".into()], vec!["A".into(), "A".into()]).is_err());
        assert_eq!(DemographicSchema::fairface().race_groups.len(), 7);
        assert_eq!(DemographicSchema::pata().race_groups.len(), 5);
    }

    #[test]
    fn embeddings_header_fields() {
        let m = EmbeddingMatrix::new(3, 4, (0..12).map(|v| v as f32).collect()).unwrap();
        let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.rows(), 3);
        assert_eq!(back.dim(), 4);
        assert_eq!(back.row(2), &[8.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn embeddings_truncated_reports_sizes() {
        let m = EmbeddingMatrix::new(3, 4, vec![0.5; 12]).unwrap();
        let bytes = m.to_bytes();
        let err = EmbeddingMatrix::from_bytes(&bytes[..bytes.len() - 6]).unwrap_err();
        match err {
            CorpusError::Truncated { expected, actual } => {
                assert_eq!(expected, 24 + 48);
                assert_eq!(actual, 24 + 42);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn embeddings_bad_magic_dtype_nan() {
        let m = EmbeddingMatrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let mut bytes = m.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(CorpusError::BadMagic { .. })));
        let mut bytes = m.to_bytes();
        bytes[8] = 2;
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(CorpusError::UnsupportedDtype(2))));
        let mut bytes = m.to_bytes();
        bytes[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(CorpusError::NonFinite { row: 0, col: 1 })));
        assert!(EmbeddingMatrix::new(1, 1, vec![f32::INFINITY]).is_err());
    }

    fn toy_corpus(n: usize) -> AlignedCorpus {
        let s = schema();
        let records: Vec<_> = (0..n)
            .map(|i| ImageRecord {
                id: format!("img{i}"),
                gender: s.gender_groups[i % 2].clone(),
                race: s.race_groups[(i / 2) % 2].clone(),
            })
            .collect();
        let m = EmbeddingMatrix::new(n, 2, (0..2 * n).map(|v| v as f32).collect()).unwrap();
        validate_alignment(m, records, &s).unwrap()
    }

    #[test]
    fn alignment_partitions_rows() {
        let c = toy_corpus(10);
        for groups in [c.gender_groups(), c.race_groups()] {
            let mut all: Vec<usize> = groups.iter().flat_map(|g| g.rows.clone()).collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn alignment_row_mismatch() {
        let c = toy_corpus(10);
        let m = EmbeddingMatrix::new(10, 1, vec![0.0; 10]).unwrap();
        let err = validate_alignment(m, c.records()[..9].to_vec(), c.schema()).unwrap_err();
        assert!(matches!(err, CorpusError::RowCountMismatch { rows: 10, records: 9 }));
    }

    #[test]
    fn balanced_identity_and_errors() {
        let c = toy_corpus(4);
        let sub = balanced_subset(&c, 1, 7).unwrap();
        assert_eq!(sub.records(), c.records());
        assert_eq!(sub.matrix(), c.matrix());
        let err = balanced_subset(&c, 2, 7).unwrap_err();
        assert!(matches!(err, CorpusError::InsufficientCell { available: 1, requested: 2, .. }));
    }

    #[test]
    fn unbalanced_cells_reported() {
        let c = toy_corpus(8);
        assert!(c.unbalanced_cells(2, 0).is_empty());
        assert_eq!(c.unbalanced_cells(3, 0).len(), 4);
    }
}
