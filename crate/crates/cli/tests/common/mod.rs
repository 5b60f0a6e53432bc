#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use fairlens_core::corpus::{write_embeddings, write_manifest, EmbeddingMatrix, ImageRecord};
use fairlens_core::prompts::{write_inventory, Axis, Polarity, PromptInventory, PromptTemplate};
use serde_json::json;
use tempfile::TempDir;

pub const GENDERS: [&str; 2] = ["f", "m"];
pub const RACES: [&str; 3] = ["r1", "r2", "r3"];
pub const LANGS: [&str; 2] = ["en", "es"];
pub const MODELS: [&str; 2] = ["alpha", "beta"];
pub const DATASET: &str = "SYN";
pub const PER_CELL: usize = 2;
/// Captions per language, in manifest order.
pub const CAPTIONS: [(Axis, Polarity, &str); 7] = [
    (Axis::Crime, Polarity::Demographic, "person"),
    (Axis::Crime, Polarity::Crime, "thief"),
    (Axis::Crime, Polarity::Nonhuman, "animal"),
    (Axis::Communion, Polarity::Positive, "warm"),
    (Axis::Communion, Polarity::Negative, "cold"),
    (Axis::Agency, Polarity::Positive, "capable"),
    (Axis::Agency, Polarity::Negative, "helpless"),
];
const DIM: usize = CAPTIONS.len() * LANGS.len() + 2;

/// Cosine between image `k` of cell (`g`, `r`) and caption `j` of language `l`
/// under model `m`. Each cell holds one image above and one below the cell mean.
pub fn cosine(m: usize, l: usize, g: usize, r: usize, k: usize, j: usize) -> f64 {
    let sign = if k == 0 { 1.0 } else { -1.0 };
    let female = if g == 0 { 1.0 } else { 0.0 };
    let (m, l, r) = (m as f64, l as f64, r as f64);
    match j {
        0 => 0.275,
        1 => 0.15 + 0.05 * r + 0.05 * female + 0.01 * m + 0.02 * l + 0.05 * sign,
        2 => 0.05,
        3 => 0.205,
        4 => 0.10 + 0.04 * r + 0.06 * (1.0 - female) + 0.01 * l + 0.03 * sign,
        5 => 0.205,
        6 => 0.12 + 0.02 * (2.0 - r) + 0.03 * female + 0.01 * m + 0.02 * sign,
        _ => unreachable!(),
    }
}

/// Image rows in manifest order: gender, then race, then `k`.
pub fn images() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for g in 0..GENDERS.len() {
        for r in 0..RACES.len() {
            for k in 0..PER_CELL {
                out.push((g, r, k));
            }
        }
    }
    out
}

pub fn log_temperature(m: usize) -> f64 {
    [4.6052, 3.0][m]
}

fn image_matrix(m: usize) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = images()
        .into_iter()
        .map(|(g, r, k)| {
            let mut v = vec![0.0f64; DIM];
            for l in 0..LANGS.len() {
                for j in 0..CAPTIONS.len() {
                    v[l * CAPTIONS.len() + j] = cosine(m, l, g, r, k, j);
                }
            }
            let used: f64 = v.iter().map(|x| x * x).sum();
            v[DIM - 1] = (1.0 - used).sqrt();
            v.into_iter().map(|x| x as f32).collect()
        })
        .collect();
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

fn caption_matrix(l: usize) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = (0..CAPTIONS.len())
        .map(|j| {
            let mut v = vec![0.0f32; DIM];
            v[l * CAPTIONS.len() + j] = 1.0;
            v
        })
        .collect();
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

fn templates(lang: &str) -> Vec<PromptTemplate> {
    CAPTIONS
        .iter()
        .map(|(axis, polarity, key)| PromptTemplate {
            id: format!("{lang}-{key}"),
            language: lang.into(),
            axis: *axis,
            polarity: *polarity,
            label_key: (*key).into(),
            text: format!("a photo of a {key} person"),
        })
        .collect()
}

pub struct Fixture {
    pub dir: TempDir,
    pub config: PathBuf,
}

impl Fixture {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn out(&self) -> PathBuf {
        self.root().join("out")
    }
}

/// Writes embeddings, manifests and `audit.json` under a fresh temp dir.
pub fn write_fixture(mode: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let all: Vec<PromptTemplate> = LANGS.iter().flat_map(|l| templates(l)).collect();
    write_inventory(root.join("inventory.jsonl"), &PromptInventory::new(all).unwrap()).unwrap();
    let records: Vec<ImageRecord> = images()
        .into_iter()
        .enumerate()
        .map(|(i, (g, r, _))| ImageRecord {
            id: format!("img{i:03}"),
            gender: GENDERS[g].into(),
            race: RACES[r].into(),
        })
        .collect();
    write_manifest(root.join("images.jsonl"), &records).unwrap();
    for (l, lang) in LANGS.iter().enumerate() {
        write_embeddings(root.join(format!("captions_{lang}.emb")), &caption_matrix(l)).unwrap();
        let inv = PromptInventory::new(templates(lang)).unwrap();
        write_inventory(root.join(format!("captions_{lang}.jsonl")), &inv).unwrap();
    }
    let mut models = Vec::new();
    for (m, name) in MODELS.iter().enumerate() {
        write_embeddings(root.join(format!("{name}_images.emb")), &image_matrix(m)).unwrap();
        let meta = json!({
            "model_name": name,
            "vision_backbone": "synthetic",
            "log_temperature": log_temperature(m),
            "embedding_dim": DIM,
        });
        fs::write(root.join(format!("{name}.json")), meta.to_string()).unwrap();
        let captions: serde_json::Map<String, serde_json::Value> = LANGS
            .iter()
            .map(|l| {
                let files =
                    json!({"embeddings": format!("captions_{l}.emb"), "manifest": format!("captions_{l}.jsonl")});
                (l.to_string(), files)
            })
            .collect();
        models.push(json!({
            "meta": format!("{name}.json"),
            "images": {DATASET: format!("{name}_images.emb")},
            "captions": captions,
        }));
    }
    let config = json!({
        "models": models,
        "datasets": [{
            "name": DATASET,
            "schema": {"dataset_name": "synthetic", "gender_groups": GENDERS, "race_groups": RACES},
            "manifest": "images.jsonl",
        }],
        "inventory": "inventory.jsonl",
        "languages": LANGS,
        "mode": mode,
        "seed": 7,
        "output_dir": "out",
    });
    let path = root.join("audit.json");
    fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    Fixture { dir, config: path }
}

pub fn skew(a: f64, b: f64) -> f64 {
    let gap = (a - b).abs();
    (gap / a).max(gap / b)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Raw-cosine association of caption `j` for the images matching `keep`.
pub fn group_cosine(m: usize, l: usize, j: usize, keep: impl Fn(usize, usize) -> bool) -> f64 {
    let v: Vec<f64> =
        images().into_iter().filter(|&(g, r, _)| keep(g, r)).map(|(g, r, k)| cosine(m, l, g, r, k, j)).collect();
    mean(&v)
}

/// Caption column of the negative pole of `axis`.
pub fn negative_caption(axis: Axis) -> usize {
    CAPTIONS.iter().position(|(a, p, _)| *a == axis && *p == axis.negative_pole()).unwrap()
}

/// Columns competing for top-1 on `axis`.
pub fn axis_captions(axis: Axis) -> Vec<usize> {
    (0..CAPTIONS.len()).filter(|&j| CAPTIONS[j].0 == axis).collect()
}

/// Share of images matching `keep` whose top-1 on `axis` has `polarity`.
pub fn top1_share(m: usize, l: usize, axis: Axis, polarity: Polarity, keep: impl Fn(usize, usize) -> bool) -> f64 {
    let cols = axis_captions(axis);
    let imgs: Vec<_> = images().into_iter().filter(|&(g, r, _)| keep(g, r)).collect();
    let hits = imgs
        .iter()
        .filter(|&&(g, r, k)| {
            let best = cols
                .iter()
                .copied()
                .max_by(|&a, &b| cosine(m, l, g, r, k, a).partial_cmp(&cosine(m, l, g, r, k, b)).unwrap())
                .unwrap();
            CAPTIONS[best].1 == polarity
        })
        .count();
    hits as f64 / imgs.len() as f64
}

pub fn bernoulli_kl(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

pub fn fairlens() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_fairlens"))
}
