mod common;

use std::fs;
use std::path::Path;
use std::process::Output;

use common::*;
use fairlens_cli::hashing::sha256_file;
use fairlens_core::metrics::{MetricKind, MetricTable};
use fairlens_core::probe::scaled_probabilities;
use fairlens_core::prompts::Axis;
use fairlens_core::stats::read_results_csv;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn reference_csv() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/reference_tables.csv")
}

fn run(args: &[&str]) -> Output {
    fairlens().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn audit(fx: &Fixture) -> Output {
    run(&["audit", "--config", fx.config.to_str().unwrap()])
}

fn edit_config(fx: &Fixture, f: impl FnOnce(&mut Value)) {
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(&fx.config).unwrap()).unwrap();
    f(&mut cfg);
    fs::write(&fx.config, cfg.to_string()).unwrap();
}

#[test]
fn audit_writes_bundle_and_manifest() {
    let fx = write_fixture("softmax_probability_mean");
    let o = audit(&fx);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = fx.out();
    for name in ["metrics.csv", "gender_skew.csv", "gender_kl.md", "race_skew.md", "harm_rate.csv", "run_manifest.json"]
    {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_sha256"], sha256_file(&fx.config).unwrap());
    let inputs = manifest["inputs"].as_array().unwrap();
    let emb = fx.root().join("alpha_images.emb");
    let entry = inputs.iter().find(|e| e["path"] == emb.to_string_lossy().as_ref()).unwrap();
    assert_eq!(entry["sha256"], sha256_file(&emb).unwrap());
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 9);
    assert!(outputs.iter().any(|e| e["path"] == "metrics.csv"));
    assert_eq!(manifest["config"]["mode"], "softmax_probability_mean");
}

#[test]
fn softmax_mode_matches_direct_evaluation() {
    let fx = write_fixture("softmax_probability_mean");
    assert!(audit(&fx).status.success());
    let table = MetricTable::read_csv(fs::File::open(fx.out().join("metrics.csv")).unwrap()).unwrap();
    let (m, l, axis) = (1, 0, Axis::Communion);
    let cols = axis_captions(axis);
    let neg = cols.iter().position(|&c| c == negative_caption(axis)).unwrap();
    let group = |g: usize| {
        let probs: Vec<f64> = images()
            .into_iter()
            .filter(|&(gg, _, _)| gg == g)
            .map(|(g, r, k)| {
                let sims: Vec<f64> = cols.iter().map(|&j| cosine(m, l, g, r, k, j)).collect();
                scaled_probabilities(&sims, log_temperature(m))[neg]
            })
            .collect();
        mean(&probs)
    };
    let want = skew(group(0), group(1));
    let got = table.value(MODELS[m], DATASET, LANGS[l], axis, MetricKind::GenderSkewMax).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    let entry = table.iter().find(|(k, _)| k.kind == MetricKind::GenderSkewMax).unwrap().1;
    assert_eq!(entry.mode, "softmax_probability_mean");
    let kl = table.iter().find(|(k, _)| k.kind == MetricKind::Skl).unwrap().1;
    assert_eq!(kl.mode, "top1");
}

#[test]
fn missing_input_fails_validation_without_outputs() {
    let fx = write_fixture("raw_cosine_mean");
    fs::remove_file(fx.root().join("beta_images.emb")).unwrap();
    let o = audit(&fx);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("beta_images.emb"));
    assert!(!fx.out().exists());
}

#[test]
fn config_errors_exit_two() {
    let fx = write_fixture("raw_cosine_mean");
    edit_config(&fx, |c| c["skew_epsilon"] = json!(0.5));
    assert_eq!(audit(&fx).status.code(), Some(2));
    edit_config(&fx, |c| {
        c["skew_epsilon"] = json!(1e-9);
        c["languages"] = json!(["en", "de"]);
    });
    assert_eq!(audit(&fx).status.code(), Some(2));
    edit_config(&fx, |c| {
        c["languages"] = json!(["en"]);
        c["surprise"] = json!(1);
    });
    assert_eq!(audit(&fx).status.code(), Some(2));
}

#[test]
fn caption_manifest_mismatch_is_data_error() {
    let fx = write_fixture("raw_cosine_mean");
    let path = fx.root().join("captions_es.jsonl");
    let text = fs::read_to_string(&path).unwrap().replace("\"helpless\"", "\"weak\"");
    fs::write(&path, text).unwrap();
    let o = audit(&fx);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/es"), "{}", stderr(&o));
    assert!(!fx.out().exists());
}

#[test]
fn dimension_mismatch_is_data_error() {
    let fx = write_fixture("raw_cosine_mean");
    let path = fx.root().join("alpha.json");
    let text = fs::read_to_string(&path).unwrap().replace("\"embedding_dim\":16", "\"embedding_dim\":512");
    fs::write(&path, text).unwrap();
    let o = audit(&fx);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("512"));
}

#[test]
fn balanced_subset_is_seeded() {
    let fx = write_fixture("raw_cosine_mean");
    edit_config(&fx, |c| c["datasets"][0]["balanced_per_cell"] = json!(1));
    assert!(audit(&fx).status.success());
    let first = fs::read(fx.out().join("metrics.csv")).unwrap();
    assert!(audit(&fx).status.success());
    assert_eq!(first, fs::read(fx.out().join("metrics.csv")).unwrap());
    edit_config(&fx, |c| c["datasets"][0]["balanced_per_cell"] = json!(3));
    assert_eq!(audit(&fx).status.code(), Some(3));
}

#[test]
fn bad_thread_count_is_config_error() {
    let o = fairlens()
        .args(["stats", "--input", reference_csv().to_str().unwrap(), "--test", "sign", "--pair", "mclip,NLLB"])
        .env("FAIRLENS_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn stats(input: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["stats", "--input", input.to_str().unwrap()];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn stats_emits_one_row_per_dataset_and_axis() {
    let o = stats(&reference_csv(), &["--test", "wilcoxon", "--metric", "race_skew_max", "--pair", "SIGLIP2,NLLB"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_results_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 6);
    let pt_com = rows.iter().find(|r| r.dataset == "PT" && r.axis == "communion").unwrap();
    assert_eq!(pt_com.result.statistic, 0.0);
    assert_eq!(pt_com.result.note, "x<y");
    assert_eq!(pt_com.comparison, "SIGLIP2 vs NLLB");
}

#[test]
fn shuffled_input_gives_identical_results() {
    let text = fs::read_to_string(reference_csv()).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.shuffle(&mut ChaCha8Rng::seed_from_u64(11));
    let dir = tempfile::tempdir().unwrap();
    let shuffled = dir.path().join("shuffled.csv");
    fs::write(&shuffled, format!("{header}\n{}\n", lines.join("\n"))).unwrap();
    for args in [
        &["--test", "wilcoxon", "--metric", "gender_skew_max", "--pair", "CAPIVARA,mclip"][..],
        &["--test", "kruskal", "--groups", "en,es,fr:hi,pt,xh:tr,fa,fi", "--model", "SIGLIP2"][..],
        &["--test", "mann_whitney", "--metric", "skl", "--groups", "en,es,fr:pt,hi,xh", "--model", "NLLB"][..],
    ] {
        let a = stats(&reference_csv(), args);
        let b = stats(&shuffled, args);
        assert!(a.status.success(), "{}", stderr(&a));
        assert_eq!(a.stdout, b.stdout);
    }
}

#[test]
fn self_comparison_surfaces_degenerate_cases() {
    let o = stats(&reference_csv(), &["--test", "wilcoxon", "--pair", "NLLB,NLLB", "--dataset", "FF"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nonzero differences"), "{}", stderr(&o));
    let o = stats(&reference_csv(), &["--test", "sign", "--pair", "NLLB,NLLB", "--dataset", "FF"]);
    assert_eq!(o.status.code(), Some(3));
    let o = stats(&reference_csv(), &["--test", "ttest", "--pair", "NLLB,NLLB", "--dataset", "FF", "--axis", "crime"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let row = &read_results_csv(o.stdout.as_slice()).unwrap()[0];
    assert_eq!(row.result.statistic, 0.0);
    assert_eq!(row.result.p_value, 1.0);
}

#[test]
fn unaligned_languages_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.csv");
    let text: String = fs::read_to_string(reference_csv())
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("NLLB,FF,xh,"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&path, text).unwrap();
    let o = stats(&path, &["--test", "wilcoxon", "--pair", "SIGLIP2,NLLB", "--dataset", "FF"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("unaligned"), "{}", stderr(&o));
    let o = stats(
        &path,
        &["--test", "wilcoxon", "--pair", "SIGLIP2,NLLB", "--dataset", "FF", "--languages", "en,es,fr,hi"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn stats_flag_errors_exit_two() {
    assert_eq!(stats(&reference_csv(), &["--test", "anova", "--pair", "a,b"]).status.code(), Some(2));
    assert_eq!(stats(&reference_csv(), &["--test", "sign", "--pair", "mclip"]).status.code(), Some(2));
    assert_eq!(stats(&reference_csv(), &["--test", "shapiro", "--pair", "mclip,NLLB"]).status.code(), Some(2));
}

#[test]
fn report_job_renders_tables() {
    let fx = write_fixture("raw_cosine_mean");
    assert!(audit(&fx).status.success());
    let root = fx.root();
    let tests = root.join("tests.csv");
    let o = stats(
        &fx.out().join("metrics.csv"),
        &["--test", "sign", "--pair", "alpha,beta", "--out", tests.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    fs::write(root.join("ratings.csv"), "language,label_key,rating\nes,cold,5\nes,warm,4\nen,cold,3\n").unwrap();
    let job = json!({
        "metrics": "out/metrics.csv",
        "tests": ["tests.csv"],
        "ratings": "ratings.csv",
        "output_dir": "report",
        "tables": [
            {"table_kind": "english_baseline", "datasets": [DATASET], "languages": ["en"], "models": MODELS, "format": "markdown"},
            {"table_kind": "gender_skew", "datasets": [DATASET], "languages": LANGS, "models": MODELS, "metric": "gender_skew_mean"},
            {"table_kind": "likert", "languages": ["en", "es"]},
            {"table_kind": "stat_tests", "languages": ["en"]},
        ],
    });
    fs::write(root.join("job.json"), job.to_string()).unwrap();
    let o = run(&["report", "--spec", root.join("job.json").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = root.join("report");
    let baseline = fs::read_to_string(report.join("english_baseline.md")).unwrap();
    assert!(baseline.starts_with("| dataset | model | language | gender_c |"), "{baseline}");
    let skew = fs::read_to_string(report.join("gender_skew.csv")).unwrap();
    assert!(skew.lines().nth(1).unwrap().contains("gender_skew_mean"));
    let likert = fs::read_to_string(report.join("likert.csv")).unwrap();
    assert!(likert.contains("es,2,4.5,"), "{likert}");
    let stat = fs::read_to_string(report.join("stat_tests.csv")).unwrap();
    assert_eq!(stat.lines().count(), 4);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(report.join("report_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
}

#[test]
fn report_missing_cell_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let job = json!({
        "metrics": reference_csv(),
        "output_dir": "report",
        "tables": [
            {"table_kind": "race_skew", "datasets": ["FF"], "languages": ["en"], "models": ["mclip"]},
            {"table_kind": "harm_rate", "datasets": ["FF"], "languages": ["en"], "models": ["mclip"]},
        ],
    });
    let path = dir.path().join("job.json");
    fs::write(&path, job.to_string()).unwrap();
    let o = run(&["report", "--spec", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("mclip/FF/en/agency/pct_na"), "{}", stderr(&o));
    assert!(!dir.path().join("report").exists());
}

#[test]
fn validate_prompts_prints_likert_table() {
    let dir = tempfile::tempdir().unwrap();
    let ratings = dir.path().join("ratings.csv");
    let mut text = String::from("language,label_key,rating\n");
    for (i, r) in [5, 4, 4, 3, 2, 5, 5].iter().enumerate() {
        text.push_str(&format!("fi,label{i},{r}\n"));
    }
    fs::write(&ratings, text).unwrap();
    let out = dir.path().join("likert.csv");
    let o = run(&["validate-prompts", "--ratings", ratings.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = String::from_utf8(o.stdout).unwrap();
    assert!(md.contains("| fi | 7 | 4.00 |"), "{md}");
    let csv = fs::read_to_string(out).unwrap();
    assert!(csv.starts_with("language,n,mean,sd,pct_ge4"));
}
