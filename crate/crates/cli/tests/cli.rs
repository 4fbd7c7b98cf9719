//! End-to-end CLI checks: a toy pipeline through all stages, rerun
//! determinism, error exit codes, and plot-data emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

fn styleforge() -> Command {
    Command::new(env!("CARGO_BIN_EXE_styleforge"))
}

fn write_config(path: &Path, input_dir: &Path, out_dir: &Path) {
    let config = format!(
        r#"
[pipeline]
out_dir = "{out}"
seed = 11

[corpus]
input_dir = "{input}"
parses = "{parses}"
test_fraction = 0.2

[model]
layers = 1
heads = 2
embed_dim = 24
context = 32
vocab_words = 300

[finetune]
epochs = 4
batch_size = 16
pretrain_epochs = 1

[detector]
epochs = 2
batch_size = 16
layers = 1
heads = 2
embed_dim = 16
context = 32
vocab_words = 300

[generate]
per_author = 2
max_new_tokens = 16

[synfeat]
bins = 10

[explain]
steps = 4
ae_samples = 5
ig_samples = 1
cls_sentences = 2
top_k = 5
"#,
        out = out_dir.display(),
        input = input_dir.join("docs").display(),
        parses = input_dir.join("parses.jsonl").display(),
    );
    std::fs::write(path, config).unwrap();
}

fn run_pipeline(work: &Path, out_name: &str) -> PathBuf {
    let inputs = work.join("inputs");
    let status = styleforge()
        .args(["demo", "--per-author", "60", "--seed", "5", "--out"])
        .arg(&inputs)
        .status()
        .unwrap();
    assert!(status.success(), "demo generation failed");

    let out_dir = work.join(out_name);
    let config_path = work.join(format!("{out_name}.toml"));
    write_config(&config_path, &inputs, &out_dir);
    let output = styleforge()
        .args(["pipeline", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "pipeline failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
    out_dir
}

/// Maps (stage, output file name) to hash across every manifest in a run.
fn manifest_hashes(out_dir: &Path) -> BTreeMap<(String, String), String> {
    let mut all = BTreeMap::new();
    for entry in std::fs::read_dir(out_dir.join("manifests")).unwrap() {
        let path = entry.unwrap().path();
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let stage = manifest["stage"].as_str().unwrap().to_string();
        for (file, hash) in manifest["outputs"].as_object().unwrap() {
            let name = Path::new(file)
                .file_name()
                .unwrap()
                .to_string_lossy()
                .to_string();
            all.insert((stage.clone(), name), hash.as_str().unwrap().to_string());
        }
    }
    all
}

#[test]
fn toy_pipeline_completes_all_stages_and_reruns_identically() {
    let work = tempfile::tempdir().unwrap();
    let out = run_pipeline(work.path(), "run-a");

    // Every stage family produced its outputs.
    for file in [
        "corpus/corpus.jsonl",
        "corpus/manifest.json",
        "models/fft/weights.bin",
        "models/lora/weights.bin",
        "models/detector/weights.bin",
        "generated/fft.jsonl",
        "generated/lora.jsonl",
        "eval/fft/agreement.json",
        "eval/fft/predictions.jsonl",
        "eval/fft/filtered_report.json",
        "eval/lora/agreement.json",
        "synfeat/histograms.json",
        "synfeat/divergence.csv",
        "explain/enrichment.csv",
        "explain/ig_heatmap_0.json",
        "explain/top_tokens.json",
    ] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
    let manifests = std::fs::read_dir(out.join("manifests")).unwrap().count();
    assert!(
        manifests >= 10,
        "expected per-stage manifests, found {manifests}"
    );

    // Rerunning with identical inputs reproduces identical output hashes.
    let out_b = run_pipeline(work.path(), "run-b");
    let hashes_a = manifest_hashes(&out);
    let hashes_b = manifest_hashes(&out_b);
    let keys_a: Vec<_> = hashes_a.keys().collect();
    let keys_b: Vec<_> = hashes_b.keys().collect();
    assert_eq!(keys_a, keys_b);
    for (key, hash) in &hashes_a {
        assert_eq!(
            hashes_b.get(key),
            Some(hash),
            "stage output drifted: {key:?}"
        );
    }
}

#[test]
fn missing_input_exits_with_config_error_and_no_partial_writes() {
    let work = tempfile::tempdir().unwrap();
    let out = work.path().join("corpus-out");
    let output = styleforge()
        .args(["corpus", "build", "--in"])
        .arg(work.path().join("nope"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "missing input should exit 2");
    assert!(!out.exists(), "no partial writes for a failed stage");
}

#[test]
fn unknown_backend_is_rejected() {
    let work = tempfile::tempdir().unwrap();
    let output = styleforge()
        .args(["--backend", "warpdrive", "corpus", "build", "--in"])
        .arg(work.path())
        .arg("--out")
        .arg(work.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown backend"));
}

#[test]
fn evaluate_without_detector_or_corpus_is_config_error() {
    let work = tempfile::tempdir().unwrap();
    let generated = work.path().join("generated.jsonl");
    std::fs::write(&generated, "").unwrap();
    let output = styleforge()
        .args(["evaluate", "--detector"])
        .arg(work.path().join("missing-detector"))
        .arg("--generated")
        .arg(&generated)
        .arg("--out")
        .arg(work.path().join("eval"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn plotdata_emits_csv_for_every_kind() {
    let work = tempfile::tempdir().unwrap();
    let out = run_pipeline(work.path(), "run-plot");
    let plots = work.path().join("plots");

    for (kind, report, expected) in [
        (
            "agreement-bubbles",
            out.join("eval/fft/agreement.json"),
            "agreement_bubbles.csv",
        ),
        (
            "histograms",
            out.join("synfeat/histograms.json"),
            "histograms.csv",
        ),
        (
            "enrichment-table",
            out.join("explain/enrichment.csv"),
            "enrichment_table.csv",
        ),
        (
            "ig-heatmap",
            out.join("explain/ig_heatmap_0.json"),
            "ig_heatmap_0.csv",
        ),
        (
            "top-tokens",
            out.join("explain/top_tokens.json"),
            "top_tokens.csv",
        ),
    ] {
        let status = styleforge()
            .args(["plotdata", "--kind", kind, "--report"])
            .arg(&report)
            .arg("--out")
            .arg(&plots)
            .status()
            .unwrap();
        assert!(status.success(), "plotdata {kind} failed");
        assert!(plots.join(expected).is_file(), "missing {expected}");
    }

    // Histogram CSV conserves population sizes: counts sum to the population
    // recorded in the source report.
    let histograms: Vec<serde_json::Value> = serde_json::from_str(
        &std::fs::read_to_string(out.join("synfeat/histograms.json")).unwrap(),
    )
    .unwrap();
    for h in &histograms {
        let total: u64 = h["counts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_u64().unwrap())
            .sum();
        assert!(total > 0);
    }

    // Unknown kind is a usage error.
    let output = styleforge()
        .args(["plotdata", "--kind", "sparklines", "--report"])
        .arg(out.join("explain/top_tokens.json"))
        .arg("--out")
        .arg(&plots)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}
