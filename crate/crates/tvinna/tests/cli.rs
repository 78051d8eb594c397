//! End-to-end tests driving the installed binary through temp directories:
//! every artifact, manifest, exit code, and stderr shape checked here is
//! part of the command-line contract.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::process::Output;

use common::*;
use tvinna::pairgen::{MinimalPair, QaSample, Sentiment, SentimentDoc};
use tvinna::scoring::{PrecomputedScorer, UniformScorer};
use tvinna::{checkpoint_to_bytes, load_checkpoint, merge, save_checkpoint, TensorMap};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tvinna")
}

/// Write `config` into `dir` and run the binary there, so relative paths in
/// the config resolve inside the temp directory.
fn run_in(dir: &Path, config: &str, args: &[&str]) -> Output {
    let config_path = dir.join("run.yaml");
    fs::write(&config_path, config).unwrap();
    std::process::Command::new(bin())
        .arg("--config")
        .arg(&config_path)
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).unwrap());
        text.push('\n');
    }
    fs::write(path, text).unwrap();
}

fn pair(good: &str, bad: &str, benchmark: &str) -> MinimalPair {
    MinimalPair {
        good: good.to_string(),
        bad: bad.to_string(),
        benchmark: benchmark.to_string(),
        provenance: BTreeMap::new(),
    }
}

/// A small deterministic base model written to `dir/base.safetensors`.
fn write_base(dir: &Path, seed: u64) -> TensorMap {
    let mut r = rng(seed);
    let base = random_base(&mut r, 3);
    save_checkpoint(&base, dir.join("base.safetensors")).unwrap();
    base
}

#[test]
fn merge_preset_reproduces_the_base_from_identical_sources() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_base(dir.path(), 11);
    for lang in ["da", "is"] {
        save_checkpoint(&base, dir.path().join(format!("{lang}.safetensors"))).unwrap();
    }
    let output = run_in(
        dir.path(),
        "merge:\n  base: base.safetensors\n  preset: merge_2\n  sources:\n    da: da.safetensors\n    is: is.safetensors\n  output: merged.safetensors\n",
        &["merge"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let merged = load_checkpoint(dir.path().join("merged.safetensors")).unwrap();
    assert_eq!(checkpoint_to_bytes(&merged), checkpoint_to_bytes(&base));

    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("merged.safetensors.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "merge");
    assert!(manifest["inputs"].get("base.safetensors").is_some());
    assert!(manifest["outputs"].get("merged.safetensors").is_some());
    assert_eq!(manifest["details"]["recipe"]["method"], "ties");
}

#[test]
fn merge_preset_with_a_missing_language_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_base(dir.path(), 12);
    for lang in ["da", "is", "nb", "nn"] {
        save_checkpoint(&base, dir.path().join(format!("{lang}.safetensors"))).unwrap();
    }
    let output = run_in(
        dir.path(),
        "merge:\n  base: base.safetensors\n  preset: merge_is_plus\n  sources:\n    da: da.safetensors\n    is: is.safetensors\n    nb: nb.safetensors\n    nn: nn.safetensors\n  output: merged.safetensors\n",
        &["merge"],
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("sv"), "{}", stderr_of(&output));
    assert!(!dir.path().join("merged.safetensors").exists());
}

#[test]
fn merge_eq_preset_matches_the_scalar_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_base(dir.path(), 13);
    let mut r = rng(14);
    let mut sources = String::new();
    let mut deltas: BTreeMap<String, Vec<Vec<f32>>> = BTreeMap::new();
    for lang in merge::FIVE_LANGUAGES {
        let (tuned, _) = random_tuned(&mut r, &base);
        save_checkpoint(&tuned, dir.path().join(format!("{lang}.safetensors"))).unwrap();
        for (name, _) in base.iter() {
            deltas
                .entry(name.to_string())
                .or_default()
                .push(oracle_delta(&base, &tuned, name));
        }
        sources.push_str(&format!("    {lang}: {lang}.safetensors\n"));
    }
    let output = run_in(
        dir.path(),
        &format!(
            "merge:\n  base: base.safetensors\n  preset: merge_eq\n  sources:\n{sources}  output: merged.safetensors\n"
        ),
        &["merge"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));

    // merge_eq: ties, density 0.5, lambda 1, five unit weights normalized
    // to 1/5 each.
    let scaled = 1.0f32 / 5.0f32;
    let merged = load_checkpoint(dir.path().join("merged.safetensors")).unwrap();
    for (name, tensor) in base.iter() {
        let sources: Vec<(f32, Vec<f32>)> =
            deltas[name].iter().map(|d| (scaled, d.clone())).collect();
        let expect = oracle_ties(&tensor.to_f32(), &sources, 0.5, 1.0);
        let got = merged.get(name).unwrap().to_f32();
        assert_eq!(
            got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            expect.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "tensor {name}"
        );
    }
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_base(dir.path(), 15);
    let output = run_in(
        dir.path(),
        "merge:\n  base: base.safetensors\n  preset: merge_everything\n  output: merged.safetensors\n",
        &["merge"],
    );
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("merge_everything"));
}

#[test]
fn task_vector_writes_a_tagged_container() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_base(dir.path(), 16);
    let mut r = rng(17);
    let (tuned, _) = random_tuned(&mut r, &base);
    save_checkpoint(&tuned, dir.path().join("tuned.safetensors")).unwrap();
    let output = run_in(
        dir.path(),
        "task_vector:\n  base: base.safetensors\n  tuned: tuned.safetensors\n  label: is\n  output: vec.safetensors\n",
        &["task-vector"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let vector = load_checkpoint(dir.path().join("vec.safetensors")).unwrap();
    assert_eq!(
        vector.metadata().get(merge::META_KIND).map(String::as_str),
        Some(merge::KIND_TASK_VECTOR)
    );
    for (name, _) in base.iter() {
        let expect = oracle_delta(&base, &tuned, name);
        let got = vector.get(name).unwrap().to_f32();
        assert_eq!(
            got.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            expect.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "tensor {name}"
        );
    }
}

#[test]
fn build_pairs_sentiment_accounts_for_the_neutral_row() {
    let dir = tempfile::tempdir().unwrap();
    let docs = vec![
        SentimentDoc {
            text: "Góð bók.".to_string(),
            label: Sentiment::Positive,
            annotator_labels: vec![],
        },
        SentimentDoc {
            text: "Ring bók.".to_string(),
            label: Sentiment::Negative,
            annotator_labels: vec![],
        },
        SentimentDoc {
            text: "Ein bók.".to_string(),
            label: Sentiment::Neutral,
            annotator_labels: vec![],
        },
    ];
    write_jsonl(&dir.path().join("docs.jsonl"), &docs);
    let output = run_in(
        dir.path(),
        "build_pairs:\n  builder: sentiment_article\n  input: docs.jsonl\n  output: pairs.jsonl\n",
        &["build-pairs"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let pairs = tvinna::pairgen::read_pairs_jsonl(dir.path().join("pairs.jsonl")).unwrap();
    assert_eq!(pairs.len(), 2);
    let stats: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("pairs.jsonl.stats.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(stats["ingested"], 3);
    assert_eq!(stats["emitted"], 2);
    assert_eq!(stats["dropped"]["neutral"], 1);
}

#[test]
fn build_pairs_germdetect_accounts_for_uncorrupted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        serde_json::json!({"original": "hann sá hana", "corrupted": "hann sá hon"}),
        serde_json::json!({"original": "tey fóru", "corrupted": "tey  fóru"}),
    ];
    write_jsonl(&dir.path().join("records.jsonl"), &rows);
    let output = run_in(
        dir.path(),
        "build_pairs:\n  builder: germdetect\n  input: records.jsonl\n  output: pairs.jsonl\n",
        &["build-pairs"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let stats: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("pairs.jsonl.stats.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(stats["emitted"], 1);
    assert_eq!(stats["dropped"]["no_corruption"], 1);
}

#[test]
fn build_pairs_qa_shuffle_matches_the_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let raw: Vec<(String, String, String, String)> = vec![
        (
            "q1".to_string(),
            "Tórshavn er høvuðsstaðurin. Klaksvík er næststørsti býurin.".to_string(),
            "Hvat er høvuðsstaðurin?".to_string(),
            "Tórshavn".to_string(),
        ),
        (
            "q2".to_string(),
            "Klaksvík liggur í norðri og Tórshavn í suðri.".to_string(),
            "Hvar liggur Klaksvík?".to_string(),
            "Klaksvík".to_string(),
        ),
        (
            "q3".to_string(),
            "Áin rennur gjøgnum dalin og Tórshavn liggur við sjóvarmálan.".to_string(),
            "Hvat rennur gjøgnum dalin?".to_string(),
            "Áin".to_string(),
        ),
    ];
    let samples: Vec<QaSample> = raw
        .iter()
        .map(|(id, context, question, answer)| QaSample {
            id: id.clone(),
            context: context.clone(),
            question: question.clone(),
            answer: answer.clone(),
        })
        .collect();
    write_jsonl(&dir.path().join("qa.jsonl"), &samples);
    let output = run_in(
        dir.path(),
        "build_pairs:\n  builder: qa_shuffle\n  input: qa.jsonl\n  output: pairs.jsonl\n",
        &["build-pairs"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let pairs = tvinna::pairgen::read_pairs_jsonl(dir.path().join("pairs.jsonl")).unwrap();
    let got: Vec<(String, String)> = pairs
        .iter()
        .map(|p| (p.good.clone(), p.bad.clone()))
        .collect();
    assert_eq!(got, brute_force_qa(&raw));
}

#[test]
fn eval_with_a_constant_scorer_ties_every_pair() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = vec![
        pair("ein", "tvey", "tietest"),
        pair("trý", "fýra", "tietest"),
        pair("fimm", "seks", "tietest"),
    ];
    write_jsonl(&dir.path().join("pairs.jsonl"), &pairs);
    let output = run_in(
        dir.path(),
        "eval:\n  pairs: [pairs.jsonl]\n  scorer:\n    kind: constant\n    logprob: -1.0\n  setup: flat\n  records: records.jsonl\n  result: result.json\n",
        &["eval"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    assert!(stdout_of(&output).contains("tietest: 0/3 correct, 3 ties, 0 errors"));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["setup"], "flat");
    assert_eq!(result["accuracies"]["tietest"]["correct"], 0);
    assert_eq!(result["accuracies"]["tietest"]["total"], 3);
}

#[test]
fn eval_with_an_ngram_scorer_reproduces_hand_counted_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    // Corpus "aab", order 1, alpha 1: p(a)=1/2, p(b)=1/3, p(unseen)=1/6.
    // Normalized comparison: "aa" beats "cc", "ab" ties "ba" (same multiset),
    // "b" loses to "a", "aaa" beats "c". Two wins of four scored.
    fs::write(dir.path().join("corpus.txt"), "aab\n").unwrap();
    let pairs = vec![
        pair("aa", "cc", "ngram_fixture"),
        pair("ab", "ba", "ngram_fixture"),
        pair("b", "a", "ngram_fixture"),
        pair("aaa", "c", "ngram_fixture"),
    ];
    write_jsonl(&dir.path().join("pairs.jsonl"), &pairs);
    let output = run_in(
        dir.path(),
        "eval:\n  pairs: [pairs.jsonl]\n  scorer:\n    kind: ngram\n    corpus: corpus.txt\n    order: 1\n    alpha: 1.0\n  normalize: true\n  records: records.jsonl\n  result: result.json\n",
        &["eval"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    assert!(stdout_of(&output).contains("ngram_fixture: 2/4 correct, 1 ties, 0 errors"));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["accuracies"]["ngram_fixture"]["correct"], 2);
    assert_eq!(result["accuracies"]["ngram_fixture"]["total"], 4);
}

#[test]
fn eval_with_a_precomputed_scorer_keeps_missing_ids_as_errors() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = vec![
        pair("stutt", "nakað longri", "preco"),
        pair("onnur", "spurning", "preco"),
    ];
    // Capture scores for three of the four texts; "spurning" stays unknown.
    let known: Vec<String> = ["stutt", "nakað longri", "onnur"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let responses =
        PrecomputedScorer::capture(&known, &UniformScorer { vocab_size: 50 }).unwrap();
    fs::write(dir.path().join("scores.jsonl"), responses).unwrap();
    write_jsonl(&dir.path().join("pairs.jsonl"), &pairs);
    let output = run_in(
        dir.path(),
        "eval:\n  pairs: [pairs.jsonl]\n  scorer:\n    kind: precomputed\n    path: scores.jsonl\n  records: records.jsonl\n  result: result.json\n",
        &["eval"],
    );
    // A missing id degrades that pair to an errored record, not the run.
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    assert!(stdout_of(&output).contains("preco: 1/1 correct, 0 ties, 1 errors"));
    let records = fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 2);
    assert!(records.contains("errored"));
}

#[test]
fn eval_through_an_external_process_scorer() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("length_scorer.py");
    fs::write(
        &script,
        "#!/usr/bin/env python3\nimport json\nimport sys\n\nfor line in sys.stdin:\n    req = json.loads(line)\n    n = len(req[\"text\"])\n    print(json.dumps({\"id\": req[\"id\"], \"logprob\": -float(n), \"tokens\": n}), flush=True)\n",
    )
    .unwrap();
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
    let pairs = vec![
        pair("ab", "abcd", "ext"),
        pair("wxyz", "wx", "ext"),
    ];
    write_jsonl(&dir.path().join("pairs.jsonl"), &pairs);
    let output = run_in(
        dir.path(),
        "eval:\n  pairs: [pairs.jsonl]\n  scorer:\n    kind: external\n    path: length_scorer.py\n  records: records.jsonl\n  result: result.json\n  perplexity_corpus: pairs.jsonl\n",
        &["eval"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    assert!(stdout_of(&output).contains("ext: 1/2 correct, 0 ties, 0 errors"));
    let result: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(result["accuracies"]["ext"]["correct"], 1);
    assert!(result["perplexity"].is_number());
}

#[test]
fn a_backend_that_dies_exits_with_the_backend_code() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("dead.sh");
    fs::write(&script, "#!/bin/sh\nexit 0\n").unwrap();
    fs::set_permissions(&script, fs::Permissions::from_mode(0o755)).unwrap();
    write_jsonl(&dir.path().join("pairs.jsonl"), &[pair("ja", "nei", "dead")]);
    let output = run_in(
        dir.path(),
        "eval:\n  pairs: [pairs.jsonl]\n  scorer:\n    kind: external\n    path: dead.sh\n  perplexity_corpus: pairs.jsonl\n  records: records.jsonl\n  result: result.json\n",
        &["eval"],
    );
    assert_eq!(output.status.code(), Some(4), "{}", stderr_of(&output));
    assert!(stderr_of(&output).contains("backend"));
}

#[test]
fn a_corrupt_pairs_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pairs.jsonl"), "this is not json\n").unwrap();
    let output = run_in(
        dir.path(),
        "eval:\n  pairs: [pairs.jsonl]\n  scorer:\n    kind: uniform\n    vocab_size: 10\n  records: records.jsonl\n  result: result.json\n",
        &["eval"],
    );
    assert_eq!(output.status.code(), Some(3), "{}", stderr_of(&output));
}

#[test]
fn a_missing_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_in(dir.path(), "output_dir: .\n", &["merge"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("merge"));
}

#[test]
fn help_exits_clean_without_a_config() {
    let output = std::process::Command::new(bin())
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(stdout_of(&output).contains("merge"));
}

#[test]
fn report_renders_both_formats_from_eval_results() {
    let dir = tempfile::tempdir().unwrap();
    for (name, setup, source, correct) in [
        ("a.json", "is_full", "is", 90u64),
        ("b.json", "da_full", "da", 80u64),
    ] {
        let result = serde_json::json!({
            "setup": setup,
            "attrs": {"source": source, "method": "full", "size": "135m"},
            "accuracies": {"scala": {"correct": correct, "total": 100}},
        });
        fs::write(
            dir.path().join(name),
            serde_json::to_string_pretty(&result).unwrap(),
        )
        .unwrap();
    }
    let output = run_in(
        dir.path(),
        "report:\n  results: [a.json, b.json]\n  pairwise:\n    - name: is vs da\n      contender_key: source\n      side_a: is\n      side_b: da\n      group_keys: [method, size]\n  output: report\n",
        &["report"],
    );
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let csv = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("setup,benchmark,correct,total,accuracy\n"));
    assert!(csv.contains("da_full,scala,80,100,80.00"));
    assert!(csv.contains("is vs da,1,0,0"));
    let md = fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(md.starts_with("# Results\n"));
    assert!(md.contains("## scala"));
    assert!(dir.path().join("report.manifest.json").exists());
}

#[test]
fn reruns_write_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("corpus.txt"), "aab\n").unwrap();
    let pairs = vec![pair("aa", "cc", "det"), pair("ab", "ba", "det")];
    write_jsonl(&dir.path().join("pairs.jsonl"), &pairs);
    let config = "eval:\n  pairs: [pairs.jsonl]\n  scorer:\n    kind: ngram\n    corpus: corpus.txt\n    order: 2\n    alpha: 0.5\n  records: records.jsonl\n  result: result.json\n";
    let artifacts = ["records.jsonl", "result.json", "result.json.manifest.json"];

    let output = run_in(dir.path(), config, &["eval"]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let first: Vec<Vec<u8>> = artifacts
        .iter()
        .map(|name| fs::read(dir.path().join(name)).unwrap())
        .collect();

    let output = run_in(dir.path(), config, &["eval"]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    for (name, before) in artifacts.iter().zip(&first) {
        let after = fs::read(dir.path().join(name)).unwrap();
        assert_eq!(&after, before, "{name} changed across reruns");
    }
}

#[test]
fn the_jobs_flag_never_changes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let base = write_base(dir.path(), 18);
    let mut r = rng(19);
    let mut sources = String::new();
    for lang in merge::FIVE_LANGUAGES {
        let (tuned, _) = random_tuned(&mut r, &base);
        save_checkpoint(&tuned, dir.path().join(format!("{lang}.safetensors"))).unwrap();
        sources.push_str(&format!("    {lang}: {lang}.safetensors\n"));
    }
    let config = format!(
        "merge:\n  base: base.safetensors\n  preset: merge_eq\n  sources:\n{sources}  output: merged.safetensors\n"
    );

    let output = run_in(dir.path(), &config, &["--jobs", "1", "merge"]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let first = fs::read(dir.path().join("merged.safetensors")).unwrap();

    let output = run_in(dir.path(), &config, &["--jobs", "4", "merge"]);
    assert_eq!(output.status.code(), Some(0), "{}", stderr_of(&output));
    let second = fs::read(dir.path().join("merged.safetensors")).unwrap();
    assert_eq!(first, second);
}
