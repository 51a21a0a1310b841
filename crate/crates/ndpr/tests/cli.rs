//! End-to-end checks of the ndpr binary.

use std::path::Path;
use std::process::{Command, Output};

fn ndpr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ndpr"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = ndpr(args, dir);
    assert!(
        out.status.success(),
        "ndpr {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, content: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path.to_string_lossy().into_owned()
}

const TINY_MODEL: &str = r#"{"train.epochs": 1, "model.embed_dim": 6,
    "model.hidden_dim": 4, "model.classifier_hidden": 8,
    "synth.conversations": 10, "synth.utterances_per_conversation": 5,
    "synth.topics": 8, "synth.entities": 4, "synth.pronoun_types": 3}"#;

#[test]
fn gen_synth_is_byte_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", TINY_MODEL);
    ok(&["gen-synth", "--out", "a.jsonl", "--config", &cfg, "--seed", "7"], dir.path());
    ok(&["gen-synth", "--out", "b.jsonl", "--config", &cfg, "--seed", "7"], dir.path());
    ok(&["gen-synth", "--out", "c.jsonl", "--config", &cfg, "--seed", "8"], dir.path());
    let a = std::fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.jsonl")).unwrap());
    assert_ne!(a, std::fs::read(dir.path().join("c.jsonl")).unwrap());
}

#[test]
fn train_and_eval_are_bit_identical_for_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", TINY_MODEL);
    ok(&["gen-synth", "--out", "corpus.jsonl", "--config", &cfg], dir.path());
    for name in ["m1.json", "m2.json"] {
        ok(
            &["train", "--data", "corpus.jsonl", "--out", name, "--config", &cfg, "--seed", "3"],
            dir.path(),
        );
    }
    let m1 = std::fs::read(dir.path().join("m1.json")).unwrap();
    assert_eq!(m1, std::fs::read(dir.path().join("m2.json")).unwrap());

    for (model, report) in [("m1.json", "r1.json"), ("m2.json", "r2.json")] {
        ok(
            &["eval", "--data", "corpus.jsonl", "--model", model, "--out", report],
            dir.path(),
        );
    }
    let r1 = std::fs::read(dir.path().join("r1.json")).unwrap();
    assert_eq!(r1, std::fs::read(dir.path().join("r2.json")).unwrap());
}

#[test]
fn predict_output_reingests_with_aligned_token_counts() {
    let dir = tempfile::tempdir().unwrap();
    // All-None gold corpus.
    let cfg = write(
        dir.path(),
        "cfg.json",
        &TINY_MODEL.replace("\"train.epochs\": 1", "\"train.epochs\": 1, \"synth.drop_prob\": 0.0"),
    );
    ok(&["gen-synth", "--out", "corpus.jsonl", "--config", &cfg], dir.path());
    ok(
        &["train", "--data", "corpus.jsonl", "--out", "m.json", "--config", &cfg],
        dir.path(),
    );
    ok(
        &["predict", "--data", "corpus.jsonl", "--model", "m.json", "--out", "pred.jsonl"],
        dir.path(),
    );
    let tags = ndpr::data::TagSet::default_conversational();
    let input = ndpr::data::load_corpus(&dir.path().join("corpus.jsonl"), &tags).unwrap();
    let pred = ndpr::data::load_corpus(&dir.path().join("pred.jsonl"), &tags).unwrap();
    assert_eq!(input.len(), pred.len());
    for (a, b) in input.iter().zip(&pred) {
        assert_eq!(a.id, b.id);
        for (ua, ub) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(ua.tokens, ub.tokens);
            assert_eq!(ub.tags.len(), ub.tokens.len());
        }
    }
}

#[test]
fn inspect_on_single_context_utterance_reports_weight_one() {
    let dir = tempfile::tempdir().unwrap();
    // Two-utterance conversation: every sentence sees exactly one context
    // utterance (m = 1), so each sentence weight vector must be [1.0].
    write(
        dir.path(),
        "two.jsonl",
        concat!(
            r#"{"id":"c","utterances":[{"tokens":["a","b"],"tags":["None","None"]},"#,
            r#"{"tokens":["c"],"tags":["他"]}]}"#,
            "\n",
        ),
    );
    let cfg = write(dir.path(), "cfg.json", TINY_MODEL);
    ok(&["train", "--data", "two.jsonl", "--out", "m.json", "--config", &cfg], dir.path());
    let out = ok(
        &["inspect-attention", "--data", "two.jsonl", "--model", "m.json"],
        dir.path(),
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = 0;
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        lines += 1;
        for trace in v["traces"].as_array().unwrap() {
            let weights = trace["sentence_weights"].as_array().unwrap();
            assert_eq!(weights.len(), 1);
            assert_eq!(weights[0].as_f64().unwrap(), 1.0);
        }
    }
    assert_eq!(lines, 2);
}

#[test]
fn unknown_config_key_fails_with_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", r#"{"train.turbo": true}"#);
    let out = ndpr(&["gen-synth", "--out", "x.jsonl", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error:") && err.contains("train.turbo"), "{err}");
}

#[test]
fn flag_overrides_beat_config_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cfg.json",
        &TINY_MODEL.replace("\"train.epochs\": 1", "\"train.epochs\": 3"),
    );
    ok(&["gen-synth", "--out", "corpus.jsonl", "--config", &cfg], dir.path());
    let out = ok(
        &[
            "train", "--data", "corpus.jsonl", "--out", "m.json", "--config", &cfg,
            "--epochs", "1",
        ],
        dir.path(),
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("trained 1 epochs"), "{text}");
}
