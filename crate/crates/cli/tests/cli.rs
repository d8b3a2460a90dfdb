use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dager_core::bench::{synth_corpus, SynthSpec};
use dager_core::corpus::save_jsonl;

fn dager() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dager"));
    cmd.env("RUST_LOG", "warn").env_remove("DAGER_SEED");
    cmd
}

fn ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn corpus(dir: &Path) -> std::path::PathBuf {
    let mut spec = SynthSpec::abuse_mix(300, 5, 1);
    spec.background_size = 60;
    let path = dir.join("raw.jsonl");
    save_jsonl(&path, &[(&synth_corpus(&spec).unwrap(), None)]).unwrap();
    path
}

#[test]
fn help_lists_every_command() {
    let out = ok(dager().arg("--help"));
    let help = String::from_utf8(out.stdout).unwrap();
    for cmd in [
        "ingest",
        "split",
        "downsample",
        "lexicon",
        "train-lm",
        "generate",
        "augment",
        "train-clf",
        "eval",
        "bench",
    ] {
        assert!(help.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn malformed_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"text\": \"hello\"}\nnot json\n").unwrap();
    let out = dager()
        .args(["ingest", "--in", p(&bad), "--out", p(&dir.path().join("o.jsonl"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = dager()
        .args(["split", "--in", p(&bad), "--ratio", "1.5", "--out", p(dir.path())])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn tsv_ingest_cleans_text() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.tsv");
    fs::write(&raw, "Check THIS out http://x.co @bob!\tspam\nthe and of\tnormal\nhello world\tnormal\n").unwrap();
    let out = dir.path().join("clean.jsonl");
    ok(dager().args(["ingest", "--in", p(&raw), "--format", "tsv", "--out", p(&out)]));
    let lines: Vec<serde_json::Value> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["label"], "spam");
    assert!(!lines[0]["text"].as_str().unwrap().contains("http"));
}

#[test]
fn seed_flag_overrides_environment() {
    let dir = tempfile::tempdir().unwrap();
    let raw = corpus(dir.path());
    let run = |name: &str, env: Option<&str>, flag: Option<&str>| {
        let out = dir.path().join(name);
        let mut cmd = dager();
        cmd.args(["downsample", "--in", p(&raw), "--fraction", "0.3", "--out", p(&out)]);
        if let Some(e) = env {
            cmd.env("DAGER_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        ok(&mut cmd);
        fs::read(out).unwrap()
    };
    let env1 = run("a", Some("1"), None);
    assert_eq!(env1, run("b", None, Some("1")));
    assert_eq!(run("c", Some("1"), Some("2")), run("d", None, Some("2")));
    assert_ne!(env1, run("e", None, Some("2")));
}

#[test]
fn augment_and_eval_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let raw = corpus(d);
    ok(dager().args(["ingest", "--in", p(&raw), "--out", p(&d.join("clean.jsonl"))]));
    ok(dager().args(["split", "--in", p(&d.join("clean.jsonl")), "--out", p(&d.join("split"))]));
    let train = d.join("split/train.jsonl");
    let test = d.join("split/test.jsonl");
    ok(dager().args(["lexicon", "--train", p(&train), "--k", "10", "--out", p(&d.join("lex.tsv"))]));
    ok(dager().args([
        "train-lm", "--corpus", p(&train), "--layers", "1", "--dim", "16", "--heads", "2", "--ffn", "16", "--epochs",
        "1", "--out", p(&d.join("lm")),
    ]));
    for f in ["config.txt", "manifest.txt", "vocab.txt", "weights.bin"] {
        assert!(d.join("lm").join(f).exists(), "missing {f}");
    }

    let gen = d.join("gen.jsonl");
    ok(dager().args([
        "generate", "--model", p(&d.join("lm")), "--lexicon", p(&d.join("lex.tsv")), "--class", "hateful", "--n", "5",
        "--max-len", "8", "--out", p(&gen),
    ]));
    let records: Vec<serde_json::Value> =
        fs::read_to_string(&gen).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 5);
    assert!(records.iter().all(|r| r["label"] == "hateful" && r["text"].is_string()));

    let aug = d.join("aug.jsonl");
    let n_train = fs::read_to_string(&train).unwrap().lines().count();
    ok(dager().args([
        "augment", "--train", p(&train), "--model", p(&d.join("lm")), "--lexicons", p(&d.join("lex.tsv")),
        "--target-total", &(n_train + 30).to_string(), "--mode", "balance", "--max-len", "8", "--out", p(&aug),
    ]));
    let records: Vec<serde_json::Value> =
        fs::read_to_string(&aug).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let generated = records.iter().filter(|r| r["provenance"] == "generated").count();
    assert_eq!(records.len() - generated, n_train);
    assert!(generated > 0 && generated <= 30);

    ok(dager().args(["train-clf", "--train", p(&aug), "--out", p(&d.join("clf"))]));
    let out = ok(dager().args(["eval", "--clf", p(&d.join("clf")), "--test", p(&test), "--out", p(&d.join("m.json"))]));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("macro-F1"));
    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("m.json")).unwrap()).unwrap();
    assert!(metrics["macro_f1"].as_f64().unwrap() >= 0.0);
    assert_eq!(metrics["per_class"].as_array().unwrap().len(), 4);
    for m in metrics["per_class"].as_array().unwrap() {
        for key in ["label", "precision", "recall", "f1", "support"] {
            assert!(!m[key].is_null(), "missing {key}");
        }
    }
}
