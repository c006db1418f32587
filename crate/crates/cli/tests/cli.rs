use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_alertnet"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn alertnet")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "alertnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

const XML: &str = r#"<?xml version="1.0"?>
<export>
  <response id="a1" label="0"><p>The <b>water</b> cycle has three&nbsp;steps.</p></response>
  <response id="a2" label="1">i dont want to be here anymore</response>
  <response id="a3"><![CDATA[<div>My favourite part was the ending.</div>]]></response>
</export>
"#;

#[test]
fn ingest_xml_then_jsonl_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let xml = p(&dir, "in.xml");
    fs::write(&xml, XML).unwrap();
    let first = p(&dir, "first.jsonl");
    let second = p(&dir, "second.jsonl");
    ok(&["ingest", "--input", s(&xml), "--output", s(&first)]);
    let text = fs::read_to_string(&first).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("\"label\":1"));
    assert!(!text.contains('<'));
    ok(&["ingest", "--input", s(&first), "--output", s(&second)]);
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn ingest_empty_file_succeeds_with_warning() {
    let dir = TempDir::new().unwrap();
    let empty = p(&dir, "empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out_path = p(&dir, "out.jsonl");
    let out = ok(&["ingest", "--input", s(&empty), "--output", s(&out_path)]);
    assert_eq!(fs::read_to_string(&out_path).unwrap(), "");
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let corpus = p(&dir, "c.jsonl");
    ok(&["synth", "--output", s(&corpus), "--responses", "50", "--alerts-per-million", "100000"]);
    let emb = p(&dir, "e.txt");
    ok(&["embed-train", "--corpus", s(&corpus), "--output", s(&emb), "--dim", "4", "--epochs", "1"]);
    let out = run(&[
        "train", "--corpus", s(&corpus), "--embedding", s(&emb), "--preset", "cnn", "--output",
        s(&p(&dir, "m.bin")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cnn"));
    let scores = p(&dir, "s.json");
    fs::write(&scores, r#"{"source":"threshold","entries":[{"id":"x","score":0.5}]}"#).unwrap();
    let out = run(&["calibrate", "--scores", s(&scores), "--fractions", "0.1,abc"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["calibrate", "--scores", s(&scores), "--fractions", "150"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_prevalence() {
    let dir = TempDir::new().unwrap();
    let out = p(&dir, "s.jsonl");
    ok(&["synth", "--output", s(&out), "--responses", "100000", "--alerts-per-million", "85"]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 100_000);
    let alerts = text.lines().filter(|l| l.ends_with("\"label\":1}")).count();
    assert!((8..=9).contains(&alerts), "{alerts}");
}

struct Pipeline {
    dir: TempDir,
}

impl Pipeline {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let pl = Pipeline { dir };
        ok(&[
            "--seed", "3", "synth", "--output", s(&pl.path("train.jsonl")), "--responses", "400",
            "--alerts-per-million", "100000",
        ]);
        ok(&[
            "--seed", "4", "synth", "--output", s(&pl.path("heldout.jsonl")), "--alerts-only", "20", "--id-prefix",
            "h",
        ]);
        ok(&[
            "--seed", "5", "synth", "--output", s(&pl.path("threshold.jsonl")), "--responses", "500",
            "--alerts-per-million", "0", "--id-prefix", "c",
        ]);
        ok(&[
            "embed-train", "--corpus", s(&pl.path("train.jsonl")), "--corpus", s(&pl.path("threshold.jsonl")),
            "--output", s(&pl.path("emb.txt")), "--dim", "8", "--epochs", "1",
        ]);
        pl
    }

    fn path(&self, name: &str) -> PathBuf {
        p(&self.dir, name)
    }

    fn train(&self, preset: &str, out: &str) {
        ok(&[
            "--seed", "9", "train", "--corpus", s(&self.path("train.jsonl")), "--embedding", s(&self.path("emb.txt")),
            "--preset", preset, "--output", s(&self.path(out)), "--epochs", "1", "--width-scale", "0.015625",
            "--alert-weight", "5",
        ]);
    }

    fn evaluate(&self, models: &[&str], out: &str, table: &str) -> Output {
        let mut args = vec!["evaluate".to_string()];
        for m in models {
            args.push("--model".into());
            args.push(s(&self.path(m)).into());
        }
        for (flag, val) in [
            ("--embedding", self.path("emb.txt")),
            ("--heldout", self.path("heldout.jsonl")),
            ("--threshold", self.path("threshold.jsonl")),
            ("--output", self.path(out)),
            ("--table", self.path(table)),
        ] {
            args.push(flag.into());
            args.push(s(&val).into());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        ok(&refs)
    }
}

#[test]
fn train_score_evaluate_pipeline() {
    let pl = Pipeline::new();
    pl.train("gru", "gru.bin");
    pl.train("baseline", "base.bin");
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pl.path("gru.bin.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["preset"], "gru");
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["corpus"]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["epoch_losses"].as_array().unwrap().len(), 1);

    let out = pl.evaluate(&["gru.bin", "base.bin"], "eval.json", "eval.txt");
    let table = fs::read_to_string(pl.path("eval.txt")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), table);
    let header = table.lines().next().unwrap();
    for col in ["0.1%", "0.3%", "0.5%", "1%", "2%", "4%"] {
        assert!(header.contains(col), "{header}");
    }
    assert!(table.contains("GRU"));
    assert!(table.contains("BOW + LSA + Logistic Regression"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(pl.path("eval.json")).unwrap()).unwrap();
    assert_eq!(report["reports"].as_array().unwrap().len(), 2);
    assert_eq!(report["fractions"].as_array().unwrap().len(), 6);

    // empty corpus scores to an empty result
    let empty = pl.path("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let scored = pl.path("empty_scores.json");
    ok(&[
        "score", "--model", s(&pl.path("gru.bin")), "--embedding", s(&pl.path("emb.txt")), "--corpus", s(&empty),
        "--output", s(&scored),
    ]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&scored).unwrap()).unwrap();
    assert_eq!(v["entries"].as_array().unwrap().len(), 0);

    // scores of a real corpus calibrate
    let scored = pl.path("th_scores.json");
    ok(&[
        "score", "--model", s(&pl.path("gru.bin")), "--embedding", s(&pl.path("emb.txt")), "--corpus",
        s(&pl.path("threshold.jsonl")), "--output", s(&scored),
    ]);
    let out = ok(&["calibrate", "--scores", s(&scored), "--fractions", "1,4"]);
    let cuts: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cuts[0]["flagged"], 5);
    assert_eq!(cuts[1]["flagged"], 20);
}

#[test]
fn vocabulary_mismatch_is_refused() {
    let pl = Pipeline::new();
    pl.train("lstm", "lstm.bin");
    let other = pl.path("other_emb.txt");
    ok(&[
        "embed-train", "--corpus", s(&pl.path("heldout.jsonl")), "--output", s(&other), "--dim", "8", "--epochs",
        "1",
    ]);
    let out = run(&[
        "score", "--model", s(&pl.path("lstm.bin")), "--embedding", s(&other), "--corpus",
        s(&pl.path("heldout.jsonl")), "--output", s(&pl.path("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("vocabulary"));
    assert!(!pl.path("x.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = Pipeline::new();
    let b = Pipeline::new();
    for pl in [&a, &b] {
        pl.train("stacked-lstm-attention", "m.bin");
        pl.evaluate(&["m.bin"], "eval.json", "eval.txt");
    }
    for name in ["train.jsonl", "emb.txt", "m.bin", "eval.json", "eval.txt"] {
        assert_eq!(fs::read(a.path(name)).unwrap(), fs::read(b.path(name)).unwrap(), "{name}");
    }
    // manifests embed the temp paths, compare everything else
    let strip = |pl: &Pipeline| {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(pl.path("m.bin.manifest.json")).unwrap()).unwrap();
        for key in ["corpus", "embedding", "model"] {
            v[key]["path"] = serde_json::Value::Null;
        }
        v
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn threads_do_not_change_outputs() {
    let pl = Pipeline::new();
    let emb = s(&pl.path("emb.txt")).to_string();
    let train = s(&pl.path("train.jsonl")).to_string();
    for (flag, out) in [("--deterministic", "one.bin"), ("--threads=4", "four.bin")] {
        ok(&[
            flag, "train", "--corpus", &train, "--embedding", &emb, "--preset", "bidirectional-gru", "--output",
            s(&pl.path(out)), "--epochs", "1", "--width-scale", "0.015625",
        ]);
    }
    assert_eq!(fs::read(pl.path("one.bin")).unwrap(), fs::read(pl.path("four.bin")).unwrap());
}
