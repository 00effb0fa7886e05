use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
[train]
epochs = 1
batch_size = 8

[model]
model_dim = 8
layers = 1
heads = 2
ffn_dim = 16
max_seq_len = 24
z_dim = 4
"#;

fn sarl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarl")).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(count: usize) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("small.toml"), SMALL).unwrap();
        let f = Fixture { dir };
        let out = sarl(&["gen-data", "-o", s(&f.path("data")), "--count", &count.to_string(), "--seed", "5"]);
        assert!(out.status.success(), "{}", stderr(&out));
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let config = self.path("small.toml");
        let data = self.path("data/data.jsonl");
        let lex = self.path("data/lexicon.tsv");
        let out = self.path(out);
        let mut args = vec!["train", "-c", s(&config), "--dataset", s(&data), "--lexicon", s(&lex), "-o", s(&out)];
        args.extend_from_slice(extra);
        sarl(&args)
    }
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let f = Fixture::new(40);
    let t = f.train("run", &["--epochs", "2"]);
    assert!(t.status.success(), "{}", stderr(&t));
    for name in ["model.ckpt", "epoch-001.ckpt", "epoch-002.ckpt", "epoch_log.jsonl", "vocab.txt", "model.json", "resolved_config.toml"] {
        assert!(f.path("run").join(name).exists(), "missing {name}");
    }
    let log = fs::read_to_string(f.path("run/epoch_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let ckpt = f.path("run/model.ckpt");
    let data = f.path("data/data.jsonl");
    let lex = f.path("data/lexicon.tsv");
    let eval = sarl(&["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--lexicon", s(&lex), "-o", s(&f.path("eval"))]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    let text = stdout(&eval);
    assert!(text.contains("Accu") && text.contains("Ma-F1") && text.contains("EM@N") && text.contains("Hits@N"), "{text}");
    assert!(f.path("eval/metrics.json").exists());

    let ex = sarl(&["extract", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--lexicon", s(&lex), "-o", s(&f.path("ex"))]);
    assert!(ex.status.success(), "{}", stderr(&ex));
    let dump = fs::read_to_string(f.path("ex/predictions.jsonl")).unwrap();
    for line in dump.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["top_opinions"].as_array().unwrap().len(), 3);
    }

    let b = sarl(&["bias-report", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--lexicon", s(&lex), "-o", s(&f.path("b"))]);
    assert!(b.status.success(), "{}", stderr(&b));
    assert!(stdout(&b).contains("|Q|/|S|"));
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let f = Fixture::new(30);
    assert!(f.train("a", &["--seed", "9"]).status.success());
    assert!(f.train("b", &["--seed", "9"]).status.success());
    assert_eq!(fs::read(f.path("a/model.ckpt")).unwrap(), fs::read(f.path("b/model.ckpt")).unwrap());
    assert!(f.train("c", &["--seed", "10"]).status.success());
    assert_ne!(fs::read(f.path("a/model.ckpt")).unwrap(), fs::read(f.path("c/model.ckpt")).unwrap());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let f = Fixture::new(30);
    assert!(f.train("a", &["--beta", "0.1"]).status.success());
    let resolved = fs::read_to_string(f.path("a/resolved_config.toml")).unwrap();
    assert!(resolved.contains("beta = 0.1"));
    let moved = resolved.replace(s(&f.path("a")), s(&f.path("b")));
    fs::write(f.path("rerun.toml"), moved).unwrap();
    let out = sarl(&["train", "-c", s(&f.path("rerun.toml"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(f.path("a/model.ckpt")).unwrap(), fs::read(f.path("b/model.ckpt")).unwrap());
}

#[test]
fn misspelled_key_is_a_usage_error_with_a_suggestion() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nbetta = 0.1\n").unwrap();
    let out = sarl(&["train", "-c", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("betta") && err.contains("did you mean `beta`"), "{err}");
}

#[test]
fn missing_dataset_is_named() {
    let dir = TempDir::new().unwrap();
    let out = sarl(&["train", "-o", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("dataset"), "{}", stderr(&out));
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(sarl(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sarl(&["train", "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn malformed_dataset_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.jsonl");
    fs::write(&data, "{not json\n").unwrap();
    let out = sarl(&["train", "--dataset", s(&data), "-o", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("bad.jsonl"));
}

#[test]
fn evaluate_without_gold_opinions_omits_extraction() {
    let f = Fixture::new(30);
    assert!(f.train("run", &[]).status.success());
    let raw = fs::read_to_string(f.path("data/data.jsonl")).unwrap();
    let mut stripped = String::new();
    for line in raw.lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        for a in v["aspects"].as_array_mut().unwrap() {
            a.as_object_mut().unwrap().remove("gold_opinions");
        }
        stripped.push_str(&v.to_string());
        stripped.push('\n');
    }
    let data = f.path("plain.jsonl");
    fs::write(&data, stripped).unwrap();
    let ckpt = f.path("run/model.ckpt");
    let lex = f.path("data/lexicon.tsv");
    let out = sarl(&["evaluate", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--lexicon", s(&lex), "-o", s(&f.path("eval"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("Accu") && text.contains("extraction metrics omitted"), "{text}");
    assert!(!text.contains("EM@N"));
}
