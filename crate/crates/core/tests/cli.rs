//! Runs the `jobrec` binary end to end on a small generated dataset.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn jobrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jobrec")).args(args).output().expect("spawn jobrec")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> String {
    let out = jobrec(args);
    assert_eq!(code(&out), 0, "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

struct Session {
    dir: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

impl Session {
    fn args<'a>(&'a self, out: &'a Path, rest: &[&'a str]) -> Vec<&'a str> {
        let mut v = vec!["--data-dir", self.data.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--seed", "3"];
        v.extend_from_slice(rest);
        v
    }
}

/// Dataset plus trained TRank, MF and sequence checkpoints, shared by the tests below.
fn session() -> &'static Session {
    static S: OnceLock<Session> = OnceLock::new();
    S.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = dir.path().join("out");
        let s = Session { data, out, dir };
        ok(&s.args(&s.out, &["gen", "--users", "400", "--items", "300", "--weeks", "8"]));
        ok(&s.args(&s.out, &["train", "--component", "trank"]));
        ok(&s.args(&s.out, &["train", "--component", "mf", "--epochs", "3"]));
        ok(&s.args(&s.out, &["train", "--component", "seq", "--epochs", "2"]));
        s
    })
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_writes_dataset_files() {
    let s = session();
    let mut names: Vec<String> =
        fs::read_dir(&s.data).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".tsv")).count(), 5, "{names:?}");
    let run = fs::read_to_string(s.out.join("gen.run.toml")).unwrap();
    assert!(run.starts_with("# jobrec 0.1.0\n# seed 3\n"));
}

#[test]
fn train_writes_checkpoints_and_reports() {
    let s = session();
    for f in ["w.tsv", "mf.tsv", "seq-0.bin", "seq-1.bin"] {
        assert!(s.out.join(f).is_file(), "{f}");
    }
    for c in ["trank", "mf", "seq"] {
        let rep = json(&s.out.join(format!("train-{c}-report.json")));
        assert_eq!(rep["component"], c);
        assert!(rep["scores"]["score_all"].as_f64().unwrap() >= 0.0);
        assert!(s.out.join(format!("train-{c}.run.toml")).is_file());
    }
}

#[test]
fn seq_trace_schema() {
    let s = session();
    let trace = json(&s.out.join("seq-trace.json"));
    let models = trace.as_array().unwrap();
    assert_eq!(models.len(), 2);
    for (k, m) in models.iter().enumerate() {
        assert_eq!(m["model"], k);
        assert_eq!(m["seed"], 3 + k as u64);
        let epochs = m["epochs"].as_array().unwrap();
        assert_eq!(epochs.len(), 2);
        for e in epochs {
            for key in ["epoch", "lr", "train_perplexity", "dev_perplexity"] {
                assert!(e[key].is_number(), "{key}");
            }
        }
        assert!((1..=2).contains(&m["best_epoch"].as_u64().unwrap()));
    }
}

#[test]
fn ensemble_then_eval() {
    let s = session();
    let out = s.dir.path().join("ens");
    fs::create_dir_all(&out).unwrap();
    for f in ["w.tsv", "mf.tsv", "seq-0.bin", "seq-1.bin"] {
        fs::copy(s.out.join(f), out.join(f)).unwrap();
    }
    let text = ok(&s.args(&out, &["ensemble"]));
    for col in ["History", "MF", "LSTM", "Linear fusion", "Ensemble"] {
        assert!(text.contains(col), "{col} missing from\n{text}");
    }
    let rep = json(&out.join("ensemble-report.json"));
    assert_eq!(rep["target_week"], 8);
    assert_eq!(rep["supervision_week"], 7);
    assert!(rep["supervision"]["rows"].get("Ensemble").is_none());
    assert!(out.join("forest.bin").is_file());

    let sub = out.join("ensemble-submission.tsv");
    ok(&s.args(&out, &["eval", "--predictions", sub.to_str().unwrap()]));
    let ev = json(&out.join("eval-report.json"));
    let ens = rep["target"]["rows"]["Ensemble"]["score_all"].as_f64().unwrap();
    assert!((ev["score_all"].as_f64().unwrap() - ens).abs() < 1e-6 * ens.max(1.0));
}

#[test]
fn ablate_rows_include_original() {
    let s = session();
    let out = s.dir.path().join("ablate");
    ok(&s.args(&out, &["ablate-seq", "--multipliers", "2", "--epochs", "1"]));
    let rows = json(&out.join("ablate-seq.json"));
    let labels: Vec<&str> = rows.as_array().unwrap().iter().map(|r| r["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["orig", "x2"]);
    let r = &rows[1];
    assert_eq!(r["multiplier"], 2);
    assert!(r["sequences"].as_u64().unwrap() > 0);
}

#[test]
fn unit_gamma_matches_plain_mf() {
    let s = session();
    let plain = s.dir.path().join("plain");
    let temporal = s.dir.path().join("temporal");
    ok(&s.args(&plain, &["train", "--component", "mf", "--epochs", "2"]));
    let mut w = String::from("kind\tlag\tweight\n");
    for kind in ["impression", "click", "bookmark", "reply"] {
        for lag in 1..=12 {
            let _ = writeln!(w, "{kind}\t{lag}\t0.25");
        }
    }
    let w_path = s.dir.path().join("unit-w.tsv");
    fs::write(&w_path, w).unwrap();
    ok(&s.args(&temporal, &["train", "--component", "mf", "--epochs", "2", "--temporal", "--weights", w_path.to_str().unwrap()]));
    assert_eq!(fs::read(plain.join("mf.tsv")).unwrap(), fs::read(temporal.join("mf.tsv")).unwrap());
}

#[test]
fn usage_errors_exit_2() {
    let s = session();
    let empty = s.dir.path().join("empty");
    let empty_data = empty.join("data");
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["--data-dir", empty_data.to_str().unwrap(), "--out-dir", empty.to_str().unwrap(), "gen", "--rho", "1.5"],
        s.args(&empty, &["train", "--component", "mf", "--temporal"]),
        s.args(&empty, &["train", "--component", "trank", "--temporal"]),
        s.args(&empty, &["ensemble"]),
        s.args(&empty, &["eval", "--predictions", "/nonexistent/preds.tsv"]),
    ];
    for args in cases {
        let out = jobrec(&args);
        assert_eq!(code(&out), 2, "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn malformed_submission_names_line() {
    let s = session();
    let out = s.dir.path().join("bad");
    fs::create_dir_all(&out).unwrap();
    let bad = out.join("bad.tsv");
    fs::write(&bad, "1\t2,3\nnot-a-user\t4\n").unwrap();
    let res = jobrec(&s.args(&out, &["eval", "--predictions", bad.to_str().unwrap()]));
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("bad.tsv:2"));
}

#[test]
fn version_flag() {
    assert!(ok(&["--version"]).contains("0.1.0"));
}
