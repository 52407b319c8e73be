use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use knn_ner::{write_dump, DumpSentence, EmbeddingDump, LabelVocab, Token};
use serde_json::Value;
use tempfile::TempDir;

fn knn_ner(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_knn-ner"))
        .args(args)
        .current_dir(dir)
        .env_remove("KNN_NER_THREADS")
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let o = knn_ner(args, dir);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

/// A small synthetic benchmark with its datastore already built.
fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(
        &[
            "synth",
            "--out-dir",
            ".",
            "--train-sentences",
            "80",
            "--test-sentences",
            "30",
        ],
        dir.path(),
    );
    ok(
        &["build", "--dump", "train.knnd", "--out", "store.knns"],
        dir.path(),
    );
    dir
}

fn records(path: PathBuf) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn strings(v: &Value) -> Vec<String> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect()
}

#[test]
fn build_reports_token_count() {
    let dir = TempDir::new().unwrap();
    ok(
        &[
            "synth",
            "--out-dir",
            ".",
            "--train-sentences",
            "10",
            "--test-sentences",
            "2",
        ],
        dir.path(),
    );
    let tokens = knn_ner::read_dump(fs::File::open(dir.path().join("train.knnd")).unwrap())
        .unwrap()
        .token_count();
    let out = ok(
        &["build", "--dump", "train.knnd", "--out", "s.knns"],
        dir.path(),
    );
    assert!(out.contains(&format!("entries: {tokens}")), "{out}");
    assert!(ok(&["stats", "--store", "s.knns"], dir.path()).contains(&format!("entries: {tokens}")));
}

#[test]
fn missing_input_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = knn_ner(
        &["build", "--dump", "absent.knnd", "--out", "s.knns"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no such file"), "{}", stderr(&o));
    assert!(!dir.path().join("s.knns").exists());
}

#[test]
fn unlabeled_training_token_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let vocab = LabelVocab::new(["O", "B-PER", "I-PER"]).unwrap();
    let token = |gold| Token {
        word: "w".into(),
        gold,
        embedding: vec![0.5, -0.5],
        base_log_probs: vec![-(3f32.ln()); 3],
    };
    let dump = EmbeddingDump::new(
        2,
        vocab,
        vec![
            DumpSentence::new(vec![token(Some(0)), token(Some(1))]),
            DumpSentence::new(vec![token(Some(0)), token(Some(0)), token(None)]),
        ],
    )
    .unwrap();
    write_dump(
        &dump,
        fs::File::create(dir.path().join("partial.knnd")).unwrap(),
    )
    .unwrap();
    let o = knn_ner(
        &["build", "--dump", "partial.knnd", "--out", "s.knns"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("sentence 1, token 2"), "{}", stderr(&o));
    assert!(!dir.path().join("s.knns").exists());
}

#[test]
fn zero_k_fails_before_any_work() {
    let dir = TempDir::new().unwrap();
    // the inputs do not exist: flag validation must come first
    let o = knn_ner(
        &[
            "predict", "--store", "s.knns", "--dump", "q.knnd", "--out", "p.jsonl", "--k", "0",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--k"), "{}", stderr(&o));
    let o = knn_ner(
        &[
            "predict", "--store", "s.knns", "--dump", "q.knnd", "--out", "p.jsonl", "--lambda",
            "1.5",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!stderr(&o).contains("no such file"), "{}", stderr(&o));
}

#[test]
fn lambda_one_predicts_the_base_argmax() {
    let dir = workspace();
    ok(
        &[
            "predict",
            "--store",
            "store.knns",
            "--dump",
            "test.knnd",
            "--out",
            "p.jsonl",
            "--lambda",
            "1",
        ],
        dir.path(),
    );
    let dump = knn_ner::read_dump(fs::File::open(dir.path().join("test.knnd")).unwrap()).unwrap();
    let base = knn_ner::interpolate::base_predictions(&dump).unwrap();
    let recs = records(dir.path().join("p.jsonl"));
    assert_eq!(recs.len(), dump.sentences.len());
    for (i, (rec, labels)) in recs.iter().zip(&base).enumerate() {
        assert_eq!(rec["sentence_index"], i);
        let expected: Vec<String> = labels
            .iter()
            .map(|&id| dump.vocab.label(id).unwrap().to_string())
            .collect();
        assert_eq!(strings(&rec["predicted"]), expected);
        assert_eq!(strings(&rec["words"]), dump.sentences[i].words());
        assert!(rec.get("trace").is_none());
    }
}

#[test]
fn trace_records_are_well_formed() {
    let dir = workspace();
    ok(
        &[
            "predict",
            "--store",
            "store.knns",
            "--dump",
            "test.knnd",
            "--out",
            "p.jsonl",
            "--trace",
            "--k",
            "5",
        ],
        dir.path(),
    );
    for rec in records(dir.path().join("p.jsonl")) {
        let predicted = strings(&rec["predicted"]);
        assert_eq!(strings(&rec["gold"]).len(), predicted.len());
        let trace = rec["trace"].as_array().unwrap();
        assert_eq!(trace.len(), predicted.len());
        for t in trace {
            let d: Vec<f64> = t["neighbor_distances"]
                .as_array()
                .unwrap()
                .iter()
                .map(|x| x.as_f64().unwrap())
                .collect();
            assert_eq!(d.len(), 5);
            assert!(d.windows(2).all(|w| w[0] <= w[1]), "{d:?}");
            assert_eq!(t["neighbor_labels"].as_array().unwrap().len(), 5);
            for key in ["p_knn", "p_final"] {
                let sum: f64 = t[key]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|x| x.as_f64().unwrap())
                    .sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn approx_index_file_matches_in_memory_prediction() {
    let dir = workspace();
    ok(
        &[
            "build",
            "--dump",
            "train.knnd",
            "--out",
            "store2.knns",
            "--index-out",
            "store.knni",
        ],
        dir.path(),
    );
    let common = [
        "predict",
        "--store",
        "store.knns",
        "--dump",
        "test.knnd",
        "--k",
        "8",
    ];
    let mut a = common.to_vec();
    a.extend(["--out", "a.jsonl", "--index-file", "store.knni"]);
    let mut b = common.to_vec();
    b.extend(["--out", "b.jsonl", "--index", "approx"]);
    ok(&a, dir.path());
    ok(&b, dir.path());
    assert_eq!(
        fs::read(dir.path().join("a.jsonl")).unwrap(),
        fs::read(dir.path().join("b.jsonl")).unwrap()
    );
}

#[test]
fn mismatched_dimensions_exit_four() {
    let dir = workspace();
    ok(
        &[
            "synth",
            "--out-dir",
            "wide",
            "--dim",
            "8",
            "--train-sentences",
            "5",
            "--test-sentences",
            "5",
        ],
        &{
            fs::create_dir(dir.path().join("wide")).unwrap();
            dir.path().to_path_buf()
        },
    );
    let o = knn_ner(
        &[
            "predict",
            "--store",
            "store.knns",
            "--dump",
            "wide/test.knnd",
            "--out",
            "p.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(!dir.path().join("p.jsonl").exists());
}

#[test]
fn corrupt_store_exits_three() {
    let dir = workspace();
    let path = dir.path().join("store.knns");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] = b'X';
    fs::write(&path, bytes).unwrap();
    let o = knn_ner(&["stats", "--store", "store.knns"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("magic"), "{}", stderr(&o));
}

#[test]
fn eval_at_lambda_one_notes_baseline_only() {
    let dir = workspace();
    let out = ok(
        &[
            "eval",
            "--store",
            "store.knns",
            "--dump",
            "test.knnd",
            "--lambda",
            "1",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    assert!(out.contains("base model alone"), "{out}");
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(report["knn"], report["baseline"]);
    let out = ok(
        &["eval", "--store", "store.knns", "--dump", "test.knnd"],
        dir.path(),
    );
    assert!(!out.contains("base model alone"));
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = workspace();
    ok(
        &[
            "sweep",
            "--store",
            "store.knns",
            "--dump",
            "dev.knnd",
            "--out",
            "grid.csv",
            "--ks",
            "1,4,16",
            "--lambdas",
            "0.2,0.5,0.8",
            "--temperatures",
            "0.1,1,10",
        ],
        dir.path(),
    );
    let text = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "k,lambda,T,precision,recall,f1");
    assert_eq!(rows.len() - 1, 27);
}

#[test]
fn synth_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    ok(&["synth", "--out-dir", "."], a.path());
    ok(&["synth", "--out-dir", "."], b.path());
    for name in ["train.knnd", "dev.knnd", "test.knnd"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap()
        );
    }
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let dir = workspace();
    ok(
        &["build", "--dump", "train.knnd", "--out", "again.knns"],
        dir.path(),
    );
    assert_eq!(
        fs::read(dir.path().join("store.knns")).unwrap(),
        fs::read(dir.path().join("again.knns")).unwrap()
    );
    let predict = [
        "predict",
        "--store",
        "store.knns",
        "--dump",
        "test.knnd",
        "--trace",
        "--k",
        "16",
    ];
    let mut one = predict.to_vec();
    one.extend(["--out", "one.jsonl", "--single-thread"]);
    let mut four = predict.to_vec();
    four.extend(["--out", "four.jsonl", "--threads", "4"]);
    ok(&one, dir.path());
    ok(&four, dir.path());
    let env = Command::new(env!("CARGO_BIN_EXE_knn-ner"))
        .args(predict)
        .args(["--out", "env.jsonl"])
        .current_dir(dir.path())
        .env("KNN_NER_THREADS", "2")
        .status()
        .unwrap();
    assert!(env.success());
    let first = fs::read(dir.path().join("one.jsonl")).unwrap();
    assert_eq!(first, fs::read(dir.path().join("four.jsonl")).unwrap());
    assert_eq!(first, fs::read(dir.path().join("env.jsonl")).unwrap());
}

#[test]
fn lowres_writes_one_point_per_fraction() {
    let dir = workspace();
    ok(
        &[
            "lowres",
            "--train",
            "train.knnd",
            "--test",
            "test.knnd",
            "--dev",
            "dev.knnd",
            "--fractions",
            "0.5,1",
            "--out",
            "curve.csv",
        ],
        dir.path(),
    );
    let text = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(
        rows[0],
        "fraction,sentences,baseline_f1,knn_f1,lambda,temperature"
    );
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("0.5,40,"));

    let o = knn_ner(
        &[
            "lowres",
            "--train",
            "train.knnd",
            "--test",
            "test.knnd",
            "--fractions",
            "0",
            "--out",
            "bad.csv",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("bad.csv").exists());
}
