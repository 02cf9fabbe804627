//! End-to-end checks of the command-line surface: exit codes, output
//! formats, determinism and the no-partial-output guarantee.

use std::fs;
use std::path::{Path, PathBuf};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["sentitree"];
    argv.extend_from_slice(args);
    sentitree::cli::main_with_args(argv)
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(run(&["evaluate", "--bogus"]), 2);
    assert_eq!(run(&["no-such-command"]), 2);
}

#[test]
fn help_exits_0() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["task-a", "--help"]), 0);
    assert_eq!(run(&["gradcheck", "--help"]), 0);
}

#[test]
fn missing_required_seed_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bank = data_dir().join("toy_treebank.txt");
    let out = dir.path().join("model.json");
    assert_eq!(
        run(&[
            "train-tree",
            "--treebank",
            bank.to_str().unwrap(),
            "--output",
            out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn evaluate_identical_files_prints_one() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.tsv");
    fs::write(&preds, "t1\te\t1\nt2\te\t-1\nt3\tf\t0\n").unwrap();
    let out = dir.path().join("metric.json");
    let code = run(&[
        "evaluate",
        "--gold",
        preds.to_str().unwrap(),
        "--pred",
        preds.to_str().unwrap(),
        "--metric",
        "macro-recall",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let json = fs::read_to_string(&out).unwrap();
    assert!(json.contains("\"value\":1.0"), "{json}");
    assert!(json.contains("\"metric\":\"macro-recall\""));
}

#[test]
fn evaluate_missing_file_exits_5() {
    assert_eq!(
        run(&[
            "evaluate",
            "--gold",
            "/nonexistent/gold.tsv",
            "--pred",
            "/nonexistent/pred.tsv",
            "--metric",
            "accuracy",
        ]),
        5
    );
}

#[test]
fn bad_data_exits_3_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bad.treebank");
    fs::write(&bank, "(9#NN#0 cat)\n").unwrap();
    let out = dir.path().join("model.json");
    let code = run(&[
        "train-tree",
        "--treebank",
        bank.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert_eq!(code, 3);
    assert!(!out.exists(), "failed run must not leave partial output");
}

#[test]
fn gradcheck_failure_exits_4() {
    assert_eq!(run(&["gradcheck", "--seed", "5", "--dim", "1", "--instances", "1"]), 0);
    // A coarse step has real truncation error, so the check must report a
    // numeric failure.
    assert_eq!(
        run(&[
            "gradcheck",
            "--seed",
            "5",
            "--dim",
            "1",
            "--instances",
            "1",
            "--step",
            "0.5",
        ]),
        4
    );
}

#[test]
fn train_predict_roundtrip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let bank = data_dir().join("toy_treebank.txt");
    let model_a = dir.path().join("a.json");
    let model_b = dir.path().join("b.json");
    for model in [&model_a, &model_b] {
        let code = run(&[
            "train-tree",
            "--treebank",
            bank.to_str().unwrap(),
            "--output",
            model.to_str().unwrap(),
            "--seed",
            "7",
            "--dim",
            "4",
            "--epochs",
            "5",
            "--batch-size",
            "4",
        ]);
        assert_eq!(code, 0);
    }
    let bytes_a = fs::read(&model_a).unwrap();
    assert_eq!(bytes_a, fs::read(&model_b).unwrap(), "models differ across runs");

    let preds = dir.path().join("preds.tsv");
    let code = run(&[
        "predict-tree",
        "--model",
        model_a.to_str().unwrap(),
        "--trees",
        bank.to_str().unwrap(),
        "--output",
        preds.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&preds).unwrap();
    assert_eq!(text.lines().count(), 20);
    let first: Vec<&str> = text.lines().next().unwrap().split('\t').collect();
    assert_eq!(first.len(), 8);
    // Probabilities parse back and sum to one.
    let sum: f64 = first[1..6].iter().map(|f| f.parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    // Every toy token is in-vocabulary.
    assert_eq!(first[6], "1.0");
}

#[test]
fn preprocess_applies_tables() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("tweets.txt");
    fs::write(&input, "Loving New York!!! 😀😀 http://t.co/x\n").unwrap();
    let dict = dir.path().join("dict.tsv");
    fs::write(&dict, "new york\t<city>\tliteral\n[0-9]+\t<number>\tregex\n").unwrap();
    let emoji = dir.path().join("emoji.tsv");
    fs::write(&emoji, "😀\t<happy-emoji>\n").unwrap();
    let output = dir.path().join("tokens.txt");
    let code = run(&[
        "preprocess",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--dict",
        dict.to_str().unwrap(),
        "--emoji",
        emoji.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(
        fs::read_to_string(&output).unwrap(),
        "loving <city> ! <happy-emoji> <url>\n"
    );
}

#[test]
fn quantification_outputs_parse_and_score() {
    let synthetic = data_dir().join("synthetic");
    let dir = tempfile::tempdir().unwrap();
    let quant = dir.path().join("quant_e.tsv");
    let code = run(&[
        "task-e",
        "--train",
        synthetic.join("train.tsv").to_str().unwrap(),
        "--train-dists",
        synthetic.join("train_dists.tsv").to_str().unwrap(),
        "--test",
        synthetic.join("test.tsv").to_str().unwrap(),
        "--test-dists",
        synthetic.join("test_dists.tsv").to_str().unwrap(),
        "--output",
        quant.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(&quant).unwrap();
    assert_eq!(text.lines().count(), 10);
    for line in text.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 6);
        let sum: f64 = fields[1..].iter().map(|f| f.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
    // Scoring the file against itself gives zero distance.
    let code = run(&[
        "evaluate",
        "--gold",
        quant.to_str().unwrap(),
        "--pred",
        quant.to_str().unwrap(),
        "--metric",
        "emd",
    ]);
    assert_eq!(code, 0);
}
