use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn secnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_secnn")).args(args).output().unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn err(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: [&str; 8] = [
    "--set",
    "train.max_epochs=2",
    "--set",
    "model.n_max=12",
    "--set",
    "model.d=8",
    "--set",
    "train.batch_size=16",
];

/// Trains a two-epoch model on the keyword fixture into `out`.
fn tiny_train(out: &Path, extra: &[&str]) -> Output {
    let keywords = data("keywords.csv");
    let mut args = vec!["train", "--dataset", s(&keywords), "--out", s(out)];
    args.extend(TINY);
    args.extend(extra);
    secnn(&args)
}

#[test]
fn missing_dataset_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = secnn(&["train", "--dataset", "/nonexistent/x.csv", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", err(&o));
    assert!(err(&o).contains("/nonexistent/x.csv"));
    assert!(!out.exists());
}

#[test]
fn invalid_config_exits_1_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    for bad in [
        "model.pieces=0",
        "model.r=0",
        "train.learning_rate=-1",
        "model.colour=3",
        "train.dev_fraction=1.5",
    ] {
        let o = tiny_train(&out, &["--set", bad]);
        assert_eq!(o.status.code(), Some(1), "{bad}: {}", err(&o));
        assert!(!out.exists(), "{bad} left output behind");
    }
    let o = secnn(&["train", "--dataset", s(&data("keywords.csv"))]);
    assert_eq!(o.status.code(), Some(1), "missing --out: {}", err(&o));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = tiny_train(&out, &[]);
    assert!(o.status.success(), "{}", err(&o));
    assert!(text(&o).contains("best_dev_accuracy="));
    let ck = out.join("checkpoint");
    for f in ["manifest.json", "params.bin", "vocab.txt"] {
        assert!(ck.join(f).is_file(), "{f}");
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().next(), Some("epoch,train_loss,train_acc,dev_acc"));
    assert_eq!(report.lines().count(), 3);

    let e = secnn(&["eval", "--checkpoint", s(&ck), "--dataset", s(&data("keywords.csv"))]);
    assert!(e.status.success(), "{}", err(&e));
    let line = text(&e);
    let acc = line.trim().strip_prefix("accuracy=").unwrap();
    assert_eq!(acc.len(), 6, "{line}");
    assert!((0.0..=1.0).contains(&acc.parse::<f64>().unwrap()));

    // Row order does not matter.
    let raw = fs::read_to_string(data("keywords.csv")).unwrap();
    let mut lines: Vec<&str> = raw.lines().collect();
    lines[1..].reverse();
    let reversed = dir.path().join("reversed.csv");
    fs::write(&reversed, lines.join("\n") + "\n").unwrap();
    let e2 = secnn(&["eval", "--checkpoint", s(&ck), "--dataset", s(&reversed)]);
    assert_eq!(text(&e2), line);

    let p = secnn(&["predict", "--checkpoint", s(&ck), "--text", "a plain sentence"]);
    assert!(p.status.success(), "{}", err(&p));
    let out_line = text(&p);
    let (label, probs) = out_line.trim().split_once('\t').unwrap();
    assert!(label == "0" || label == "1");
    let total: f64 = probs.split(',').map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-5);

    let mut child = Command::new(env!("CARGO_BIN_EXE_secnn"))
        .args(["predict", "--checkpoint", s(&ck)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"a plain sentence\nanother one\n")
        .unwrap();
    let piped = child.wait_with_output().unwrap();
    assert_eq!(text(&piped).lines().count(), 2);
    assert_eq!(text(&piped).lines().next(), Some(out_line.trim_end()));
}

#[test]
fn set_override_reaches_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = tiny_train(&out, &["--set", "model.r=32"]);
    assert!(o.status.success(), "{}", err(&o));
    let manifest = fs::read_to_string(out.join("checkpoint/manifest.json")).unwrap();
    assert!(manifest.contains("\"r\": 32"));
}

#[test]
fn eval_rejects_unknown_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert!(tiny_train(&out, &[]).status.success());
    let odd = dir.path().join("odd.csv");
    fs::write(&odd, "label,text\n0,fine\n7,unseen label\n").unwrap();
    let o = secnn(&["eval", "--checkpoint", s(&out.join("checkpoint")), "--dataset", s(&odd)]);
    assert_eq!(o.status.code(), Some(1), "{}", err(&o));
}

#[test]
fn eval_on_missing_checkpoint_fails() {
    let o = secnn(&[
        "eval",
        "--checkpoint",
        "/nonexistent/ck",
        "--dataset",
        s(&data("keywords.csv")),
    ]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let o = secnn(&["gradcheck"]);
    assert!(o.status.success(), "{}", err(&o));
    assert_eq!(text(&o).lines().count(), 8);
    let bad = secnn(&["gradcheck", "--corrupt-grad", "conv1.filters"]);
    assert_eq!(bad.status.code(), Some(3));
    assert!(err(&bad).contains("conv1.filters"));
    let big = secnn(&["gradcheck", "--set", "model.d=300"]);
    assert_eq!(big.status.code(), Some(1), "{}", err(&big));
}

#[test]
fn sweep_is_sorted_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let keywords = data("keywords.csv");
    let run = |name: &str, ratios: &str| {
        let out = dir.path().join(name);
        let mut args = vec![
            "sweep-ratio",
            "--dataset",
            s(&keywords),
            "--ratios",
            ratios,
            "--out",
            s(&out),
        ];
        args.extend(TINY);
        let o = secnn(&args);
        assert!(o.status.success(), "{}", err(&o));
        fs::read_to_string(out.join("sweep_ratio.csv")).unwrap()
    };
    let one = run("one", "16");
    assert_eq!(one.lines().count(), 2);
    assert!(one.lines().nth(1).unwrap().starts_with("16,"));
    let a = run("a", "8,2,8");
    let b = run("b", "2,8");
    assert_eq!(a, b);
    let rs: Vec<&str> = a.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rs, ["2", "8"]);

    let o = secnn(&[
        "sweep-ratio",
        "--dataset",
        s(&keywords),
        "--ratios",
        "0,4",
        "--out",
        s(&dir.path().join("z")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("z").exists());
}

#[test]
fn config_paths_resolve_against_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(data("keywords.csv"), dir.path().join("kw.csv")).unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[model]\nn_max = 12\nd = 8\n\n[train]\nmax_epochs = 1\n\n[paths]\ndataset = \"kw.csv\"\nout = \"result\"\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_secnn"))
        .args(["train", "--config", s(&cfg)])
        .current_dir(std::env::temp_dir())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", err(&o));
    assert!(dir.path().join("result/report.csv").is_file());
}

#[test]
fn keyword_fixture_matches_generator() {
    let dir = tempfile::tempdir().unwrap();
    let fresh = dir.path().join("kw.csv");
    secnn::text::keyword_corpus(64, 0).save_csv(&fresh).unwrap();
    assert_eq!(fs::read(fresh).unwrap(), fs::read(data("keywords.csv")).unwrap());
}
