use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kgrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgrec")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Planted data prepared into `root/bundle`.
fn prepared(root: &Path) -> PathBuf {
    let raw = root.join("raw");
    assert!(kgrec(&["synth", "planted", "--out", s(&raw), "--seed", "2"]).status.success());
    let bundle = root.join("bundle");
    let out = kgrec(&[
        "prepare",
        "--interactions",
        s(&raw.join("interactions.tsv")),
        "--kg",
        s(&raw.join("kg.tsv")),
        "--out",
        s(&bundle),
        "--set",
        "cold_start_max=0",
        "--set",
        "num_negatives=20",
        "--set",
        "epochs=3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("users 200 items 50"));
    bundle
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(kgrec(&["train"]).status.code(), Some(1));
    assert_eq!(kgrec(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(kgrec(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let out = kgrec(&["prepare", "--interactions", s(&missing), "--kg", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.tsv"));

    let inter = dir.path().join("i.tsv");
    fs::write(&inter, "u\ti\n").unwrap();
    let kg = dir.path().join("kg.tsv");
    fs::write(&kg, "a\tb\n").unwrap();
    let out = kgrec(&["prepare", "--interactions", s(&inter), "--kg", s(&kg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1:"));

    let out = kgrec(&[
        "prepare",
        "--interactions",
        s(&inter),
        "--kg",
        s(&kg),
        "--out",
        s(dir.path()),
        "--set",
        "d=0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_evaluate_ablate_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = prepared(dir.path());
    let run = dir.path().join("run");
    let out = kgrec(&["train", "--bundle", s(&bundle), "--out", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let epochs = fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 4);
    assert!(run.join("train.manifest.json").exists());

    let eval = dir.path().join("eval");
    let ckpt = run.join("model.ckpt");
    let out = kgrec(&[
        "evaluate",
        "--bundle",
        s(&bundle),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&eval),
        "--dump-lists",
        "--export-vectors",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("metric,K,value\nauc,,"));
    assert_eq!(csv.lines().count(), 2 + 3 * 7);
    let lists = fs::read_to_string(eval.join("ranked_lists.tsv")).unwrap();
    let first = lists.lines().next().unwrap();
    assert_eq!(first.split('\t').nth(3).unwrap().split(',').count(), 21);
    assert_eq!(fs::read_to_string(eval.join("item_vectors.tsv")).unwrap().lines().count(), 50);

    // a checkpoint is tied to the hyperparameters it was trained with
    let out = kgrec(&[
        "evaluate",
        "--bundle",
        s(&bundle),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&eval),
        "--set",
        "k=2",
    ]);
    assert_eq!(out.status.code(), Some(1));

    let ablate = dir.path().join("ablate");
    let out = kgrec(&["ablate", "--bundle", s(&bundle), "--out", s(&ablate)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rnn ") && stdout.contains("%)"));
    let table = fs::read_to_string(ablate.join("ablation.csv")).unwrap();
    let hashes: Vec<&str> = table.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(hashes.len(), 2);
    assert_eq!(hashes[0], hashes[1]);

    let sweep = dir.path().join("sweep");
    let out = kgrec(&[
        "sweep",
        "--bundle",
        s(&bundle),
        "--out",
        s(&sweep),
        "--grid",
        "k=2,4",
        "--grid",
        "d=4,8",
        "--chained",
        "--jobs",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<String> = fs::read_to_string(sweep.join("sweep.csv"))
        .unwrap()
        .lines()
        .map(str::to_owned)
        .collect();
    assert_eq!(rows.len(), 5);
    // d is tuned before k regardless of flag order
    assert!(rows[1].starts_with("d,4,") && rows[3].starts_with("k,2,"));
    assert!(sweep.join("sweep.best.config").exists());
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = prepared(dir.path());
    let run = dir.path().join("run");
    let out = kgrec(&["train", "--bundle", s(&bundle), "--out", s(&run), "--set", "lr=1e300"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("model.ckpt").exists());
}
