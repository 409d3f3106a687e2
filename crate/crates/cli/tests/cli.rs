mod common;

use std::fs;

use common::*;

#[test]
fn train_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = small_mnist_config(tmp.path(), &out);
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--override", "train.max_epochs=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stderr.is_empty(), "success paths stay off stderr");

    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc,seconds");
    assert!(lines[1].starts_with("1,"));
    assert!(out.join("best.ckpt").exists());

    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["epochs_run"], 1);
    assert_eq!(summary["stopped_epoch"], 1);
    assert!(summary["test_acc"].is_number());
    assert!(summary["parameters"].as_u64().unwrap() > 0);
}

#[test]
fn training_learns_the_synthetic_task() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = small_mnist_config(tmp.path(), &out);
    let o = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--override",
        "train.max_epochs=8",
        "--override",
        "augment.enabled=false",
        "--override",
        "model.fc_rate=0.2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let acc = summary["test_acc"].as_f64().unwrap();
    assert!(acc > 0.5, "test accuracy {acc}");
}

#[test]
fn repeated_runs_are_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg = small_mnist_config(tmp.path(), &a);
    for out in [&a, &b] {
        let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "best.ckpt", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn missing_labels_file_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = small_mnist_config(tmp.path(), &out);
    let labels = tmp.path().join("mnist/train-labels-idx1-ubyte");
    fs::remove_file(&labels).unwrap();
    let o = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("train-labels-idx1-ubyte"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = small_mnist_config(tmp.path(), &out);
    let c = cfg.to_str().unwrap();
    for args in [
        vec!["train", "--config", c, "--override", "train.speed=3"],
        vec!["train", "--config", c, "--override", "model.paradigm=nowhere"],
        vec!["train", "--config", "/nonexistent/config.json"],
        vec!["train", "--config", c, "--override", "noequals"],
        vec!["train", "--bogus-flag"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        assert_eq!(stderr(&o).lines().count(), 1, "{args:?}");
    }
    fs::write(&cfg, "{ not json").unwrap();
    assert_eq!(run(&["train", "--config", c]).status.code(), Some(2));
}

#[test]
fn diverging_run_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = small_mnist_config(tmp.path(), &out);
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--override", "train.lr=1e30"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: non-finite"), "{}", stderr(&o));
    assert!(out.join("summary.json").exists());
}

#[test]
fn eval_matches_summary_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = small_mnist_config(tmp.path(), &out);
    let c = cfg.to_str().unwrap();
    assert!(run(&["train", "--config", c]).status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();

    let first = run(&["eval", "--config", c, "--split", "val"]);
    assert!(first.status.success(), "{}", stderr(&first));
    let line: serde_json::Value = serde_json::from_str(stdout(&first).trim()).unwrap();
    assert_eq!(line["accuracy"], summary["best_val_acc"]);
    let second = run(&["eval", "--config", c, "--split", "val"]);
    assert_eq!(first.stdout, second.stdout);

    let test = run(&["eval", "--config", c]);
    let line: serde_json::Value = serde_json::from_str(stdout(&test).trim()).unwrap();
    assert_eq!(line["accuracy"], summary["test_acc"]);
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = small_mnist_config(tmp.path(), &out);
    let c = cfg.to_str().unwrap();
    assert!(run(&["train", "--config", c, "--override", "train.max_epochs=1"]).status.success());
    let ckpt = out.join("best.ckpt");

    let cifar = cifar10_dir(tmp.path(), 4);
    let cifar_cfg = tmp.path().join("cifar.json");
    fs::write(&cifar_cfg, format!(r#"{{"dataset": {{"name": "cifar10", "dir": "{}"}}}}"#, cifar.display())).unwrap();
    let o = run(&["eval", "--config", cifar_cfg.to_str().unwrap(), "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    fs::write(&ckpt, b"XXXX").unwrap();
    let o = run(&["eval", "--config", c]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn index_rotations(index: &str) -> Vec<f64> {
    index
        .lines()
        .map(|l| {
            let field = l.split_whitespace().find(|f| f.starts_with("rotation_deg=")).unwrap();
            field["rotation_deg=".len()..].parse().unwrap()
        })
        .collect()
}

#[test]
fn preview_gates_rotation_by_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let mnist_cfg = small_mnist_config(tmp.path(), &tmp.path().join("run"));
    let a = tmp.path().join("pa");
    let o = run(&["preview-augment", "--config", mnist_cfg.to_str().unwrap(), "-n", "12", "--out", a.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rot = index_rotations(&fs::read_to_string(a.join("index.txt")).unwrap());
    assert_eq!(rot.len(), 12);
    assert!(rot.iter().all(|r| *r != 0.0 && r.abs() <= 10.0));
    let header = fs::read(a.join("sample_0000.pgm")).unwrap();
    assert!(header.starts_with(b"P5\n28 28\n255\n"));
    assert_eq!(header.len(), 13 + 28 * 28);

    let b = tmp.path().join("pb");
    run(&["preview-augment", "--config", mnist_cfg.to_str().unwrap(), "-n", "12", "--out", b.to_str().unwrap()]);
    for f in ["index.txt", "sample_0000.pgm", "sample_0011.pgm"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }

    let cifar = cifar10_dir(tmp.path(), 4);
    let cfg = tmp.path().join("cifar.json");
    fs::write(&cfg, format!(r#"{{"dataset": {{"name": "cifar10", "dir": "{}"}}}}"#, cifar.display())).unwrap();
    let c = tmp.path().join("pc");
    let o = run(&["preview-augment", "--config", cfg.to_str().unwrap(), "-n", "20", "--out", c.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rot = index_rotations(&fs::read_to_string(c.join("index.txt")).unwrap());
    assert_eq!(rot.len(), 20);
    assert!(rot.iter().all(|r| *r == 0.0));
    assert!(fs::read(c.join("sample_0000.ppm")).unwrap().starts_with(b"P6\n32 32\n255\n"));
}

#[test]
fn preview_edge_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_mnist_config(tmp.path(), &tmp.path().join("run"));
    let c = cfg.to_str().unwrap();
    let out = tmp.path().join("empty");
    let o = run(&["preview-augment", "--config", c, "-n", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("index.txt")).unwrap(), b"");

    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let o = run(&["preview-augment", "--config", c, "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn table_total(text: &str) -> (usize, usize) {
    let mut sum = 0;
    let mut total = 0;
    for line in text.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.first() == Some(&"total") {
            total = words[1].parse().unwrap();
        } else if words.first().is_some_and(|w| w.parse::<usize>().is_ok()) {
            sum += words.last().unwrap().parse::<usize>().unwrap();
        }
    }
    (sum, total)
}

#[test]
fn params_reports_counts() {
    let o = run(&["params", "mnist"]);
    assert!(o.status.success());
    let (sum, total) = table_total(&stdout(&o));
    assert_eq!(sum, total);
    assert!(total > 1_400_000);

    let o = run(&["params", "cifar10"]);
    let text = stdout(&o);
    let (sum, total) = table_total(&text);
    assert_eq!(sum, total);
    let delta = total as i64 - 4_252_298;
    assert!(text.contains(&format!("reference 4252298 delta {delta:+}")), "{text}");

    assert_eq!(run(&["params", "resnet"]).status.code(), Some(2));
}

#[test]
fn params_shows_spatial_paradigm() {
    let o = run(&[
        "params",
        "mnist",
        "--override",
        "model.paradigm=spatial_at_pools",
        "--override",
        "model.spatial_rate=0.125",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let kinds: Vec<String> = stdout(&o)
        .lines()
        .skip(1)
        .filter_map(|l| {
            let w: Vec<&str> = l.split_whitespace().collect();
            (w.len() >= 4 && w[0].parse::<usize>().is_ok()).then(|| w[1..w.len() - 2].join(" "))
        })
        .collect();
    let pools: Vec<usize> = kinds.iter().enumerate().filter(|(_, k)| *k == "pool").map(|(i, _)| i).collect();
    assert_eq!(pools.len(), 2);
    for p in pools {
        assert_eq!(kinds[p - 1], "dropout spatial 0.125");
    }
    assert!(!kinds.iter().any(|k| k == "dropout regular 0.8"));
}

#[test]
fn gradcheck_exit_codes() {
    let o = run(&["gradcheck", "conv"]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS conv dx")));

    assert!(run(&["gradcheck", "all"]).status.success());

    let o = run(&["gradcheck", "all", "--perturb", "dense"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dense"), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL dense dw")));

    assert_eq!(run(&["gradcheck", "lstm"]).status.code(), Some(2));
}
