use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_deepoformer");

const SMALL: [&str; 10] = [
    "--set",
    "model.dims.attention.model_dim=8",
    "--set",
    "model.dims.attention.n_heads=2",
    "--set",
    "model.dims.attention.head_dim=4",
    "--set",
    "model.dims.p=4",
    "--set",
    "model.dims.hidden_width=8",
];

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("d.csv");
    ok(&["synth", "--curves", "54", "--seed", "1", "--out", s(&data)]);
    data
}

fn train_small(data: &Path, out: &Path, variant: &str, extra: &[&str]) {
    let mut args = vec![
        "train", "--data", s(data), "--variant", variant, "--epochs", "4", "--reps", "2", "--out", s(out),
    ];
    args.extend(SMALL);
    args.extend(extra);
    ok(&args);
}

#[test]
fn synth_then_split_gives_47_7() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let manifest = dir.path().join("split.json");
    ok(&["split", "--data", s(&data), "--n-test", "7", "--seed", "2", "--out", s(&manifest)]);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(v["train_curve_ids"].as_array().unwrap().len(), 47);
    assert_eq!(v["test_curve_ids"].as_array().unwrap().len(), 7);
    assert_eq!(v["seed"], 2);

    let stdout = ok(&["split", "--data", s(&data), "--test-ids", "1,2,3"]).stdout;
    let v: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    assert_eq!(v["test_curve_ids"], serde_json::json!([1, 2, 3]));
}

#[test]
fn featurize_fills_and_checks_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let filled = dir.path().join("f.csv");
    ok(&["featurize", "--data", s(&data), "--out", s(&filled)]);
    let text = fs::read_to_string(&filled).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert!(row[7..11].iter().all(|c| c.parse::<f64>().is_ok()), "{row:?}");
    ok(&["featurize", "--data", s(&filled), "--out", s(&dir.path().join("g.csv")), "--check-features"]);

    // Corrupt one Stussi cell.
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[8] = "123.0".into();
    lines[1] = cells.join(",");
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, lines.join("\n")).unwrap();
    let out = run(&["featurize", "--data", s(&bad), "--out", s(&dir.path().join("h.csv")), "--check-features"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Stussi"));
}

#[test]
fn featurize_domain_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        "curve_id,UTS,TYS,FatigueStrength,Temper,R,sigma_a,sigma_a3,Stussi,Weibull,PM,logN\n\
         1,400,350,250,T6,-1,120,,,,,6.5\n",
    )
    .unwrap();
    let out = run(&["featurize", "--data", s(&bad), "--out", s(&dir.path().join("o.csv"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let run_a = dir.path().join("a");
    train_small(&data, &run_a, "full", &["--base-seed", "5"]);
    for f in ["config.toml", "split.json", "metrics.csv", "scatter.csv", "summary.json"] {
        assert!(run_a.join(f).is_file(), "missing {f}");
    }
    for seed in [5, 6] {
        let d = run_a.join(format!("seed_{seed}"));
        assert!(d.join("checkpoint.json").is_file());
        assert!(fs::read_to_string(d.join("loss.csv")).unwrap().starts_with("epoch,loss\n"));
    }
    let metrics = fs::read_to_string(run_a.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows[0], "seed,status,r2,mae,mre");
    assert_eq!(rows.len(), 1 + 2 + 2);
    assert!(rows[1].starts_with("5,ok,") && rows[2].starts_with("6,ok,"));
    let curve_files = fs::read_dir(&run_a)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("curve_"))
        .count();
    assert_eq!(curve_files, 7);

    // Rerun from the echoed config alone.
    let run_b = dir.path().join("b");
    ok(&["train", "--config", s(&run_a.join("config.toml")), "--out", s(&run_b)]);
    assert_eq!(fs::read(run_a.join("metrics.csv")).unwrap(), fs::read(run_b.join("metrics.csv")).unwrap());

    // Evaluating the checkpoints reproduces the training-time metrics.
    let eval = dir.path().join("eval");
    ok(&["evaluate", "--run-dir", s(&run_a), "--out", s(&eval)]);
    assert_eq!(fs::read(run_a.join("metrics.csv")).unwrap(), fs::read(eval.join("metrics.csv")).unwrap());

    let curve = dir.path().join("curve.csv");
    ok(&[
        "predict-curve",
        "--checkpoint",
        s(&run_a.join("seed_5").join("checkpoint.json")),
        "--data",
        s(&data),
        "--curve-id",
        "3",
        "--out",
        s(&curve),
    ]);
    let text = fs::read_to_string(&curve).unwrap();
    assert!(text.starts_with("sigma_a,pred_logN,true_logN\n"));
    assert!(text.lines().count() > 50);
}

#[test]
fn report_lists_every_variant() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let variants = ["full", "mse_loss", "no_domain_features", "mlp_branch", "direct_regressor"];
    let mut dirs = Vec::new();
    for v in variants {
        let out = dir.path().join(v);
        train_small(&data, &out, v, &[]);
        dirs.push(out);
    }
    let mut args = vec!["report"];
    args.extend(dirs.iter().map(|d| s(d)));
    let table = String::from_utf8(ok(&args).stdout).unwrap();
    assert_eq!(table.lines().filter(|l| l.contains('±')).count(), 5, "{table}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = s(&dir.path().join("o")).to_string();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--data", s(&data), "--variant", "resnet", "--out", &out],
        vec!["train", "--data", s(&data), "--epochs", "0", "--out", &out],
        vec!["train", "--out", &out],
        vec!["train", "--config", "/nonexistent/run.toml", "--out", &out],
        vec!["train", "--data", s(&data), "--set", "train.bogus=1", "--out", &out],
        vec!["split", "--data", s(&data), "--n-test", "54"],
        vec!["synth", "--noise", "-1", "--out", &out],
        vec!["frobnicate"],
    ];
    for args in cases {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn selftest_subset_passes() {
    let out = ok(&["selftest", "--suite", "metrics", "--suite", "features"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("0 failed"), "{text}");
    assert_eq!(run(&["selftest", "--suite", "nope"]).status.code(), Some(2));
}
