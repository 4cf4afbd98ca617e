use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn relshift(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relshift"))
        .args(args)
        .env_remove("RELSHIFT_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = relshift(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = relshift(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// One small-tree replicate under `root/sim/rep_000`.
fn simulated(root: &Path) -> PathBuf {
    ok(&["--seed", "3", "simulate", "--scenario", "supp_smalltree", "--out", s(&root.join("sim"))]);
    root.join("sim/rep_000")
}

fn fit_args<'a>(rep: &'a Path, x: &'a str, out: &'a str) -> Vec<String> {
    [
        "fit",
        "--x",
        x,
        "--y",
        s(&rep.join("y.csv")),
        "--tree",
        s(&rep.join("tree.nwk")),
        "--out",
        out,
    ]
    .iter()
    .map(|a| a.to_string())
    .collect()
}

fn run_fit(rep: &Path, x: &Path, out: &Path, extra: &[&str]) -> String {
    let mut args = fit_args(rep, s(x), s(out));
    args.extend(extra.iter().map(|a| a.to_string()));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn simulate_writes_replicates_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s1");
    ok(&["--seed", "9", "simulate", "--scenario", "study1_equisparse", "--reps", "3", "--out", s(&out)]);
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["reps"], 3);
    let reps = manifest["replicates"].as_array().unwrap();
    assert_eq!(reps.len(), 3);
    for (r, entry) in reps.iter().enumerate() {
        assert_eq!(entry["seed"], 9 + r as u64);
        let rep = out.join(entry["dir"].as_str().unwrap());
        for file in ["x_true.csv", "x_observed.csv", "y.csv", "truth.json"] {
            assert!(rep.join(file).exists(), "{file}");
        }
        assert!(!rep.join("tree.nwk").exists());
    }
}

#[test]
fn fit_at_a_fixed_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let out = dir.path().join("fit");
    let stdout = run_fit(&rep, &rep.join("x_observed.csv"), &out, &["--penalty", "cl2", "--lambda", "0.01"]);
    assert!(stdout.contains("aggregation blocks"));
    let model = json(&out.join("model.json"));
    assert_eq!(model["penalty"], "cl2");
    assert_eq!(model["lambda"], 0.01);
    assert_eq!(model["beta"].as_array().unwrap().len(), 6);
    assert_eq!(model["gamma"].as_array().unwrap().len(), 10);
    assert!(out.join("summary.txt").exists());
    assert!(!out.join("cv.json").exists());
}

#[test]
fn cv_writes_the_error_curve_and_refits() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let out = dir.path().join("cv");
    let stdout = ok(&[
        "--seed",
        "1",
        "cv",
        "--x",
        s(&rep.join("x_observed.csv")),
        "--y",
        s(&rep.join("y.csv")),
        "--tree",
        s(&rep.join("tree.nwk")),
        "--penalty",
        "dl2",
        "--n-lambda",
        "8",
        "--k",
        "4",
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains('*'));
    let cv = json(&out.join("cv.json"));
    assert_eq!(cv["penalty"], "dl2");
    assert_eq!(cv["settings"]["k"], 4);
    assert_eq!(cv["lambda_grid"].as_array().unwrap().len(), 8);
    assert_eq!(cv["fold_mspe"].as_array().unwrap().len(), 4);
    let model = json(&out.join("model.json"));
    assert_eq!(model["lambda"], cv["lambda_best"]);
    assert!(cv["lambda_grid"].as_array().unwrap().contains(&cv["lambda_best"]));
}

#[test]
fn es_fits_need_no_tree() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let out = dir.path().join("es");
    ok(&[
        "fit",
        "--x",
        s(&rep.join("x_observed.csv")),
        "--y",
        s(&rep.join("y.csv")),
        "--penalty",
        "es",
        "--lambda",
        "0.001",
        "--out",
        s(&out),
    ]);
    let model = json(&out.join("model.json"));
    assert_eq!(model["gamma"].as_array().unwrap().len(), 0);
}

/// Rewrite a CSV with its data rows reversed and its value columns in
/// `order`.
fn permute_csv(src: &Path, dst: &Path, order: Option<&[usize]>) {
    let text = fs::read_to_string(src).unwrap();
    let mut lines: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    let header = lines.remove(0);
    lines.reverse();
    let pick = |row: &[&str]| -> String {
        let mut v = vec![row[0]];
        match order {
            Some(o) => v.extend(o.iter().map(|&c| row[c + 1])),
            None => v.extend(&row[1..]),
        }
        v.join(",")
    };
    let mut out = vec![pick(&header)];
    out.extend(lines.iter().map(|r| pick(r)));
    fs::write(dst, out.join("\n") + "\n").unwrap();
}

#[test]
fn row_order_and_column_order_do_not_change_the_fit() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let base = dir.path().join("base");
    run_fit(&rep, &rep.join("x_observed.csv"), &base, &["--penalty", "dl2", "--lambda", "0.02"]);

    let shuffled = dir.path().join("x_shuffled.csv");
    permute_csv(&rep.join("x_observed.csv"), &shuffled, Some(&[5, 3, 1, 0, 2, 4]));
    let other = dir.path().join("other");
    let stdout = run_fit(&rep, &shuffled, &other, &["--penalty", "dl2", "--lambda", "0.02"]);
    assert!(stdout.contains("reordered 6 of 6 composition columns"), "{stdout}");
    assert_eq!(json(&base.join("model.json")), json(&other.join("model.json")));
}

#[test]
fn config_file_fills_in_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let out = dir.path().join("cfg");
    let config = dir.path().join("run.json");
    let body = serde_json::json!({
        "paths": {
            "x": rep.join("x_observed.csv"),
            "y": rep.join("y.csv"),
            "tree": rep.join("tree.nwk"),
            "out": out,
        },
        "penalty": "dl2",
        "lambda": 0.03,
        "truncation_threshold": 0.001,
    });
    fs::write(&config, body.to_string()).unwrap();

    ok(&["--config", s(&config), "fit"]);
    let model = json(&out.join("model.json"));
    assert_eq!(model["penalty"], "dl2");
    assert_eq!(model["lambda"], 0.03);
    assert_eq!(model["truncation_threshold"], 0.001);

    ok(&["--config", s(&config), "fit", "--penalty", "l1", "--lambda", "0.05"]);
    let model = json(&out.join("model.json"));
    assert_eq!(model["penalty"], "l1");
    assert_eq!(model["lambda"], 0.05);

    fs::write(&config, r#"{"penalty": "dl2", "lamda": 1}"#).unwrap();
    let err = fails_with(&["--config", s(&config), "fit"], 2);
    assert!(err.contains("lamda"), "{err}");
}

#[test]
fn check_bounds_writes_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bounds");
    let stdout = ok(&["check-bounds", "--reps", "4", "--n", "60", "--sigma", "0.5", "--penalty", "l1", "--out", s(&out)]);
    assert!(!stdout.is_empty());
    let report = json(&out.join("bounds.json"));
    assert_eq!(report["n"], 60);
    assert!((0.0..=1.0).contains(&report["coverage"].as_f64().unwrap()));
    let csv = fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn rejected_inputs_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let rep = simulated(dir.path());
    let out = dir.path().join("bad");
    let x = rep.join("x_observed.csv");

    let mut args = fit_args(&rep, s(&x), s(&out));
    args.extend(["--lambda", "0.01"].map(String::from));
    let err = fails_with(&args.iter().map(String::as_str).collect::<Vec<_>>(), 2);
    assert!(err.contains("--penalty"), "{err}");

    let renamed = dir.path().join("renamed.csv");
    fs::write(&renamed, fs::read_to_string(&x).unwrap().replacen("t6", "t66", 1)).unwrap();
    let mut args = fit_args(&rep, s(&renamed), s(&out));
    args.extend(["--penalty", "cl2", "--lambda", "0.01"].map(String::from));
    let err = fails_with(&args.iter().map(String::as_str).collect::<Vec<_>>(), 2);
    assert!(err.contains("t66") && err.contains("t6"), "{err}");

    let missing = dir.path().join("nope.csv");
    let mut args = fit_args(&rep, s(&missing), s(&out));
    args.extend(["--penalty", "cl2"].map(String::from));
    fails_with(&args.iter().map(String::as_str).collect::<Vec<_>>(), 2);

    let mut args = fit_args(&rep, s(&x), s(&out));
    args.extend(["--penalty", "cl2", "--lambda", "-1"].map(String::from));
    fails_with(&args.iter().map(String::as_str).collect::<Vec<_>>(), 2);

    fails_with(&["--threads", "0", "simulate", "--scenario", "supp_smalltree", "--out", s(&out)], 2);
    fails_with(&["simulate", "--scenario", "nonsense", "--out", s(&out)], 2);
}
