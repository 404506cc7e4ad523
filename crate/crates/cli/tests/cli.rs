use std::path::Path;
use std::process::{Command, Output};

fn icrf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icrf")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = icrf(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Simulated training and test data plus a fitted model.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "n_tree = 10\nn_fold = 3\n").unwrap();
    ok(d, &["simulate", "--scenario", "1", "--n", "120", "--M", "2", "--seed", "1", "--out", "train.csv", "--truth", "train_truth.csv"]);
    ok(d, &["simulate", "--scenario", "1", "--n", "30", "--M", "2", "--seed", "2", "--out", "test.csv", "--truth", "truth.csv", "--resolution", "201"]);
    ok(d, &["fit", "--data", "train.csv", "--config", "c.toml", "--out", "model.json", "--report", "oob.csv", "--seed", "3", "--tau", "5"]);
    dir
}

#[test]
fn simulate_writes_rows_and_features() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--scenario", "1", "--n", "300", "--M", "1", "--seed", "5", "--out", "s1.csv"]);
    let text = read(d, "s1.csv");
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 27);
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 300);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let (l, r): (f64, f64) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        assert!(l < r);
    }
    ok(d, &["simulate", "--scenario", "2", "--n", "10", "--out", "s2.csv"]);
    assert_eq!(read(d, "s2.csv").lines().next().unwrap().split(',').count(), 12);
}

#[test]
fn fit_report_and_determinism() {
    let dir = workspace();
    let d = dir.path();
    let report = read(d, "oob.csv");
    let rows: Vec<Vec<String>> = report.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    let errs: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let marked: Vec<usize> = rows.iter().filter(|r| r[2] == "1").map(|r| r[0].parse().unwrap()).collect();
    let best = errs.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(marked.len(), 1);
    assert_eq!(errs[marked[0] - 1], best);

    ok(d, &["fit", "--data", "train.csv", "--config", "c.toml", "--out", "again.json", "--seed", "3", "--tau", "5"]);
    ok(d, &["--threads", "1", "fit", "--data", "train.csv", "--config", "c.toml", "--out", "single.json", "--seed", "3", "--tau", "5"]);
    let m = std::fs::read(d.join("model.json")).unwrap();
    assert_eq!(m, std::fs::read(d.join("again.json")).unwrap());
    assert_eq!(m, std::fs::read(d.join("single.json")).unwrap());

    std::fs::write(d.join("k1.toml"), "n_tree = 5\nn_fold = 1\n").unwrap();
    ok(d, &["fit", "--data", "train.csv", "--config", "k1.toml", "--out", "k1.json", "--report", "k1.csv"]);
    assert_eq!(read(d, "k1.csv").lines().count(), 2);
}

#[test]
fn predict_curves() {
    let dir = workspace();
    let d = dir.path();
    for smoothed in [true, false] {
        let mut args = vec!["predict", "--model", "model.json", "--query", "test.csv", "--grid", "0:5:0.05"];
        if smoothed {
            args.push("--smoothed");
        }
        let out = ok(d, &args);
        let mut by_query: std::collections::BTreeMap<usize, Vec<(f64, f64)>> = Default::default();
        for line in out.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            by_query.entry(f[0].parse().unwrap()).or_default().push((f[1].parse().unwrap(), f[2].parse().unwrap()));
        }
        assert_eq!(by_query.len(), 30);
        for curve in by_query.values() {
            assert_eq!(curve.len(), 101);
            assert_eq!(curve[0].0, 0.0);
            assert!((curve[0].1 - 1.0).abs() <= 1e-6);
            assert!(curve.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12));
        }
    }
    ok(d, &["predict", "--model", "model.json", "--query", "test.csv", "--fold", "2", "--out", "f2.csv"]);
    assert_eq!(read(d, "f2.csv").lines().count(), 1 + 30 * 101);
}

fn metrics(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .skip(1)
        .map(|l| {
            let (k, v) = l.split_once(',').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn evaluate_with_and_without_truth() {
    let dir = workspace();
    let d = dir.path();
    let plain = metrics(&ok(d, &["evaluate", "--model", "model.json", "--test", "test.csv"]));
    assert_eq!(plain.iter().map(|m| m.0.as_str()).collect::<Vec<_>>(), ["imse1", "imse2"]);
    let full = metrics(&ok(d, &["evaluate", "--model", "model.json", "--test", "test.csv", "--truth", "truth.csv"]));
    assert_eq!(full.len(), 4);
    assert!(full.iter().all(|(_, v)| v.is_finite() && *v >= 0.0));
    let (int, sup) = (full[2].1, full[3].1);
    assert!(int <= 5.0 && sup <= 1.0);

    // Reversing the test rows (and their truth rows) leaves the report unchanged.
    let flip = |name: &str, out: &str| {
        let text = read(d, name);
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1..].reverse();
        std::fs::write(d.join(out), lines.join("\n") + "\n").unwrap();
    };
    flip("test.csv", "test_rev.csv");
    flip("truth.csv", "truth_rev.csv");
    let rev = metrics(&ok(d, &["evaluate", "--model", "model.json", "--test", "test_rev.csv", "--truth", "truth_rev.csv"]));
    for (a, b) in full.iter().zip(&rev) {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() <= 1e-12 * a.1.abs().max(1.0));
    }
}

#[test]
fn importance_table() {
    let dir = workspace();
    let d = dir.path();
    ok(d, &["importance", "--model", "model.json", "--data", "train.csv", "--nperm", "2", "--seed", "9", "--out", "vi.csv"]);
    ok(d, &["importance", "--model", "model.json", "--data", "train.csv", "--nperm", "2", "--seed", "9", "--out", "vi2.csv"]);
    let text = read(d, "vi.csv");
    assert_eq!(text, read(d, "vi2.csv"));
    assert_eq!(text.lines().next().unwrap(), "feature,raw,std_error,rescaled,multiplier");
    let rescaled: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert_eq!(rescaled.len(), 25);
    let max = rescaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((max - 1.0).abs() < 1e-12);
}

#[test]
fn bench_outputs_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("spec.toml"), "n_values = [60]\nn_replicates = 2\nn_tree = 5\nn_fold = 2\nsplit_rules = [\"GWRS\", \"SLR\"]\n").unwrap();
    ok(d, &["bench", "--spec", "spec.toml", "--out", "res"]);
    let raw = read(d, "res/raw.csv");
    assert_eq!(raw.lines().count(), 1 + 2 * 2 * 2);
    let summary = read(d, "res/summary.csv");
    assert!(d.join("res/timing.csv").exists());
    ok(d, &["bench", "--spec", "spec.toml", "--out", "res"]);
    assert_eq!(read(d, "res/raw.csv"), raw);
    assert_eq!(read(d, "res/summary.csv"), summary);
}

#[test]
fn errors_carry_codes_and_fail() {
    let dir = workspace();
    let d = dir.path();
    std::fs::write(d.join("bad.csv"), "left,right,x1\n2,1,0.0\n").unwrap();
    let cases: [(&[&str], &str); 4] = [
        (&["fit", "--data", "bad.csv", "--out", "m.json"], "INVARIANT_VIOLATION"),
        (&["predict", "--model", "model.json", "--query", "test.csv", "--grid", "0:5"], "CONFIG_ERROR"),
        (&["predict", "--model", "model.json", "--query", "bad.csv"], "DIMENSION_MISMATCH"),
        (&["predict", "--model", "model.json", "--query", "test.csv", "--fold", "9"], "INVALID_FOLD"),
    ];
    for (args, code) in cases {
        let out = icrf(d, args);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.starts_with(&format!("error[{code}]")), "{args:?}: {err}");
    }
}
