use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn calib(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calib"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn data(name: &str) -> String {
    format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn ece_of_small_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", "p0,p1,label\n0.8,0.2,0\n0.3,0.7,0\n0.6,0.4,1\n");
    let v = json(&calib(&["ece", "--input", p.to_str().unwrap(), "--bins", "1"]));
    assert_eq!(v["n"], 3);
    // mean confidence 0.7, accuracy 1/3
    assert!((v["ece"].as_f64().unwrap() - (0.7 - 1.0 / 3.0)).abs() < 1e-12);

    let out = calib(&["ece", "--input", p.to_str().unwrap(), "--bins", "2", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lo,hi,count,mean_confidence,mean_hit");
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn bad_rows_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", "p0,p1,label\n0.5,0.5,0\n0.5,0.5,2\n");
    let out = calib(&["ece", "--input", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 1"));

    assert_eq!(calib(&["ece", "--input", "/nonexistent.csv"]).status.code(), Some(2));
    assert_eq!(calib(&["synthesize", "--preset", "nope"]).status.code(), Some(2));
    assert_eq!(calib(&["bounds", "--n", "10"]).status.code(), Some(2));
    assert_eq!(
        calib(&["bounds", "--n", "10", "--bins", "2", "--epsilon", "2"]).status.code(),
        Some(2)
    );
}

#[test]
fn bounds_json_and_csv() {
    let v = json(&calib(&[
        "bounds", "--kind", "total_bias_test", "--n", "1000", "--bins", "10", "--lipschitz", "1",
    ]));
    let c = &v[0];
    assert_eq!(c["bound_kind"], "total_bias_test");
    assert!((c["binning_term"].as_f64().unwrap() - 0.2).abs() < 1e-15);

    let out = calib(&["bounds", "--n", "1000", "--bins", "10", "--classes", "3", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 7);

    let v = json(&calib(&["bounds", "--n", "1000", "--bins", "10", "--kl", "2"]));
    assert_eq!(v.as_array().unwrap().len(), 4);
}

#[test]
fn synthesize_then_recalibrate() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("syn.csv");
    let out = calib(&[
        "synthesize", "--preset", "temperature-distort", "--n", "400", "--seed", "3", "--format", "csv", "--out",
        dump.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&dump).unwrap();
    assert_eq!(text.lines().count(), 401);

    let v = json(&calib(&["recalibrate", "--input", dump.to_str().unwrap()]));
    let t = v["map"]["t"].as_f64().unwrap();
    assert!(t > 1.1, "t = {t}");
    assert!(v["ece_after"].as_f64().unwrap() < v["ece_before"].as_f64().unwrap());

    let v = json(&calib(&[
        "recalibrate", "--input", dump.to_str().unwrap(), "--method", "pbr", "--alpha", "0.1", "--seed", "1",
    ]));
    assert_eq!(v["map"]["family"], "temperature");
    assert!(v["kl"].as_f64().unwrap() >= 0.0);

    let out = calib(&["recalibrate", "--input", dump.to_str().unwrap(), "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("p0,p1,p2,label"));

    let jl = calib(&["synthesize", "--preset", "binary-sine", "--n", "5"]);
    let text = String::from_utf8(jl.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.contains("\"label\"")));
}

#[test]
fn compare_report_replays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.json");
    let args = |out: &Path| -> Vec<String> {
        [
            "experiment", "compare", "--preset", "temperature-distort", "--methods", "uncalibrated,temperature",
            "--folds", "3", "--seed", "9", "--out",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain([out.to_string_lossy().into_owned()])
        .collect()
    };
    let a: Vec<String> = args(&first);
    let out = calib(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&first).unwrap()).unwrap();
    assert_eq!(report["schema"], 1);
    assert_eq!(report["experiment"], "compare");
    assert_eq!(report["cells"].as_array().unwrap().len(), 6);

    let second = dir.path().join("b.json");
    let out = calib(&[
        "experiment", "compare", "--config", first.to_str().unwrap(), "--out", second.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    let wrong = calib(&["experiment", "klgap", "--config", first.to_str().unwrap()]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn convergence_csv_rows() {
    let out = calib(&[
        "experiment", "convergence", "--preset", "binary-sine", "--n-grid", "50,100,400,2000", "--seeds", "20",
        "--format", "csv",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 81);
    assert!(text.starts_with("n,seed,bins,ece,bias"));

    let bad = calib(&["experiment", "convergence", "--n-grid", "100,200,300,400"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn failed_cell_exits_with_3() {
    // 500 rows cannot supply n_re + n_te = 2000
    let out = calib(&["experiment", "klgap", "--input", &data("logits_k10.csv"), "--replicates", "2"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replicate=0"));
}

#[test]
fn bundled_dump_through_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("r.json");
    let out = calib(&[
        "experiment", "compare", "--input", &data("logits_k10.csv"), "--methods", "uncalibrated,temperature",
        "--out", out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["summary"]["n"], 500);
    assert_eq!(v["config"]["source"]["source"], "dump");
}
