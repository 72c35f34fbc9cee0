use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rsd_cli::config::RunConfig;
use rsd_cli::pipeline::cell_stem;
use rsd_cli::{emit_report, run_pipeline};
use rsd_core::eval::Metric;
use rsd_core::learners::Algorithm;
use serde_json::{json, Value};

fn rsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsd")).args(args).output().expect("spawn rsd")
}

fn small_config(out: &Path, varieties: &[&str], algorithms: &[&str]) -> Value {
    json!({
        "synth": {"separation": 2.0, "seed": 5, "varieties": varieties},
        "varieties": varieties,
        "algorithms": algorithms,
        "grids": {
            "SVM_RBF": {"C": [1, 10], "gamma": [0.1]},
            "RF": {"n_estimators": [20], "max_depth": [null]},
            "GB": {"learning_rate": [0.2], "max_depth": [2], "n_estimators": [20]},
            "LR": {"C": [1]}
        },
        "k": 3,
        "b_bootstrap": 200,
        "b_permutation": 10,
        "seed": 21,
        "output_dir": out,
    })
}

fn config(v: Value) -> RunConfig {
    serde_json::from_value(v).unwrap()
}

fn write_config(dir: &Path, v: &Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].parse().unwrap()).collect()
}

#[test]
fn missing_manifest_fails_before_writing_anything() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = json!({
        "inputs": {"manifest": "nope/manifest.json", "blocks": "nope/blocks.geojson"},
        "seed": 1,
        "output_dir": out,
    });
    let path = write_config(tmp.path(), &cfg);
    let o = rsd(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("manifest"));
    assert!(!out.exists());
}

#[test]
fn svm_on_one_variety_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let outcome = run_pipeline(&config(small_config(&out, &["Q200"], &["SVM_RBF"]))).unwrap();
    assert_eq!(outcome.cells.len(), 1);
    assert!(outcome.cells[0].is_ok());

    for f in ["screen.csv", "tuning_audit.csv", "metrics_table.csv", "hyperparams_table.csv", "features.csv"] {
        let mut r = csv::Reader::from_path(out.join(f)).unwrap();
        assert!(r.records().count() > 0, "{f} is empty");
    }
    let stem = cell_stem("Q200", Algorithm::SvmRbf);
    for f in [format!("{stem}__bootstrap.csv"), format!("{stem}__null.csv")] {
        let mut r = csv::Reader::from_path(out.join("distributions").join(f)).unwrap();
        assert!(r.records().count() > 0);
    }
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("distributions").join(format!("{stem}__summary.json"))).unwrap())
            .unwrap();
    for key in ["median", "p2.5", "p97.5", "p_value"] {
        assert!(summary["metrics"]["accuracy"][key].is_number(), "missing {key}");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 21);
    assert!(manifest["decisions"]["p_value"].is_string());
    assert_eq!(manifest["cells"][0]["status"], "ok");
    // SVM has no impurity importance
    assert_eq!(fs::read_dir(out.join("importance")).unwrap().count(), 0);

    let metrics = fs::read_to_string(out.join("metrics_table.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(metrics.starts_with("model,variety,class,precision,recall,accuracy\n"));
}

#[test]
fn report_recomputes_medians_from_distributions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_pipeline(&config(small_config(&out, &["SRA14"], &["QDA"]))).unwrap();
    let report = emit_report(&out).unwrap();
    assert_eq!(report.rows.len(), 1);

    let stem = cell_stem("SRA14", Algorithm::Qda);
    let boot = out.join("distributions").join(format!("{stem}__bootstrap.csv"));
    let null = out.join("distributions").join(format!("{stem}__null.csv"));
    for m in Metric::ALL {
        let observed = median(column(&boot, m.as_str()));
        assert_eq!(report.rows[0].metrics[&m].median, observed, "{}", m.as_str());
        let nulls = column(&null, m.as_str());
        let p = (1 + nulls.iter().filter(|&&v| v >= observed).count()) as f64 / (nulls.len() + 1) as f64;
        assert_eq!(report.rows[0].metrics[&m].p_value, p);
    }
    let csv_text = fs::read_to_string(&report.csv).unwrap();
    assert_eq!(csv_text.lines().count(), 2);
}

#[test]
fn report_names_missing_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_pipeline(&config(small_config(&out, &["SRA14"], &["QDA", "LR"]))).unwrap();
    let stem = cell_stem("SRA14", Algorithm::Lr);
    fs::remove_file(out.join("distributions").join(format!("{stem}__null.csv"))).unwrap();
    let err = emit_report(&out).unwrap_err().to_string();
    assert!(err.contains("SRA14/LR"), "{err}");
    assert!(!err.contains("SRA14/QDA"), "{err}");
}

#[test]
fn full_grid_of_cells_gives_thirty_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut v = small_config(&out, &[], &["SVM_RBF", "GB", "RF", "QDA", "LR"]);
    v["synth"] = json!({"separation": 2.0, "seed": 5});
    v.as_object_mut().unwrap().remove("varieties");
    v["grids"]["SVM_RBF"] = json!({"C": [1], "gamma": [0.1]});
    v["b_permutation"] = json!(3);
    let outcome = run_pipeline(&config(v)).unwrap();
    assert_eq!(outcome.failed().count(), 0);
    let report = emit_report(&out).unwrap();
    assert_eq!(report.rows.len(), 30);
    let metrics = fs::read_to_string(out.join("metrics_table.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 61);
}

#[test]
fn staged_commands_reproduce_the_run_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_pipeline(&config(small_config(&out, &["Q200"], &["LR"]))).unwrap();

    let grid = tmp.path().join("grid.json");
    fs::write(&grid, r#"{"C": [1]}"#).unwrap();
    let stage = tmp.path().join("stage");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let o = rsd(&[
        "train",
        "--features",
        &s(&out.join("features.csv")),
        "--variety",
        "Q200",
        "--algorithm",
        "LR",
        "--grid",
        &s(&grid),
        "--k",
        "3",
        "--seed",
        "21",
        "--out",
        &s(&stage),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stem = cell_stem("Q200", Algorithm::Lr);
    let bundle = stage.join(format!("{stem}.bundle.json"));
    let split = stage.join(format!("{stem}.split.csv"));
    let o = rsd(&["evaluate", "--bundle", &s(&bundle), "--split", &s(&split), "--b", "200", "--out", &s(&stage)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let boot = stage.join(format!("{stem}__bootstrap.csv"));
    assert_eq!(
        fs::read(&boot).unwrap(),
        fs::read(out.join("distributions").join(format!("{stem}__bootstrap.csv"))).unwrap()
    );
    let o = rsd(&[
        "permtest",
        "--bundle",
        &s(&bundle),
        "--split",
        &s(&split),
        "--bootstrap",
        &s(&boot),
        "--b",
        "10",
        "--out",
        &s(&stage),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(stage.join(format!("{stem}__null.csv"))).unwrap(),
        fs::read(out.join("distributions").join(format!("{stem}__null.csv"))).unwrap()
    );
}

#[test]
fn train_full_writes_hyperparameter_table() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let o = rsd(&["synth", "--separation", "2", "--seed", "3", "--varieties", "SRA14", "--out", &s(&scene)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stage = tmp.path().join("full");
    let o = rsd(&[
        "train",
        "--features",
        &s(&scene.join("features.csv")),
        "--variety",
        "ALL",
        "--algorithm",
        "QDA",
        "--k",
        "3",
        "--seed",
        "4",
        "--full",
        "--out",
        &s(&stage),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(stage.join("hyperparams_table.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,variety,hyperparameters,params_json,mean_cv_accuracy,tuned_on"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("QDA,ALL,") && row.ends_with(",full"), "{row}");
}

#[test]
fn stage_commands_from_rasters() {
    let tmp = tempfile::tempdir().unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let scene = tmp.path().join("scene");
    assert!(rsd(&["synth", "--seed", "8", "--varieties", "Q200,SRA14", "--out", &s(&scene)]).status.success());
    let pixels = tmp.path().join("pixels.csv");
    let o = rsd(&[
        "ingest",
        "--manifest",
        &s(&scene.join("manifest.json")),
        "--blocks",
        &s(&scene.join("blocks.geojson")),
        "--out",
        &s(&pixels),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let features = tmp.path().join("features.csv");
    assert!(rsd(&["features", "--pixels", &s(&pixels), "--out", &s(&features)]).status.success());
    assert_eq!(fs::read(&features).unwrap(), fs::read(scene.join("features.csv")).unwrap());

    let screen = tmp.path().join("screen.csv");
    assert!(rsd(&["screen", "--features", &s(&features), "--out", &s(&screen)]).status.success());
    let text = fs::read_to_string(&screen).unwrap();
    assert!(text.starts_with("variety,feature,t,df,p,threshold,significant"));
    // 3 settings (Q200, SRA14, ALL) x 28 features
    assert_eq!(text.lines().count(), 1 + 3 * 28);
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"seed\": 1, \"output_dir\": \"x\", \"bogus\": true}").unwrap();
    assert_eq!(rsd(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let missing = tmp.path().join("missing.csv");
    let o = rsd(&["screen", "--features", missing.to_str().unwrap(), "--out", "x.csv"]);
    assert_eq!(o.status.code(), Some(3));

    assert_eq!(rsd(&["train", "--algorithm", "NOPE"]).status.code(), Some(2));
    assert_eq!(rsd(&["--help"]).status.code(), Some(0));
}
