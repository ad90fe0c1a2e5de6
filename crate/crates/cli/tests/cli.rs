use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn weaksup(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weaksup")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn synthetic_run_writes_report_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = weaksup(&[
        "synth",
        "--synth",
        "k=3,n=150,noise_dims=10",
        "--kernel",
        "rbf:1.0",
        "--lambda",
        "1.0",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = report(&out);
    let e = &v["experiments"][0];
    assert_eq!(e["task"], "cluster");
    assert_eq!(e["mode"], "ours");
    assert_eq!(e["seed"], 7);
    assert_eq!(e["lambda"], 1.0);
    assert!(e["gap"].as_f64().unwrap() >= 0.0);
    for f in ["report.txt", "assignments.csv", "trace.csv", "inner_trace.csv", "em_trace.csv", "classifier.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("Z.csv").exists());
    let assignments = fs::read_to_string(out.join("assignments.csv")).unwrap();
    assert_eq!(assignments.lines().next().unwrap(), "instance_id,bag_id,latent_label,max_score");
    assert_eq!(assignments.lines().count(), 151);
}

#[test]
fn missing_lambda_names_the_flags() {
    let o = weaksup(&["cluster", "--synth", "k=3"]);
    assert_eq!(o.status.code(), Some(1));
    let msg = stderr(&o);
    assert!(msg.contains("--lambda") && msg.contains("--lambda-grid"), "{msg}");
}

#[test]
fn unknown_flag_and_bad_values_exit_with_one() {
    for args in [
        vec!["cluster", "--synth", "k=3", "--lambda", "1", "--bogus"],
        vec!["cluster", "--synth", "k=3", "--lambda", "1", "--kernel", "poly"],
        vec!["cluster", "--synth", "k=3", "--lambda", "1", "--weights", "heavy"],
        vec!["cluster", "--synth", "k=three", "--lambda", "1"],
        vec!["cluster", "--synth", "k=3", "--lambda=-1"],
        vec!["cluster", "--synth", "k=3", "--lambda", "1", "--mode", "svm"],
    ] {
        let o = weaksup(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("--"), "{args:?}");
    }
    let o = weaksup(&["cluster", "--synth", "k=3", "--lambda", "1", "--kernel", "poly"]);
    assert!(stderr(&o).contains("--kernel"));
}

#[test]
fn help_exits_zero() {
    assert!(weaksup(&["--help"]).status.success());
    assert!(weaksup(&["cluster", "--help"]).status.success());
}

#[test]
fn emit_z_writes_reduced_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let o = weaksup(&["cluster", "--synth", "n=90", "--lambda", "10", "--emit-z", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let z = fs::read_to_string(dir.path().join("Z.csv")).unwrap();
    assert_eq!(z.lines().count(), 90);
    for line in z.lines() {
        let vals: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 90);
    }
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut texts = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = weaksup(&["cluster", "--synth", "n=60,seed=3", "--lambda-grid", "10,1", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let mut v = report(&out);
        for e in v["experiments"].as_array_mut().unwrap() {
            e["wall_time_s"] = serde_json::Value::Null;
        }
        assert_eq!(v["experiments"].as_array().unwrap().len(), 2);
        texts.push((v, fs::read(out.join("assignments.csv")).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn csv_data_needs_classes_and_reads_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let mut text = String::from("bag_id,bag_label,truth,feat_0,feat_1\n");
    for i in 0..30 {
        let c = i % 2;
        let x = 6.0 * c as f64 + 0.1 * (i as f64 % 5.0);
        text.push_str(&format!("all,?,{c},{x},{}\n", 0.05 * i as f64));
    }
    fs::write(&data, text).unwrap();
    let out = dir.path().join("out");
    let o = weaksup(&["cluster", "--data", data.to_str().unwrap(), "--lambda", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--classes"));
    let o = weaksup(&["cluster", "--data", data.to_str().unwrap(), "--classes", "2", "--lambda", "10", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(report(&out)["experiments"][0]["accuracy_mean"], 1.0);
}

#[test]
fn unwritable_output_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("sub");
    let o = weaksup(&["cluster", "--synth", "n=30", "--lambda", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--out"));
}

#[test]
fn mil_protocol_through_crossval() {
    let dir = tempfile::tempdir().unwrap();
    let o = weaksup(&[
        "crossval",
        "--protocol",
        "mil",
        "--synth",
        "pos_bags=5,neg_bags=5,bag_size=4,sep=8",
        "--lambda-grid",
        "10",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let e = &report(dir.path())["experiments"][0];
    assert_eq!(e["task"], "mil");
    assert!(e["accuracy_mean"].as_f64().unwrap() >= 0.9);
    let splits = fs::read_to_string(dir.path().join("splits.csv")).unwrap();
    assert_eq!(splits.lines().count(), 11);
}
