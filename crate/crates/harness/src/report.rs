//! Report and artifact files. Output is a pure function of the results, so
//! re-emitting the same results rewrites identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use weaksup::io::write_matrix_csv;
use weaksup::problem::WeakDataset;
use weaksup::softmax::Classifier;

use crate::crossval::CvResult;
use crate::error::{HarnessError, Result};
use crate::experiment::{ExperimentConfig, ExperimentResult};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub task: String,
    pub mode: String,
    pub lambda: f64,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub gap: Option<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
}

impl ExperimentRecord {
    pub fn from_run(res: &ExperimentResult) -> Self {
        let acc = res.metrics.as_ref().map(|m| m.accuracy);
        Self {
            task: res.task.to_string(),
            mode: res.mode.to_string(),
            lambda: res.lambda,
            accuracy_mean: acc,
            accuracy_std: acc.map(|_| 0.0),
            gap: res.gap,
            wall_time_s: res.wall_time_s,
            seed: res.seed,
        }
    }

    /// Cross-validated record; `lambda` is the most frequently chosen value
    /// (the smallest among ties).
    pub fn from_cv(cv: &CvResult, cfg: &ExperimentConfig) -> Self {
        let mut lambda = cfg.lambda();
        let mut best = 0;
        for &l in &cv.chosen_lambdas {
            let count = cv.chosen_lambdas.iter().filter(|&&m| m == l).count();
            if count > best || (count == best && l < lambda) {
                best = count;
                lambda = l;
            }
        }
        Self {
            task: cfg.task.to_string(),
            mode: cfg.mode.to_string(),
            lambda,
            accuracy_mean: Some(cv.mean),
            accuracy_std: Some(cv.std),
            gap: None,
            wall_time_s: cv.wall_time_s,
            seed: cfg.seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub experiments: Vec<ExperimentRecord>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if !dir.is_dir() {
        return Err(HarnessError::Spec(format!("{} is not a directory", dir.display())));
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x}"))
}

/// `report.json` and the text report `report.txt`, one block per experiment.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    ensure_dir(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;
    let mut txt = String::new();
    for (i, e) in report.experiments.iter().enumerate() {
        if i > 0 {
            txt.push('\n');
        }
        let _ = writeln!(txt, "[experiment {}]", i + 1);
        let _ = writeln!(txt, "task: {}", e.task);
        let _ = writeln!(txt, "mode: {}", e.mode);
        let _ = writeln!(txt, "lambda: {}", e.lambda);
        let _ = writeln!(txt, "accuracy: {} ± {}", opt(e.accuracy_mean), opt(e.accuracy_std));
        let _ = writeln!(txt, "gap: {}", opt(e.gap));
        let _ = writeln!(txt, "wall_time_s: {}", e.wall_time_s);
        let _ = writeln!(txt, "seed: {}", e.seed);
    }
    fs::write(dir.join("report.txt"), txt)?;
    Ok(())
}

/// `assignments.csv`: instance_id, bag_id, latent_label, max_score.
pub fn write_assignments(dir: &Path, ds: &WeakDataset, labels: &[usize], max_scores: &[f64]) -> Result<()> {
    if labels.len() != ds.len() || max_scores.len() != ds.len() {
        return Err(HarnessError::Spec("assignment length differs from the dataset".into()));
    }
    ensure_dir(dir)?;
    let bag_of = ds.instance_bags();
    let mut w = csv::Writer::from_path(dir.join("assignments.csv"))?;
    w.write_record(["instance_id", "bag_id", "latent_label", "max_score"])?;
    for n in 0..ds.len() {
        w.write_record([n.to_string(), ds.bags[bag_of[n]].id.clone(), labels[n].to_string(), max_scores[n].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Plot-data CSV with a header row.
pub fn write_plot_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(HarnessError::Spec("plot row width differs from the header".into()));
        }
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `trace.csv` (outer iterations), `inner_trace.csv` and `em_trace.csv`.
pub fn write_traces(dir: &Path, res: &ExperimentResult) -> Result<()> {
    let rows: Vec<Vec<String>> = res
        .outer_trace
        .iter()
        .map(|r| {
            [r.iter as f64, r.value, r.gap, r.t, r.inner_iterations as f64, r.violation, r.multiplier, r.min_eig, r.diag_dev, r.grad_dot_z]
                .iter()
                .map(|v| v.to_string())
                .collect()
        })
        .collect();
    write_plot_csv(
        &dir.join("trace.csv"),
        &["iter", "value", "gap", "t", "inner_iterations", "violation", "multiplier", "min_eig", "diag_dev", "grad_dot_z"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = res
        .inner_trace
        .iter()
        .map(|(o, r)| {
            [*o as f64, r.iter as f64, r.value, r.stationarity, r.lipschitz, r.row_residual, r.col_residual]
                .iter()
                .map(|v| v.to_string())
                .collect()
        })
        .collect();
    write_plot_csv(
        &dir.join("inner_trace.csv"),
        &["outer_iter", "iter", "value", "stationarity", "lipschitz", "row_residual", "col_residual"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = res.em_trace.iter().enumerate().map(|(i, v)| vec![i.to_string(), v.to_string()]).collect();
    write_plot_csv(&dir.join("em_trace.csv"), &["step", "objective"], &rows)
}

/// `Z.csv`: one line per row, comma-separated.
pub fn write_z(dir: &Path, z: &DMatrix<f64>) -> Result<()> {
    ensure_dir(dir)?;
    write_matrix_csv(&dir.join("Z.csv"), z)?;
    Ok(())
}

/// `classifier.csv`: one row per latent label, `label, b, w_1, …, w_d`.
pub fn write_classifier(dir: &Path, c: &Classifier) -> Result<()> {
    let d = c.w.ncols();
    let mut header = vec!["label".to_string(), "b".to_string()];
    header.extend((1..=d).map(|j| format!("w{j}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..c.w.nrows())
        .map(|p| {
            let mut r = vec![p.to_string(), c.b[p].to_string()];
            r.extend(c.w.row(p).iter().map(|v| v.to_string()));
            r
        })
        .collect();
    write_plot_csv(&dir.join("classifier.csv"), &header_ref, &rows)
}

/// Every artifact of one run plus its single-experiment report.
pub fn emit_run(dir: &Path, ds: &WeakDataset, res: &ExperimentResult, emit_z: bool) -> Result<()> {
    write_report(dir, &Report { experiments: vec![ExperimentRecord::from_run(res)] })?;
    write_assignments(dir, ds, &res.predictions, &res.max_scores)?;
    write_traces(dir, res)?;
    if let Some(c) = &res.classifier {
        write_classifier(dir, c)?;
    }
    if emit_z {
        if let Some(z) = &res.z {
            write_z(dir, z)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_valid_json() {
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &Report::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(v["experiments"].as_array().unwrap().len(), 0);
    }

    #[test]
    fn report_keys_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let rec = ExperimentRecord {
            task: "cluster".into(),
            mode: "ours".into(),
            lambda: 0.1,
            accuracy_mean: Some(0.9),
            accuracy_std: Some(0.0),
            gap: None,
            wall_time_s: 1.5,
            seed: 7,
        };
        let report = Report { experiments: vec![rec] };
        write_report(dir.path(), &report).unwrap();
        let first = fs::read(dir.path().join("report.json")).unwrap();
        write_report(dir.path(), &report).unwrap();
        assert_eq!(first, fs::read(dir.path().join("report.json")).unwrap());
        let v: serde_json::Value = serde_json::from_slice(&first).unwrap();
        let keys: Vec<&String> = v["experiments"][0].as_object().unwrap().keys().collect();
        let mut want = vec!["accuracy_mean", "accuracy_std", "gap", "lambda", "mode", "seed", "task", "wall_time_s"];
        want.sort();
        let mut got: Vec<&str> = keys.iter().map(|k| k.as_str()).collect();
        got.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn z_csv_shape() {
        let dir = tempfile::tempdir().unwrap();
        write_z(dir.path(), &DMatrix::identity(4, 4)).unwrap();
        let text = fs::read_to_string(dir.path().join("Z.csv")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.split(',').count() == 4));
    }
}
