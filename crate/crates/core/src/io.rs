//! CSV ingestion and emission.
//!
//! Dataset file: header `bag_id,bag_label[,truth],feat_0,...,feat_{d-1}`, one
//! instance per row. `bag_label` is a token: `?` marks the unlabeled bag for
//! semi-supervised data, `0`/`1` mark negative/positive bags for MIL, and any
//! other token names a class. The optional `truth` column holds the
//! ground-truth latent label used only for evaluation.
//!
//! Precomputed kernels come as a header-less square CSV plus a manifest CSV
//! with header `bag_id,bag_label[,truth]` listing the instances in order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problem::{Bag, Features, LabelSpace, Task, WeakDataset, WeightMode, UNLABELED_TOKEN};

/// A dataset read from disk together with optional per-instance ground truth.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: WeakDataset,
    pub truth: Option<Vec<usize>>,
    /// Class token of every latent label (semi-supervised data), or the
    /// decimal index otherwise.
    pub class_tokens: Vec<String>,
}

struct Row {
    bag_id: String,
    bag_label: String,
    truth: Option<String>,
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Read an instance-per-row dataset. `latent_count` is required for
/// clustering and ignored otherwise.
pub fn read_dataset(path: &Path, task: Task, latent_count: Option<usize>, mode: WeightMode) -> Result<LoadedDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let (has_truth, first_feat) = check_header(path, &headers, true)?;
    let d = headers.len() - first_feat;
    if d == 0 {
        return Err(format_err(path, "no feature columns"));
    }
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(format_err(path, format!("row {} has {} fields, expected {}", line + 1, record.len(), headers.len())));
        }
        rows.push(Row {
            bag_id: record[0].trim().to_string(),
            bag_label: record[1].trim().to_string(),
            truth: has_truth.then(|| record[2].trim().to_string()),
        });
        for field in record.iter().skip(first_feat) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("row {}: cannot parse {field:?} as a number", line + 1)))?;
            values.push(v);
        }
    }
    if rows.is_empty() {
        return Err(Error::NoInstances);
    }
    let x = DMatrix::from_row_slice(rows.len(), d, &values);
    assemble(path, Features::Dense(x), rows, task, latent_count, mode)
}

/// Read a precomputed kernel and its instance manifest.
pub fn read_precomputed(
    kernel_path: &Path,
    manifest_path: &Path,
    task: Task,
    latent_count: Option<usize>,
    mode: WeightMode,
) -> Result<LoadedDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(manifest_path)?;
    let headers = reader.headers()?.clone();
    let (has_truth, _) = check_header(manifest_path, &headers, false)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(Row {
            bag_id: record[0].trim().to_string(),
            bag_label: record[1].trim().to_string(),
            truth: has_truth.then(|| record[2].trim().to_string()),
        });
    }
    let k = read_kernel_csv(kernel_path)?;
    if k.nrows() != rows.len() {
        return Err(format_err(
            kernel_path,
            format!("kernel is {}x{} but the manifest lists {} instances", k.nrows(), k.ncols(), rows.len()),
        ));
    }
    assemble(manifest_path, Features::Precomputed(k), rows, task, latent_count, mode)
}

/// Header-less square matrix of numbers.
pub fn read_kernel_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record?;
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => return Err(format_err(path, "ragged kernel rows")),
            _ => {}
        }
        for field in record.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| format_err(path, format!("cannot parse {field:?} as a number")))?,
            );
        }
        rows += 1;
    }
    let cols = width.unwrap_or(0);
    if rows != cols {
        return Err(format_err(path, format!("kernel is not square ({rows}x{cols})")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn check_header(path: &Path, headers: &csv::StringRecord, features: bool) -> Result<(bool, usize)> {
    if headers.len() < 2 || headers[0].trim() != "bag_id" || headers[1].trim() != "bag_label" {
        return Err(format_err(path, "header must start with bag_id,bag_label"));
    }
    let has_truth = headers.get(2).map(|h| h.trim() == "truth").unwrap_or(false);
    let first_feat = if has_truth { 3 } else { 2 };
    if features {
        for (j, h) in headers.iter().skip(first_feat).enumerate() {
            if h.trim() != format!("feat_{j}") {
                return Err(format_err(path, format!("expected column feat_{j}, found {h:?}")));
            }
        }
    }
    Ok((has_truth, first_feat))
}

fn assemble(
    path: &Path,
    features: Features,
    rows: Vec<Row>,
    task: Task,
    latent_count: Option<usize>,
    mode: WeightMode,
) -> Result<LoadedDataset> {
    let (labels, class_tokens) = match task {
        Task::Clustering => {
            let p = latent_count.ok_or_else(|| Error::arg("clustering needs the number of latent classes"))?;
            (LabelSpace::clustering(p)?, (0..p).map(|i| i.to_string()).collect())
        }
        Task::Mil => {
            if let Some(bad) = rows.iter().find(|r| r.bag_label != "0" && r.bag_label != "1") {
                return Err(format_err(path, format!("MIL bag label must be 0 or 1, found {:?}", bad.bag_label)));
            }
            (LabelSpace::mil(), vec!["0".to_string(), "1".to_string()])
        }
        Task::Ssl => {
            let mut tokens: Vec<String> = rows
                .iter()
                .map(|r| r.bag_label.clone())
                .filter(|t| t != UNLABELED_TOKEN)
                .collect();
            sort_tokens(&mut tokens);
            tokens.dedup();
            if tokens.len() < 2 {
                return Err(format_err(path, "semi-supervised data needs labeled instances of at least two classes"));
            }
            (LabelSpace::ssl_with_tokens(&tokens)?, tokens)
        }
    };

    let mut bag_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut bags: Vec<Bag> = Vec::new();
    for (n, row) in rows.iter().enumerate() {
        let label = match task {
            Task::Clustering => 0,
            _ => labels
                .label_index(&row.bag_label)
                .ok_or_else(|| format_err(path, format!("unknown bag label {:?}", row.bag_label)))?,
        };
        match bag_index.get(&row.bag_id) {
            Some(&b) => {
                if bags[b].label != label {
                    return Err(format_err(path, format!("bag {} has conflicting labels", row.bag_id)));
                }
                bags[b].members.push(n);
            }
            None => {
                bag_index.insert(row.bag_id.clone(), bags.len());
                bags.push(Bag {
                    id: row.bag_id.clone(),
                    label,
                    members: vec![n],
                });
            }
        }
    }

    let truth = if rows.iter().all(|r| r.truth.is_some()) && !rows.is_empty() && rows[0].truth.is_some() {
        let mut t = Vec::with_capacity(rows.len());
        for row in &rows {
            let tok = row.truth.as_deref().unwrap_or_default();
            let idx = match class_tokens.iter().position(|c| c == tok) {
                Some(i) => i,
                None => tok
                    .parse::<usize>()
                    .map_err(|_| format_err(path, format!("unknown truth label {tok:?}")))?,
            };
            t.push(idx);
        }
        Some(t)
    } else {
        None
    };

    let dataset = WeakDataset::new(features, bags, labels, mode)?;
    Ok(LoadedDataset {
        dataset,
        truth,
        class_tokens,
    })
}

/// Numeric tokens sort numerically, everything else lexicographically after them.
fn sort_tokens(tokens: &mut [String]) {
    tokens.sort_by(|a, b| match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    });
}

/// Write a dataset in the instance-per-row format. `truth` adds the optional
/// ground-truth column.
pub fn write_dataset(path: &Path, ds: &WeakDataset, truth: Option<&[usize]>) -> Result<()> {
    let x = ds
        .dense_features()
        .ok_or_else(|| Error::arg("only datasets with explicit features can be written"))?;
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["bag_id".to_string(), "bag_label".to_string()];
    if truth.is_some() {
        header.push("truth".into());
    }
    header.extend((0..x.ncols()).map(|j| format!("feat_{j}")));
    writeln!(w, "{}", header.join(","))?;
    let bag_of = ds.instance_bags();
    for n in 0..ds.len() {
        let bag = &ds.bags[bag_of[n]];
        let mut fields = vec![bag.id.clone(), ds.labels.bag_labels()[bag.label].clone()];
        if let Some(t) = truth {
            fields.push(t[n].to_string());
        }
        fields.extend(x.row(n).iter().map(|v| v.to_string()));
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Comma-separated matrix, one row per line, no header.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.nrows() {
        let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn reads_ssl_dataset_with_truth() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(
            &path,
            "bag_id,bag_label,truth,feat_0,feat_1\n\
             u,?,A,0.0,1.0\n\
             u,?,B,1.0,0.0\n\
             l0,A,A,0.1,0.9\n\
             l1,B,B,0.9,0.1\n",
        )
        .unwrap();
        let loaded = read_dataset(&path, Task::Ssl, None, WeightMode::Uniform).unwrap();
        assert_eq!(loaded.class_tokens, vec!["A", "B"]);
        assert_eq!(loaded.truth, Some(vec![0, 1, 0, 1]));
        assert_eq!(loaded.dataset.bags.len(), 3);
        assert_eq!(loaded.dataset.latent_count(), 2);
        let feas = loaded.dataset.instance_feasible();
        assert_eq!(feas[0], &[0, 1]);
        assert_eq!(feas[2], &[0]);
        assert_eq!(feas[3], &[1]);
    }

    #[test]
    fn rejects_bad_header_and_bad_mil_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "bag,bag_label,feat_0\nb,1,0.0\n").unwrap();
        assert!(read_dataset(&path, Task::Mil, None, WeightMode::Uniform).is_err());
        fs::write(&path, "bag_id,bag_label,feat_0\nb,2,0.0\n").unwrap();
        assert!(read_dataset(&path, Task::Mil, None, WeightMode::Uniform).is_err());
    }

    #[test]
    fn precomputed_kernel_size_must_match_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let k = dir.path().join("k.csv");
        let m = dir.path().join("m.csv");
        fs::write(&k, "1,0\n0,1\n").unwrap();
        fs::write(&m, "bag_id,bag_label\na,?\na,?\nb,?\n").unwrap();
        assert!(read_precomputed(&k, &m, Task::Clustering, Some(2), WeightMode::Uniform).is_err());
        fs::write(&k, "1,0\n0\n").unwrap();
        assert!(read_kernel_csv(&k).is_err());
        fs::write(&k, "1,0,0\n0,1,0\n0,0,1\n").unwrap();
        let loaded = read_precomputed(&k, &m, Task::Clustering, Some(2), WeightMode::PerBag).unwrap();
        assert_eq!(loaded.dataset.len(), 3);
        assert!((loaded.dataset.weights[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn write_then_read_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let x = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 2.0, 3.25, 1e-3, 7.0]);
        let bags = vec![
            Bag { id: "p".into(), label: 1, members: vec![0, 1] },
            Bag { id: "n".into(), label: 0, members: vec![2] },
        ];
        let ds = WeakDataset::new(Features::Dense(x.clone()), bags, LabelSpace::mil(), WeightMode::PerBag).unwrap();
        write_dataset(&path, &ds, Some(&[1, 0, 0])).unwrap();
        let back = read_dataset(&path, Task::Mil, None, WeightMode::PerBag).unwrap();
        assert_eq!(back.dataset, ds);
        assert_eq!(back.truth, Some(vec![1, 0, 0]));
    }
}
