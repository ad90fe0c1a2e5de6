//! Accuracy under the best label permutation, confusion matrices and the
//! k-means baseline.

use nalgebra::DMatrix;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::Serialize;

use weaksup::kmeans::kmeans;
use weaksup::problem::WeakDataset;

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// Accuracy after the best relabeling of the predictions.
    pub accuracy_best_perm: f64,
    /// Accuracy on the evaluated instances with labels taken at face value
    /// where the task identifies them, otherwise equal to the best-permutation
    /// accuracy.
    pub accuracy: f64,
    /// Fraction of each true class recovered under the best relabeling.
    pub per_class: Vec<f64>,
    /// `confusion[t][p]`: instances of true class `t` predicted as `p`.
    pub confusion: Vec<Vec<usize>>,
    pub objective: Option<f64>,
    pub gap: Option<f64>,
    pub wall_time_s: f64,
}

fn check(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(HarnessError::Spec(format!(
            "prediction has {} labels but truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(HarnessError::Spec("no labels to compare".into()));
    }
    Ok(())
}

/// Square confusion matrix over labels `0..m`, `m` covering both inputs.
pub fn confusion(pred: &[usize], truth: &[usize]) -> Result<Vec<Vec<usize>>> {
    check(pred, truth)?;
    let m = pred.iter().chain(truth).max().unwrap() + 1;
    let mut c = vec![vec![0usize; m]; m];
    for (&p, &t) in pred.iter().zip(truth) {
        c[t][p] += 1;
    }
    Ok(c)
}

/// Best relabeling `perm[p] = t` of predicted labels by the Hungarian method.
pub fn best_permutation(pred: &[usize], truth: &[usize]) -> Result<Vec<usize>> {
    let c = confusion(pred, truth)?;
    let m = c.len();
    // Rows are predicted labels, columns true labels.
    let w = Matrix::from_fn(m, m, |(p, t)| c[t][p] as i64);
    Ok(kuhn_munkres(&w).1)
}

pub fn accuracy_best_perm(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let perm = best_permutation(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(&p, &t)| perm[p] == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Per-class recall under the best relabeling, for classes `0..=max(truth)`.
pub fn per_class_accuracy(pred: &[usize], truth: &[usize]) -> Result<Vec<f64>> {
    let perm = best_permutation(pred, truth)?;
    let classes = truth.iter().max().unwrap() + 1;
    let mut hit = vec![0usize; classes];
    let mut tot = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        tot[t] += 1;
        hit[t] += usize::from(perm[p] == t);
    }
    Ok(hit.iter().zip(&tot).map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 }).collect())
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

#[derive(Clone, Debug)]
pub struct KMeansBaseline {
    pub labels: Vec<usize>,
    /// `k × d`.
    pub centers: DMatrix<f64>,
    pub distortion: f64,
}

/// Lloyd's algorithm on the raw features with `restarts` k-means++ starts.
pub fn kmeans_baseline(ds: &WeakDataset, k: usize, seed: u64, restarts: usize) -> Result<KMeansBaseline> {
    let x = ds
        .dense_features()
        .ok_or_else(|| HarnessError::Spec("k-means needs explicit features".into()))?;
    if k > x.nrows() {
        return Err(HarnessError::Spec(format!("k = {k} exceeds the {} instances", x.nrows())));
    }
    let res = kmeans(x, k, restarts, 300, seed)?;
    Ok(KMeansBaseline {
        labels: res.labels,
        centers: res.centers,
        distortion: res.distortion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_examples() {
        assert_eq!(accuracy_best_perm(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap(), 1.0);
        assert_eq!(accuracy_best_perm(&[1, 0, 2, 0], &[0, 1, 2, 1]).unwrap(), 1.0);
        // Both permutations of two labels agree on two of four points.
        assert_eq!(accuracy_best_perm(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert!(accuracy_best_perm(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn confusion_and_recall() {
        let c = confusion(&[0, 0, 1, 2], &[0, 1, 1, 2]).unwrap();
        assert_eq!(c, vec![vec![1, 0, 0], vec![1, 1, 0], vec![0, 0, 1]]);
        assert_eq!(per_class_accuracy(&[0, 0, 1, 2], &[0, 1, 1, 2]).unwrap(), vec![1.0, 0.5, 1.0]);
    }

    #[test]
    fn unequal_label_ranges() {
        // Predictions use more labels than the truth.
        let a = accuracy_best_perm(&[3, 3, 1, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(a, 0.75);
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
