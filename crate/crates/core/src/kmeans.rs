//! Lloyd's k-means with k-means++ seeding and seeded restarts.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KMeansResult {
    /// Cluster of every row.
    pub labels: Vec<usize>,
    /// `k × d` centers.
    pub centers: DMatrix<f64>,
    /// Sum of squared distances to the assigned centers.
    pub distortion: f64,
    /// Lloyd iterations of the kept restart.
    pub iterations: usize,
}

fn sq_dist(x: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    x.row(i).iter().zip(c.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Best of `restarts` runs; restart `r` uses the generator seeded with
/// `seed + r`, so results are reproducible and independent of scheduling.
pub fn kmeans(x: &DMatrix<f64>, k: usize, restarts: usize, max_iter: usize, seed: u64) -> Result<KMeansResult> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::arg(format!("k-means needs 1 ≤ k ≤ {n}, got {k}")));
    }
    if restarts == 0 {
        return Err(Error::arg("k-means needs at least one restart"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("k-means input has non-finite entries"));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r as u64));
        let res = lloyd(x, plus_plus(x, k, &mut rng), max_iter);
        if best.as_ref().is_none_or(|b| res.distortion < b.distortion) {
            best = Some(res);
        }
    }
    Ok(best.unwrap())
}

/// k-means++ seeding: each new center is drawn with probability proportional
/// to the squared distance to the nearest chosen center.
pub fn plus_plus(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let n = x.nrows();
    let mut centers = DMatrix::zeros(k, x.ncols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from(&x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers, 0)).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from(&x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x, i, &centers, c));
        }
    }
    centers
}

/// Lloyd iterations from the given centers until the assignment is stable.
/// An emptied cluster is re-seeded at the point farthest from its center.
pub fn lloyd(x: &DMatrix<f64>, mut centers: DMatrix<f64>, max_iter: usize) -> KMeansResult {
    let (n, d) = x.shape();
    let k = centers.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut bd = f64::INFINITY;
            for c in 0..k {
                let dd = sq_dist(x, i, &centers, c);
                if dd < bd {
                    bd = dd;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;
        let mut sums = DMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(labels[i]);
            row += x.row(i);
            counts[labels[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let row = sums.row(c) / counts[c] as f64;
                centers.row_mut(c).copy_from(&row);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(x, a, &centers, labels[a]).total_cmp(&sq_dist(x, b, &centers, labels[b]))
                    })
                    .unwrap();
                centers.row_mut(c).copy_from(&x.row(far));
                counts[c] = 1;
            }
        }
    }
    let distortion = (0..n).map(|i| sq_dist(x, i, &centers, labels[i])).sum();
    KMeansResult {
        labels,
        centers,
        distortion,
        iterations,
    }
}
