//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// ascending order (columns of `vectors` follow the same order).
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        if n == 0 {
            return Self {
                values: DVector::zeros(0),
                vectors: DMatrix::zeros(0, 0),
            };
        }
        let eig = SymmetricEigen::new(symmetrize(m));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `V · Diag(f(values)) · Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let s = f(v);
            scaled.column_mut(j).scale_mut(s);
        }
        &scaled * self.vectors.transpose()
    }
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymEigen::new(m).min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymEigen::new(m).max()
}

/// Largest eigenvalue magnitude of a symmetric linear operator by power
/// iteration. Deterministic start vector; returns an estimate within roughly
/// `rtol` relative accuracy, which is all the step-size heuristics need.
pub fn power_norm(n: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>, rtol: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    // A fixed, non-symmetric start avoids landing orthogonal to the top
    // eigenvector on structured inputs.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 7919) % 13) as f64 / 13.0);
    v.normalize_mut();
    let mut est = 0.0;
    for _ in 0..500 {
        let w = apply(&v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let converged = (norm - est).abs() <= rtol * norm;
        est = norm;
        v = w / norm;
        if converged {
            break;
        }
    }
    est
}

pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    power_norm(m.nrows(), |v| m * v, 1e-6)
}

/// Frobenius inner product `tr(Aᵀ B)`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let e = SymEigen::new(&m);
        assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
        let back = e.map(|x| x);
        assert!((back - &m).abs().max() < 1e-12);
    }

    #[test]
    fn power_norm_matches_eigen() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((spectral_norm_sym(&m) - 3.0).abs() < 1e-5);
    }
}
