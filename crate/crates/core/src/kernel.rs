//! Kernel evaluation, weight rescaling of the Gram matrix and low-rank
//! factorisation.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::read_kernel_csv;
use crate::problem::{Features, WeakDataset};

#[derive(Clone, Debug, PartialEq)]
pub enum KernelSpec {
    Linear,
    /// `exp(−‖x − y‖² / (2σ²))`.
    Gaussian { width: f64 },
    /// Kernel read from a square CSV file, or taken from the dataset when
    /// `path` is `None`.
    Precomputed { path: Option<PathBuf> },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { width } if !(*width > 0.0 && width.is_finite()) => {
                Err(Error::arg(format!("gaussian width must be positive, got {width}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        match self {
            KernelSpec::Linear => Some(x.iter().zip(y).map(|(a, b)| a * b).sum()),
            KernelSpec::Gaussian { width } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                Some((-d2 / (2.0 * width * width)).exp())
            }
            KernelSpec::Precomputed { .. } => None,
        }
    }
}

/// Raw `N × N` Gram matrix of the dataset under `spec`.
pub fn compute_gram(ds: &WeakDataset, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = ds.len();
    match (spec, &ds.features) {
        (KernelSpec::Precomputed { path }, features) => {
            let m = match (path, features) {
                (Some(p), _) => read_kernel_csv(p)?,
                (None, Features::Precomputed(k)) => k.clone(),
                (None, Features::Dense(_)) => {
                    return Err(Error::arg("precomputed kernel requested but no kernel was supplied"))
                }
            };
            if m.nrows() != m.ncols() {
                return Err(Error::dim(format!("precomputed kernel is {}x{}", m.nrows(), m.ncols())));
            }
            if m.nrows() != n {
                return Err(Error::dim(format!("precomputed kernel has size {} but N = {n}", m.nrows())));
            }
            Ok((&m + m.transpose()) * 0.5)
        }
        (_, Features::Precomputed(_)) => Err(Error::arg("dataset only carries a precomputed kernel")),
        (KernelSpec::Linear, Features::Dense(x)) => {
            let g = x * x.transpose();
            Ok((&g + g.transpose()) * 0.5)
        }
        (KernelSpec::Gaussian { width }, Features::Dense(x)) => {
            let sq: Vec<f64> = (0..n).map(|i| x.row(i).norm_squared()).collect();
            let cross = x * x.transpose();
            let scale = 1.0 / (2.0 * width * width);
            Ok(DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0
                } else {
                    let (a, b) = if i < j { (i, j) } else { (j, i) };
                    let d2 = (sq[a] + sq[b] - 2.0 * cross[(a, b)]).max(0.0);
                    (-d2 * scale).exp()
                }
            }))
        }
    }
}

/// Median Euclidean distance over all distinct pairs; the default Gaussian
/// width.
pub fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push((x.row(i) - x.row(j)).norm());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let m = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// `K = Diag(π) · G · Diag(π)` with an optional factor `Φ` (`K ≈ ΦΦᵀ`).
#[derive(Clone, Debug)]
pub struct ReweightedGram {
    pub k: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub low_rank: Option<DMatrix<f64>>,
}

impl ReweightedGram {
    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }

    /// Attach a pivoted Cholesky factor with relative Frobenius error `tol`.
    pub fn with_low_rank(mut self, tol: f64) -> Result<Self> {
        self.low_rank = Some(low_rank_factor(&self, tol)?);
        Ok(self)
    }
}

pub fn reweight(g: &DMatrix<f64>, weights: &DVector<f64>) -> Result<ReweightedGram> {
    if g.nrows() != g.ncols() || g.nrows() != weights.len() {
        return Err(Error::dim(format!(
            "Gram is {}x{} but there are {} weights",
            g.nrows(),
            g.ncols(),
            weights.len()
        )));
    }
    let k = DMatrix::from_fn(g.nrows(), g.ncols(), |i, j| weights[i] * g[(i, j)] * weights[j]);
    Ok(ReweightedGram {
        k,
        weights: weights.clone(),
        low_rank: None,
    })
}

/// Pivoted incomplete Cholesky factor `Φ` (`N × r`) of the reweighted Gram
/// matrix with `‖K − ΦΦᵀ‖_F ≤ tol · ‖K‖_F`.
pub fn low_rank_factor(k: &ReweightedGram, tol: f64) -> Result<DMatrix<f64>> {
    Ok(pivoted_cholesky(&k.k, tol)?.factor)
}

#[derive(Clone, Debug)]
pub struct PivotedCholesky {
    /// `N × r`, lower triangular on the pivot rows.
    pub factor: DMatrix<f64>,
    pub pivots: Vec<usize>,
    /// Diagonal jitter that was added before factorising (0 when none).
    pub jitter: f64,
}

/// Greedy pivoted Cholesky of a symmetric PSD matrix.
///
/// The residual `E = M − ΦΦᵀ` is PSD, so `‖E‖_F ≤ tr(E)`; the factorisation
/// stops once the residual trace drops below `tol · ‖M‖_F`. A matrix that
/// turns out to be indefinite is retried once with jitter
/// `1e-10 · tr(M) / N` on the diagonal.
pub fn pivoted_cholesky(m: &DMatrix<f64>, tol: f64) -> Result<PivotedCholesky> {
    if !(tol > 0.0) {
        return Err(Error::arg(format!("low-rank tolerance must be positive, got {tol}")));
    }
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dim("pivoted Cholesky needs a square matrix"));
    }
    match factorize(m, tol, 0.0) {
        Some(f) => Ok(f),
        None => {
            let jitter = 1e-10 * m.trace().abs().max(f64::MIN_POSITIVE) / n.max(1) as f64;
            Ok(factorize(m, tol, jitter).unwrap_or_else(|| {
                // Still indefinite: keep whatever positive part was found.
                factorize_lenient(m, tol, jitter)
            }))
        }
    }
}

fn factorize(m: &DMatrix<f64>, tol: f64, jitter: f64) -> Option<PivotedCholesky> {
    let f = factorize_lenient(m, tol, jitter);
    // Any clearly negative residual diagonal signals indefiniteness.
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut residual = m.diagonal().add_scalar(jitter);
    for j in 0..f.factor.ncols() {
        for i in 0..f.factor.nrows() {
            residual[i] -= f.factor[(i, j)] * f.factor[(i, j)];
        }
    }
    if residual.iter().any(|&d| d < -1e-9 * scale) {
        None
    } else {
        Some(f)
    }
}

fn factorize_lenient(m: &DMatrix<f64>, tol: f64, jitter: f64) -> PivotedCholesky {
    let n = m.nrows();
    let target = tol * m.norm();
    let mut diag: Vec<f64> = (0..n).map(|i| m[(i, i)] + jitter).collect();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut used = vec![false; n];
    loop {
        let residual_trace: f64 = diag.iter().zip(&used).filter(|(_, &u)| !u).map(|(d, _)| d.max(0.0)).sum();
        if residual_trace <= target || pivots.len() == n {
            break;
        }
        let (piv, &dmax) = match diag
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .max_by(|a, b| a.1.total_cmp(b.1))
        {
            Some(x) => x,
            None => break,
        };
        if dmax <= 0.0 {
            break;
        }
        let root = dmax.sqrt();
        let mut col = DVector::zeros(n);
        for i in 0..n {
            if used[i] {
                continue;
            }
            let mut v = m[(i, piv)];
            if i == piv {
                v += jitter;
            }
            for c in &cols {
                v -= c[i] * c[piv];
            }
            col[i] = v / root;
        }
        col[piv] = root;
        used[piv] = true;
        for i in 0..n {
            if !used[i] {
                diag[i] -= col[i] * col[i];
            }
        }
        diag[piv] = 0.0;
        pivots.push(piv);
        cols.push(col);
    }
    let mut factor = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        factor.set_column(j, c);
    }
    PivotedCholesky { factor, pivots, jitter }
}

/// Explicit feature representation the EM classifier trains on, plus the map
/// for unseen points.
#[derive(Clone, Debug)]
pub struct ClassifierFeatures {
    /// `N × d'` training features.
    pub train: DMatrix<f64>,
    pub map: FeatureMap,
}

#[derive(Clone, Debug)]
pub enum FeatureMap {
    /// `φ(x) = x`.
    Linear,
    /// Empirical kernel map through the pivots of a Cholesky factor of the raw
    /// Gram matrix: `φ(x) = L_P⁻¹ k(x_P, x)`.
    Kernel {
        spec: KernelSpec,
        anchors: DMatrix<f64>,
        chol: DMatrix<f64>,
    },
    /// Precomputed kernels only support the training instances.
    Transductive,
}

impl FeatureMap {
    pub fn map(&self, x: &[f64]) -> Result<DVector<f64>> {
        match self {
            FeatureMap::Linear => Ok(DVector::from_column_slice(x)),
            FeatureMap::Kernel { spec, anchors, chol } => {
                if anchors.ncols() != x.len() {
                    return Err(Error::dim(format!("expected {} features, got {}", anchors.ncols(), x.len())));
                }
                let r = anchors.nrows();
                let kx = DVector::from_fn(r, |i, _| {
                    let a: Vec<f64> = anchors.row(i).iter().copied().collect();
                    spec.eval(&a, x).unwrap_or(0.0)
                });
                chol.solve_lower_triangular(&kx)
                    .ok_or_else(|| Error::arg("singular kernel feature map"))
            }
            FeatureMap::Transductive => Err(Error::arg("precomputed kernels cannot map unseen points")),
        }
    }

    pub fn map_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let FeatureMap::Linear = self {
            return Ok(x.clone());
        }
        let rows: Vec<DVector<f64>> = (0..x.nrows())
            .map(|i| {
                let v: Vec<f64> = x.row(i).iter().copied().collect();
                self.map(&v)
            })
            .collect::<Result<_>>()?;
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        Ok(DMatrix::from_fn(x.nrows(), d, |i, j| rows[i][j]))
    }
}

/// Build classifier features: raw features for the linear kernel, otherwise
/// a pivoted Cholesky factor of the raw Gram matrix `gram`.
pub fn classifier_features(ds: &WeakDataset, spec: &KernelSpec, gram: &DMatrix<f64>, tol: f64) -> Result<ClassifierFeatures> {
    match (spec, &ds.features) {
        (KernelSpec::Linear, Features::Dense(x)) => Ok(ClassifierFeatures {
            train: x.clone(),
            map: FeatureMap::Linear,
        }),
        (_, features) => {
            let chol = pivoted_cholesky(gram, tol)?;
            let map = match (spec, features) {
                (KernelSpec::Gaussian { .. }, Features::Dense(x)) => {
                    let anchors = x.select_rows(chol.pivots.iter());
                    let lp = chol.factor.select_rows(chol.pivots.iter());
                    FeatureMap::Kernel {
                        spec: spec.clone(),
                        anchors,
                        chol: lp,
                    }
                }
                _ => FeatureMap::Transductive,
            };
            Ok(ClassifierFeatures {
                train: chol.factor,
                map,
            })
        }
    }
}
