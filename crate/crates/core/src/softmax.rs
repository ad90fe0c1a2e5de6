//! Soft-max loss with feasible-set normalisation, the bag-balancing entropy,
//! the weakly supervised objective, and the algebraic identities behind the
//! convex relaxation (log-sum-exp conjugate, closed-form dual value).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::WeakDataset;

/// Tolerance on the weighted intercept residual `‖(q − z)ᵀπ‖_∞` below which a
/// dual response is considered feasible.
pub const INTERCEPT_TOL: f64 = 1e-8;

/// `log Σ exp(s_i)` with max-subtraction.
pub fn log_sum_exp(s: &[f64]) -> f64 {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + s.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropy `−Σ v log v` with `0 log 0 = 0`.
pub fn entropy(v: &[f64]) -> f64 {
    -v.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Soft-max of `scores` restricted to `feasible`, written into a length-`P`
/// vector that is zero off the feasible set.
pub fn feasible_softmax(scores: &[f64], feasible: &[usize]) -> Vec<f64> {
    let sub: Vec<f64> = feasible.iter().map(|&p| scores[p]).collect();
    let lse = log_sum_exp(&sub);
    let mut out = vec![0.0; scores.len()];
    for &p in feasible {
        out[p] = (scores[p] - lse).exp();
    }
    out
}

/// `N × P` soft assignment; every row lies in the simplex restricted to the
/// instance's feasible latent labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub z: DMatrix<f64>,
}

impl Assignment {
    /// Validate shape, simplex rows and feasible support.
    pub fn new(z: DMatrix<f64>, ds: &WeakDataset) -> Result<Self> {
        if z.nrows() != ds.len() || z.ncols() != ds.latent_count() {
            return Err(Error::dim(format!(
                "assignment is {}x{}, expected {}x{}",
                z.nrows(),
                z.ncols(),
                ds.len(),
                ds.latent_count()
            )));
        }
        let feasible = ds.instance_feasible();
        for n in 0..z.nrows() {
            let row = z.row(n);
            if row.iter().any(|&v| v < 0.0) || (row.sum() - 1.0).abs() > 1e-10 {
                return Err(Error::arg(format!("assignment row {n} is not in the simplex")));
            }
            for p in 0..z.ncols() {
                if z[(n, p)] != 0.0 && !feasible[n].contains(&p) {
                    return Err(Error::InfeasibleAssignment { label: p, mass: z[(n, p)] });
                }
            }
        }
        Ok(Self { z })
    }

    /// One-hot assignment from hard labels.
    pub fn from_labels(labels: &[usize], latent_count: usize) -> Self {
        let mut z = DMatrix::zeros(labels.len(), latent_count);
        for (n, &l) in labels.iter().enumerate() {
            z[(n, l)] = 1.0;
        }
        Self { z }
    }

    /// Row-wise argmax, ties to the lowest label.
    pub fn hard_labels(&self) -> Vec<usize> {
        (0..self.z.nrows())
            .map(|n| {
                let row = self.z.row(n);
                let mut best = 0;
                for p in 1..row.len() {
                    if row[p] > row[best] {
                        best = p;
                    }
                }
                best
            })
            .collect()
    }
}

/// Linear multi-class classifier: scores `W φ(x) + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// `P × d`.
    pub w: DMatrix<f64>,
    /// Length `P`.
    pub b: DVector<f64>,
}

impl Classifier {
    pub fn zeros(latent_count: usize, dim: usize) -> Self {
        Self {
            w: DMatrix::zeros(latent_count, dim),
            b: DVector::zeros(latent_count),
        }
    }

    /// `N × P` scores for the rows of `phi` (`N × d`).
    pub fn scores(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = phi * self.w.transpose();
        for mut row in s.row_iter_mut() {
            row += self.b.transpose();
        }
        s
    }
}

/// `N × P` dual response with simplex rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DualResponse {
    pub q: DMatrix<f64>,
}

/// Soft-max loss of one instance, normalised over its feasible labels.
pub fn instance_loss(z_n: &[f64], scores: &[f64], feasible: &[usize]) -> Result<f64> {
    if z_n.len() != scores.len() {
        return Err(Error::dim("assignment row and score vector differ in length"));
    }
    for (p, &v) in z_n.iter().enumerate() {
        if v != 0.0 && !feasible.contains(&p) {
            return Err(Error::InfeasibleAssignment { label: p, mass: v });
        }
    }
    if feasible.is_empty() {
        return Err(Error::arg("empty feasible label set"));
    }
    // lse − s_p = (m − s_p) + ln(1 + Σ_{k≠argmax} e^{s_k − m}), with ln_1p so
    // that small losses keep full relative accuracy.
    let top = feasible
        .iter()
        .copied()
        .max_by(|&a, &b| scores[a].total_cmp(&scores[b]))
        .unwrap();
    let m = scores[top];
    let rest: f64 = feasible.iter().filter(|&&p| p != top).map(|&p| (scores[p] - m).exp()).sum();
    let tail = rest.ln_1p();
    let loss: f64 = feasible.iter().map(|&p| z_n[p] * ((m - scores[p]) + tail)).sum();
    // Below half an ulp of 1 the loss is numerically saturated (score gap of
    // roughly 37 or more); report it as exactly zero.
    Ok(if loss < f64::EPSILON / 2.0 { 0.0 } else { loss })
}

/// `H(z) = Σ_i h(Σ_{n∈bag i} π_n z_n)`.
pub fn balance_entropy(z: &DMatrix<f64>, ds: &WeakDataset) -> f64 {
    let p = z.ncols();
    ds.bags
        .iter()
        .map(|bag| {
            let mut agg = vec![0.0; p];
            for &n in &bag.members {
                for (k, a) in agg.iter_mut().enumerate() {
                    *a += ds.weights[n] * z[(n, k)];
                }
            }
            entropy(&agg)
        })
        .sum()
}

/// Weakly supervised objective
/// `Σ_n π_n ℓ(z_n, W φ_n + b) − H(z) + λ/(2P) ‖W‖²_F` on explicit features
/// `phi` (`N × d`).
pub fn objective_f(z: &DMatrix<f64>, c: &Classifier, phi: &DMatrix<f64>, ds: &WeakDataset, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::arg(format!("lambda must be positive, got {lambda}")));
    }
    if phi.nrows() != ds.len() || phi.ncols() != c.w.ncols() || z.nrows() != ds.len() || z.ncols() != c.w.nrows() {
        return Err(Error::dim("objective inputs have inconsistent shapes"));
    }
    let feasible = ds.instance_feasible();
    let scores = c.scores(phi);
    let mut loss = 0.0;
    for n in 0..ds.len() {
        let zn: Vec<f64> = z.row(n).iter().copied().collect();
        let sn: Vec<f64> = scores.row(n).iter().copied().collect();
        loss += ds.weights[n] * instance_loss(&zn, &sn, feasible[n])?;
    }
    let p = c.w.nrows() as f64;
    Ok(loss - balance_entropy(z, ds) + lambda / (2.0 * p) * c.w.norm_squared())
}

/// Both sides of `log Σ_p exp(t_p) = max_{v ∈ simplex} vᵀt + h(v)`.
#[derive(Clone, Debug)]
pub struct ConjugatePair {
    pub log_sum_exp: f64,
    pub max_form: f64,
    pub maximizer: Vec<f64>,
}

pub fn conjugate_identity(t: &[f64]) -> ConjugatePair {
    let all: Vec<usize> = (0..t.len()).collect();
    let v = feasible_softmax(t, &all);
    let max_form = v.iter().zip(t).map(|(a, b)| a * b).sum::<f64>() + entropy(&v);
    ConjugatePair {
        log_sum_exp: log_sum_exp(t),
        max_form,
        maximizer: v,
    }
}

/// Value of the inner minimisation over the classifier for a dual response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GValue {
    Finite(f64),
    /// The intercept constraint `(q − z)ᵀπ = 0` fails, so the minimum over the
    /// intercept is unbounded below.
    Infeasible,
}

/// `g(z, q) = −P/(2λ) tr((q − z)(q − z)ᵀ K)` on the intercept-feasible set.
pub fn g_closed(z: &DMatrix<f64>, q: &DMatrix<f64>, k: &DMatrix<f64>, weights: &DVector<f64>, lambda: f64, latent_count: usize) -> Result<GValue> {
    if !(lambda > 0.0) {
        return Err(Error::arg(format!("lambda must be positive, got {lambda}")));
    }
    let n = z.nrows();
    if q.shape() != z.shape() || k.shape() != (n, n) || weights.len() != n {
        return Err(Error::dim("g_closed inputs have inconsistent shapes"));
    }
    let d = q - z;
    let residual = d.transpose() * weights;
    if residual.amax() > INTERCEPT_TOL {
        return Ok(GValue::Infeasible);
    }
    let kd = k * &d;
    let tr: f64 = d.iter().zip(kd.iter()).map(|(a, b)| a * b).sum();
    Ok(GValue::Finite(-(latent_count as f64) / (2.0 * lambda) * tr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Bag, Features, LabelSpace, WeightMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_bag(n: usize, p: usize) -> WeakDataset {
        let bags = vec![Bag { id: "b".into(), label: 0, members: (0..n).collect() }];
        WeakDataset::new(
            Features::Dense(DMatrix::from_fn(n, 2, |i, j| (i + j) as f64 * 0.1)),
            bags,
            LabelSpace::clustering(p).unwrap(),
            WeightMode::Uniform,
        )
        .unwrap()
    }

    #[test]
    fn loss_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((instance_loss(&[1.0, 0.0], &[0.0, 0.0], &[0, 1]).unwrap() - ln2).abs() < 1e-15);
        // Oracle: log(1 + e^{-20}) = e^{-20} − e^{-40}/2 + ..., series to
        // well below double precision.
        let x = (-20f64).exp();
        let expect = x - x * x / 2.0 + x * x * x / 3.0;
        let got = instance_loss(&[1.0, 0.0], &[10.0, -10.0], &[0, 1]).unwrap();
        assert!((got - expect).abs() <= 1e-14 * expect, "{got} vs {expect}");
        assert!((got - 2.06e-9).abs() < 1e-11);
        assert_eq!(instance_loss(&[1.0, 0.0], &[-3.0, 50.0], &[0]).unwrap(), 0.0);
        assert!(matches!(
            instance_loss(&[0.5, 0.5], &[0.0, 0.0], &[0]),
            Err(Error::InfeasibleAssignment { label: 1, .. })
        ));
    }

    #[test]
    fn loss_is_nonnegative_and_saturates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-60.0..60.0)).collect();
            let a: f64 = rng.random();
            let z = [a, 1.0 - a, 0.0];
            assert!(instance_loss(&z, &s, &[0, 1, 2]).unwrap() >= 0.0);
        }
        // A score gap of about 40 saturates to exactly zero.
        assert_eq!(instance_loss(&[1.0, 0.0], &[40.0, 0.0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(instance_loss(&[1.0, 0.0], &[800.0, 0.0], &[0, 1]).unwrap(), 0.0);
        assert!(instance_loss(&[1.0, 0.0], &[30.0, 0.0], &[0, 1]).unwrap() > 0.0);
    }

    #[test]
    fn entropy_examples() {
        let ds = one_bag(4, 2);
        let point = DMatrix::from_fn(4, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
        assert_eq!(balance_entropy(&point, &ds), 0.0);
        let split = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((balance_entropy(&split, &ds) - std::f64::consts::LN_2).abs() < 1e-15);

        let mut two = one_bag(8, 2);
        two.bags = vec![
            Bag { id: "a".into(), label: 0, members: vec![0, 1, 2, 3] },
            Bag { id: "b".into(), label: 0, members: vec![4, 5, 6, 7] },
        ];
        let z = DMatrix::from_fn(8, 2, |i, j| if (i % 4 < 2) == (j == 0) { 1.0 } else { 0.0 });
        // Each bag aggregates to (0.25, 0.25).
        let expect = 2.0 * (-0.5 * 0.25f64.ln());
        assert!((balance_entropy(&z, &two) - expect).abs() < 1e-14);
        assert!((expect - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn objective_examples() {
        let ds = one_bag(4, 2);
        let phi = ds.dense_features().unwrap().clone();
        let c = Classifier::zeros(2, 2);
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.3, 0.7, 0.0, 1.0, 0.5, 0.5]);
        let f = objective_f(&z, &c, &phi, &ds, 0.7).unwrap();
        assert!((f - (std::f64::consts::LN_2 - balance_entropy(&z, &ds))).abs() < 1e-14);
        assert!(objective_f(&z, &c, &phi, &ds, 0.0).is_err());

        let single = one_bag(1, 2);
        let phi1 = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let c1 = Classifier {
            w: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, -0.3, 0.2]),
            b: DVector::from_vec(vec![0.2, -0.1]),
        };
        let z1 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let s = c1.scores(&phi1);
        let loss = instance_loss(&[0.0, 1.0], &[s[(0, 0)], s[(0, 1)]], &[0, 1]).unwrap();
        let f1 = objective_f(&z1, &c1, &phi1, &single, 2.0).unwrap();
        assert!((f1 - (loss + 2.0 / 4.0 * c1.w.norm_squared())).abs() < 1e-14);
    }

    #[test]
    fn conjugate_examples() {
        let c = conjugate_identity(&[0.0; 4]);
        assert!((c.log_sum_exp - 4f64.ln()).abs() < 1e-15);
        assert!((c.max_form - 4f64.ln()).abs() < 1e-15);
        let c = conjugate_identity(&[1.0, 0.0]);
        let expect = (1.0 + std::f64::consts::E).ln();
        assert!((c.log_sum_exp - expect).abs() < 1e-15);
        assert!((c.max_form - expect).abs() < 1e-14);
        assert!((expect - 1.313262).abs() < 1e-6);
        let c = conjugate_identity(&[2.5; 3]);
        assert!((c.max_form - (2.5 + 3f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn g_closed_examples() {
        let w = DVector::from_element(2, 0.5);
        let k = DMatrix::identity(2, 2) / 4.0;
        let z = DMatrix::identity(2, 2);
        assert_eq!(g_closed(&z, &z, &k, &w, 1.0, 2).unwrap(), GValue::Finite(0.0));
        let q = DMatrix::from_element(2, 2, 0.5);
        match g_closed(&z, &q, &k, &w, 1.0, 2).unwrap() {
            GValue::Finite(v) => assert!((v + 0.25).abs() < 1e-15),
            GValue::Infeasible => panic!("feasible response flagged"),
        }
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(g_closed(&z, &bad, &k, &w, 1.0, 2).unwrap(), GValue::Infeasible);
        assert!(g_closed(&z, &q, &DMatrix::identity(3, 3), &w, 1.0, 2).is_err());
    }
}
