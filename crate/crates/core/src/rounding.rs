//! Spectral rounding of the relaxed equivalence matrix and EM refinement of
//! the weakly supervised objective, with the hard multiple-instance
//! constraints in the M-step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kmeans::{kmeans, KMeansResult};
use crate::lbfgs::{minimize, LbfgsConfig};
use crate::linalg::SymEigen;
use crate::problem::{Anchor, ReductionMap, WeakDataset};
use crate::softmax::{entropy, log_sum_exp, objective_f, Assignment, Classifier};

/// k-means restarts on the spectral embedding.
pub const ROUNDING_RESTARTS: usize = 20;
/// Feasibility tolerance of the multiple-instance constraints.
pub const MIL_TOL: f64 = 1e-9;
const MU_MAX: f64 = 1e8;

/// Top-`k` eigenvectors of `Z` with unit rows (zero rows stay zero).
#[derive(Clone, Debug)]
pub struct SpectralEmbedding {
    pub u: DMatrix<f64>,
}

pub fn spectral_embedding(z: &DMatrix<f64>, k: usize) -> Result<SpectralEmbedding> {
    let n = z.nrows();
    if z.ncols() != n {
        return Err(Error::dim("Z must be square"));
    }
    if k == 0 || k > n {
        return Err(Error::arg(format!("need 1 ≤ k ≤ {n}, got {k}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("Z has non-finite entries"));
    }
    let eig = SymEigen::new(z);
    let mut u = eig.vectors.columns(n - k, k).clone_owned();
    // Largest eigenvalue first; directions without positive eigenvalue carry
    // no structure and are dropped.
    for j in 0..k / 2 {
        u.swap_columns(j, k - 1 - j);
    }
    for j in 0..k {
        if !(eig.values[n - 1 - j] > 0.0) {
            u.column_mut(j).fill(0.0);
        }
    }
    let norms: Vec<f64> = u.row_iter().map(|r| r.norm()).collect();
    let top = norms.iter().copied().fold(0.0, f64::max);
    if !(top > 0.0) {
        return Err(Error::DegenerateEmbedding);
    }
    for (i, &nrm) in norms.iter().enumerate() {
        if nrm > 1e-12 * top {
            u.row_mut(i).scale_mut(1.0 / nrm);
        } else {
            u.row_mut(i).fill(0.0);
        }
    }
    Ok(SpectralEmbedding { u })
}

/// Hard labels from spectral rounding.
#[derive(Clone, Debug)]
pub struct RoundedLabels {
    /// Latent label of every instance, inside its feasible set.
    pub labels: Vec<usize>,
    /// Latent label of every reduced row before clamping.
    pub reduced_labels: Vec<usize>,
    /// One-hot assignment of `labels`.
    pub assignment: Assignment,
    pub embedding: SpectralEmbedding,
    pub distortion: f64,
}

/// Eigendecompose `Z`, run seeded k-means on the row-normalised top-`k`
/// eigenvectors, map clusters to latent labels through the anchors of `r`,
/// expand to instances and clamp to the feasible sets.
pub fn spectral_round(z: &DMatrix<f64>, k: usize, r: &ReductionMap, ds: &WeakDataset, seed: u64) -> Result<RoundedLabels> {
    if k < 2 {
        return Err(Error::arg("spectral rounding needs k ≥ 2"));
    }
    if z.nrows() != r.reduced_size() || r.len() != ds.len() {
        return Err(Error::dim("Z, reduction map and dataset disagree in size"));
    }
    if k != ds.latent_count() {
        return Err(Error::arg(format!("k = {k} differs from the latent class count {}", ds.latent_count())));
    }
    let embedding = spectral_embedding(z, k)?;
    let km = kmeans(&embedding.u, k, ROUNDING_RESTARTS, 300, seed)?;
    let label_of_cluster = map_clusters(&km, r, k);
    let reduced_labels: Vec<usize> = km.labels.iter().map(|&c| label_of_cluster[c]).collect();

    let mut center_of_label = DMatrix::zeros(k, km.centers.ncols());
    for (c, &l) in label_of_cluster.iter().enumerate() {
        center_of_label.row_mut(l).copy_from(&km.centers.row(c));
    }
    let feasible = ds.instance_feasible();
    let labels: Vec<usize> = (0..ds.len())
        .map(|n| {
            let row = r.column_of(n);
            let l = reduced_labels[row];
            if feasible[n].contains(&l) {
                return l;
            }
            // Feasible label whose cluster center is closest.
            let u = embedding.u.row(row);
            *feasible[n]
                .iter()
                .min_by(|&&a, &&b| {
                    let da = (u - center_of_label.row(a)).norm_squared();
                    let db = (u - center_of_label.row(b)).norm_squared();
                    da.total_cmp(&db)
                })
                .unwrap()
        })
        .collect();
    let assignment = Assignment::from_labels(&labels, k);
    Ok(RoundedLabels {
        labels,
        reduced_labels,
        assignment,
        embedding,
        distortion: km.distortion,
    })
}

/// Cluster → latent label. Anchored clusters take their anchor's label (in
/// label order, first anchor wins); the rest take the unused labels in order
/// of their first reduced row.
fn map_clusters(km: &KMeansResult, r: &ReductionMap, k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut used = vec![false; k];
    let mut anchored: Vec<(usize, usize)> = r
        .anchors()
        .iter()
        .map(|&(a, col)| match a {
            Anchor::Class(l) => (l, col),
            Anchor::Negative => (0, col),
        })
        .filter(|&(l, _)| l < k)
        .collect();
    anchored.sort();
    for (l, col) in anchored {
        let c = km.labels[col];
        if map[c] == usize::MAX && !used[l] {
            map[c] = l;
            used[l] = true;
        }
    }
    let mut first_seen: Vec<usize> = Vec::with_capacity(k);
    for &c in &km.labels {
        if !first_seen.contains(&c) {
            first_seen.push(c);
        }
    }
    for c in 0..k {
        if !first_seen.contains(&c) {
            first_seen.push(c);
        }
    }
    let mut free = (0..k).filter(|&l| !used[l]);
    for c in first_seen {
        if map[c] == usize::MAX {
            map[c] = free.next().unwrap();
        }
    }
    map
}

/// Label with the highest score among `feasible` (all labels by default),
/// ties to the lowest index. Scores outside the feasible set are `−∞`.
pub fn predict(c: &Classifier, x: &[f64], feasible: Option<&[usize]>) -> Result<(usize, Vec<f64>)> {
    if x.len() != c.w.ncols() {
        return Err(Error::dim(format!("expected {} features, got {}", c.w.ncols(), x.len())));
    }
    let p = c.w.nrows();
    let all: Vec<usize> = (0..p).collect();
    let feasible = feasible.unwrap_or(&all);
    if feasible.is_empty() || feasible.iter().any(|&l| l >= p) {
        return Err(Error::arg("feasible labels out of range"));
    }
    let raw = &c.w * DVector::from_column_slice(x) + &c.b;
    let mut scores = vec![f64::NEG_INFINITY; p];
    for &l in feasible {
        scores[l] = raw[l];
    }
    let mut best = usize::MAX;
    for l in 0..p {
        if scores[l] > f64::NEG_INFINITY && (best == usize::MAX || scores[l] > scores[best]) {
            best = l;
        }
    }
    Ok((best, scores))
}

#[derive(Clone, Debug)]
pub struct EMConfig {
    /// Maximum number of E/M alternations.
    pub max_alt: usize,
    /// Gradient-norm tolerance of the M-step.
    pub mstep_tol: f64,
    /// Sup-norm change of the assignment that ends the E-step.
    pub estep_tol: f64,
    pub lambda: f64,
    /// Enforce `s₀(x) ≥ s₁(x)` on negative-bag instances.
    pub mil_constraints: bool,
    /// Alternations stop once `f` decreases by less than this.
    pub min_decrease: f64,
    /// Fit the intercept `b`; when off, `b` stays at zero.
    pub intercept: bool,
}

impl Default for EMConfig {
    fn default() -> Self {
        Self {
            max_alt: 50,
            mstep_tol: 1e-7,
            estep_tol: 1e-10,
            lambda: 1e-2,
            mil_constraints: false,
            min_decrease: 1e-9,
            intercept: true,
        }
    }
}

impl EMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_alt == 0 {
            return Err(Error::arg("max_alt must be positive"));
        }
        for (name, v) in [("mstep_tol", self.mstep_tol), ("estep_tol", self.estep_tol), ("lambda", self.lambda)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::arg(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EMResult {
    pub classifier: Classifier,
    pub assignment: Assignment,
    /// `f` at `(z⁰, W = 0, b = 0)`, then after every accepted M- or E-step.
    pub trace: Vec<f64>,
    pub alternations: usize,
}

/// Data of an M-step: features, weights, feasible sets and targets.
struct MStep<'a> {
    phi: &'a DMatrix<f64>,
    weights: &'a DVector<f64>,
    feasible: Vec<&'a [usize]>,
    z: &'a DMatrix<f64>,
    lambda: f64,
    /// Negative-bag instances and the hinge weight μ.
    negatives: &'a [usize],
    mu: f64,
    intercept: bool,
}

impl MStep<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.z.ncols(), self.phi.ncols())
    }

    fn unpack(&self, x: &DVector<f64>) -> Classifier {
        let (p, d) = self.dims();
        Classifier {
            w: DMatrix::from_column_slice(p, d, &x.as_slice()[..p * d]),
            b: DVector::from_column_slice(&x.as_slice()[p * d..]),
        }
    }

    fn pack(c: &Classifier) -> DVector<f64> {
        let mut v: Vec<f64> = c.w.as_slice().to_vec();
        v.extend_from_slice(c.b.as_slice());
        DVector::from_vec(v)
    }

    /// `Σ π_n ℓ_n + λ/(2P)‖W‖² + μ Σ_neg max(0, s₁ − s₀)²` and its gradient.
    fn eval(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (p, _) = self.dims();
        let c = self.unpack(x);
        let s = c.scores(self.phi);
        let n = s.nrows();
        let mut gs = DMatrix::zeros(n, p);
        let mut value = 0.0;
        for i in 0..n {
            let f = self.feasible[i];
            if f.len() < 2 {
                continue;
            }
            let sub: Vec<f64> = f.iter().map(|&l| s[(i, l)]).collect();
            let lse = log_sum_exp(&sub);
            let pi = self.weights[i];
            for &l in f {
                let q = (s[(i, l)] - lse).exp();
                value += pi * self.z[(i, l)] * (lse - s[(i, l)]);
                gs[(i, l)] = pi * (q - self.z[(i, l)]);
            }
        }
        if self.mu > 0.0 {
            for &i in self.negatives {
                let v = s[(i, 1)] - s[(i, 0)];
                if v > 0.0 {
                    value += self.mu * v * v;
                    gs[(i, 1)] += 2.0 * self.mu * v;
                    gs[(i, 0)] -= 2.0 * self.mu * v;
                }
            }
        }
        let reg = self.lambda / p as f64;
        value += 0.5 * reg * c.w.norm_squared();
        let gw = gs.transpose() * self.phi + &c.w * reg;
        let gb = if self.intercept { gs.row_sum().transpose() } else { DVector::zeros(p) };
        let mut g: Vec<f64> = gw.as_slice().to_vec();
        g.extend_from_slice(gb.as_slice());
        (value, DVector::from_vec(g))
    }

    fn solve(&self, warm: &Classifier, tol: f64) -> Result<(Classifier, f64)> {
        let cfg = LbfgsConfig {
            gtol: tol,
            max_iter: 20000,
            ..LbfgsConfig::default()
        };
        let res = minimize(|x| self.eval(x), Self::pack(warm), &cfg)?;
        Ok((self.unpack(&res.x), res.grad_norm))
    }
}

fn check_em_inputs(z: &Assignment, ds: &WeakDataset, phi: &DMatrix<f64>) -> Result<()> {
    if phi.nrows() != ds.len() || z.z.nrows() != ds.len() || z.z.ncols() != ds.latent_count() {
        return Err(Error::dim("assignment, features and dataset disagree in size"));
    }
    Ok(())
}

/// Unconstrained M-step: weighted ridge multinomial logistic regression with
/// per-instance feasible normalisation, warm-started at `warm`.
pub fn mstep(z: &Assignment, ds: &WeakDataset, phi: &DMatrix<f64>, lambda: f64, tol: f64, warm: Option<&Classifier>) -> Result<Classifier> {
    mstep_with(z, ds, phi, lambda, tol, warm, true)
}

fn mstep_with(z: &Assignment, ds: &WeakDataset, phi: &DMatrix<f64>, lambda: f64, tol: f64, warm: Option<&Classifier>, intercept: bool) -> Result<Classifier> {
    check_em_inputs(z, ds, phi)?;
    let ms = MStep {
        phi,
        weights: &ds.weights,
        feasible: ds.instance_feasible(),
        z: &z.z,
        lambda,
        negatives: &[],
        mu: 0.0,
        intercept,
    };
    let zero = Classifier::zeros(ds.latent_count(), phi.ncols());
    Ok(ms.solve(warm.unwrap_or(&zero), tol)?.0)
}

/// Unconstrained M-step objective `Σ π_n ℓ_n + λ/(2P)‖W‖²` at `c` and its
/// gradient, returned as a classifier-shaped pair `(∂W, ∂b)`.
pub fn mstep_objective(z: &Assignment, ds: &WeakDataset, phi: &DMatrix<f64>, lambda: f64, c: &Classifier) -> Result<(f64, Classifier)> {
    check_em_inputs(z, ds, phi)?;
    if c.w.shape() != (ds.latent_count(), phi.ncols()) || c.b.len() != ds.latent_count() {
        return Err(Error::dim("classifier does not match the features"));
    }
    let ms = MStep {
        phi,
        weights: &ds.weights,
        feasible: ds.instance_feasible(),
        z: &z.z,
        lambda,
        negatives: &[],
        mu: 0.0,
        intercept: true,
    };
    let (v, g) = ms.eval(&MStep::pack(c));
    Ok((v, ms.unpack(&g)))
}

/// Instances of bags whose only feasible latent label is 0.
pub fn negative_instances(ds: &WeakDataset) -> Vec<usize> {
    ds.instance_feasible()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.len() == 1 && f[0] == 0)
        .map(|(n, _)| n)
        .collect()
}

/// Largest `s₁ − s₀` over the negative instances (0 when none violate).
pub fn mil_violation(c: &Classifier, phi: &DMatrix<f64>, negatives: &[usize]) -> f64 {
    let s = c.scores(phi);
    negatives.iter().map(|&n| s[(n, 1)] - s[(n, 0)]).fold(0.0, f64::max)
}

/// M-step under `w₀ᵀφ(x_n) + b₀ ≥ w₁ᵀφ(x_n) + b₁` for every negative-bag
/// instance: quadratic hinge penalty with `μ` growing tenfold up to 1e8, then
/// a shift of `b₀` by the remaining violation so the constraints hold exactly.
pub fn mil_constrained_mstep(z: &Assignment, ds: &WeakDataset, phi: &DMatrix<f64>, lambda: f64, tol: f64, warm: Option<&Classifier>) -> Result<Classifier> {
    mil_mstep_with(z, ds, phi, lambda, tol, warm, true)
}

/// Without the intercept the final shift is unavailable and a violation left
/// at `μ = 1e8` is reported as infeasible.
fn mil_mstep_with(z: &Assignment, ds: &WeakDataset, phi: &DMatrix<f64>, lambda: f64, tol: f64, warm: Option<&Classifier>, intercept: bool) -> Result<Classifier> {
    check_em_inputs(z, ds, phi)?;
    if !ds.labels.is_mil() {
        return Err(Error::arg("constrained M-step needs the multiple-instance label space"));
    }
    let negatives = negative_instances(ds);
    let mut ms = MStep {
        phi,
        weights: &ds.weights,
        feasible: ds.instance_feasible(),
        z: &z.z,
        lambda,
        negatives: &negatives,
        mu: 0.0,
        intercept,
    };
    let zero = Classifier::zeros(2, phi.ncols());
    let (mut c, _) = ms.solve(warm.unwrap_or(&zero), tol)?;
    let mut viol = mil_violation(&c, phi, &negatives);
    ms.mu = 1.0;
    while viol > MIL_TOL && ms.mu <= MU_MAX {
        c = ms.solve(&c, tol)?.0;
        viol = mil_violation(&c, phi, &negatives);
        ms.mu *= 10.0;
    }
    if !intercept {
        if viol > MIL_TOL {
            return Err(Error::MilInfeasible(viol));
        }
        return Ok(c);
    }
    // The quadratic penalty leaves an O(1/μ) violation; moving b₀ up by it
    // satisfies every constraint at once.
    let mut shift = viol;
    while viol > 0.0 {
        c.b[0] += shift;
        viol = mil_violation(&c, phi, &negatives);
        shift = viol.max(f64::EPSILON * (1.0 + c.b[0].abs()));
    }
    if !c.b.iter().chain(c.w.iter()).all(|v| v.is_finite()) {
        return Err(Error::MilInfeasible(f64::INFINITY));
    }
    Ok(c)
}

/// `Σ_n π_n Σ_p z_np c_np − Σ_i h(a_i)` with `c_np = lse_n − s_np`.
fn estep_objective(z: &DMatrix<f64>, cost: &DMatrix<f64>, ds: &WeakDataset) -> f64 {
    let p = z.ncols();
    let mut v = 0.0;
    for bag in &ds.bags {
        let mut agg = vec![0.0; p];
        for &n in &bag.members {
            for l in 0..p {
                if z[(n, l)] > 0.0 {
                    v += ds.weights[n] * z[(n, l)] * cost[(n, l)];
                    agg[l] += ds.weights[n] * z[(n, l)];
                }
            }
        }
        v -= entropy(&agg);
    }
    v
}

/// E-step: minimise `f` over the assignment at a fixed classifier.
///
/// Per bag the problem is convex with optimality condition
/// `z_n ∝ q_n / a` (`q_n` the feasible soft-max, `a` the bag aggregate). We
/// iterate the damped fixed point `z ← z^{1/2} (q/a)^{1/2}` and fall back to
/// the exponentiated-gradient step `z ← z · q/a`, which cannot increase the
/// objective, whenever the damped step does.
pub fn estep(c: &Classifier, ds: &WeakDataset, phi: &DMatrix<f64>, tol: f64, max_iter: usize) -> Result<Assignment> {
    let p = ds.latent_count();
    if phi.nrows() != ds.len() || c.w.nrows() != p || c.w.ncols() != phi.ncols() {
        return Err(Error::dim("classifier, features and dataset disagree in size"));
    }
    let feasible = ds.instance_feasible();
    let s = c.scores(phi);
    let n = ds.len();
    let mut log_q = DMatrix::from_element(n, p, f64::NEG_INFINITY);
    let mut cost = DMatrix::zeros(n, p);
    for i in 0..n {
        let sub: Vec<f64> = feasible[i].iter().map(|&l| s[(i, l)]).collect();
        let lse = log_sum_exp(&sub);
        for &l in feasible[i] {
            log_q[(i, l)] = s[(i, l)] - lse;
            cost[(i, l)] = lse - s[(i, l)];
        }
    }
    let to_z = |lz: &DMatrix<f64>| {
        let mut z = DMatrix::zeros(n, p);
        for i in 0..n {
            let row: Vec<f64> = lz.row(i).iter().copied().collect();
            let lse = log_sum_exp(&row);
            for l in 0..p {
                z[(i, l)] = (lz[(i, l)] - lse).exp();
            }
        }
        z
    };
    let mut log_z = log_q.clone();
    let mut z = to_z(&log_z);
    let mut value = estep_objective(&z, &cost, ds);
    for _ in 0..max_iter {
        // log a per bag.
        let mut log_a = DMatrix::from_element(n, p, 0.0);
        for bag in &ds.bags {
            let mut agg = vec![0.0; p];
            for &m in &bag.members {
                for l in 0..p {
                    agg[l] += ds.weights[m] * z[(m, l)];
                }
            }
            for &m in &bag.members {
                for l in 0..p {
                    log_a[(m, l)] = agg[l].max(f64::MIN_POSITIVE).ln();
                }
            }
        }
        let target = &log_q - &log_a;
        let damped = (&log_z + &target) * 0.5;
        let mut next_log = fix_infeasible(damped, &log_q);
        let mut next = to_z(&next_log);
        let mut next_value = estep_objective(&next, &cost, ds);
        if next_value > value {
            next_log = fix_infeasible(&log_z + &target, &log_q);
            next = to_z(&next_log);
            next_value = estep_objective(&next, &cost, ds);
        }
        let change = (&next - &z).amax();
        if next_value > value {
            break;
        }
        log_z = next_log;
        z = next;
        value = next_value;
        if change <= tol {
            break;
        }
    }
    // Renormalise in the log domain so that rows sum to one exactly enough.
    let z = to_z(&log_z);
    Assignment::new(z, ds)
}

fn fix_infeasible(mut m: DMatrix<f64>, log_q: &DMatrix<f64>) -> DMatrix<f64> {
    for (v, q) in m.iter_mut().zip(log_q.iter()) {
        if *q == f64::NEG_INFINITY || v.is_nan() {
            *v = f64::NEG_INFINITY;
        }
    }
    m
}

/// Alternate M- and E-steps from the rounded assignment `z0` on explicit
/// features `phi` (`N × d`). The objective never increases: a step that would
/// raise it is discarded and the alternation stops.
pub fn em_refine(z0: &Assignment, ds: &WeakDataset, phi: &DMatrix<f64>, cfg: &EMConfig) -> Result<EMResult> {
    cfg.validate()?;
    check_em_inputs(z0, ds, phi)?;
    let m_step = |z: &Assignment, warm: Option<&Classifier>| {
        if cfg.mil_constraints {
            mil_mstep_with(z, ds, phi, cfg.lambda, cfg.mstep_tol, warm, cfg.intercept)
        } else {
            mstep_with(z, ds, phi, cfg.lambda, cfg.mstep_tol, warm, cfg.intercept)
        }
    };
    let f = |z: &Assignment, c: &Classifier| objective_f(&z.z, c, phi, ds, cfg.lambda);
    let mut z = z0.clone();
    let zero = Classifier::zeros(ds.latent_count(), phi.ncols());
    let mut fx = f(&z, &zero)?;
    let mut trace = vec![fx];
    let mut c = zero.clone();
    let first = m_step(&z, None)?;
    let f_first = f(&z, &first)?;
    if f_first <= fx {
        c = first;
        fx = f_first;
        trace.push(fx);
    }
    let mut alternations = 0;
    while alternations < cfg.max_alt {
        alternations += 1;
        let start = fx;
        let z_new = estep(&c, ds, phi, cfg.estep_tol, 10_000)?;
        let fz = f(&z_new, &c)?;
        if fz <= fx {
            z = z_new;
            fx = fz;
            trace.push(fx);
        }
        let c_new = m_step(&z, Some(&c))?;
        let fc = f(&z, &c_new)?;
        if fc <= fx {
            c = c_new;
            fx = fc;
            trace.push(fx);
        }
        if start - fx < cfg.min_decrease {
            break;
        }
    }
    Ok(EMResult {
        classifier: c,
        assignment: z,
        trace,
        alternations,
    })
}
