//! Minimisation of the relaxed objective `g_R` over the elliptope
//! `{Z ⪰ 0, diag Z = 1}` by von Neumann-entropy proximal steps with
//! backtracking. Each evaluation of `g_R` solves the inner problem; its
//! maximiser gives the gradient (Danskin). Fixed zero entries of `Z` are
//! held exactly by Lagrange multipliers inside the proximal step.

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::inner::{solve_inner, InnerConfig, InnerProblem, InnerResult, InnerTraceRow, OmegaState};
use crate::kernel::{pivoted_cholesky, ReweightedGram};
use crate::linalg::{symmetrize, SymEigen};
use crate::problem::{ReductionMap, ZConstraintSet};

/// Eigenvalue floor inside the matrix logarithm.
pub const EIG_FLOOR: f64 = 1e-12;
/// Maximal number of step-size doublings in one line search.
pub const MAX_DOUBLINGS: usize = 60;
/// Target `|Z_ij|` on a fixed zero entry after a proximal step.
pub const FIXED_TOL: f64 = 1e-10;
/// Largest `|Z_ij|` accepted when the multiplier iteration stagnates in
/// rounding; points within it count as feasible.
pub const FEASIBLE_TOL: f64 = 1e-8;
const MULTIPLIER_MAX_ITER: usize = 50;

/// A point of the elliptope with an optional cached eigendecomposition.
#[derive(Clone, Debug)]
pub struct ElliptopeState {
    z: DMatrix<f64>,
    eigen: Option<SymEigen>,
}

impl ElliptopeState {
    pub fn identity(n: usize) -> Self {
        Self {
            z: DMatrix::identity(n, n),
            eigen: None,
        }
    }

    /// `0.95 I + 0.05 11ᵀ`.
    pub fn blended(n: usize) -> Self {
        let z = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.05 });
        Self { z, eigen: None }
    }

    /// Validate a symmetric PSD matrix with unit diagonal (within 1e-8), then
    /// set the diagonal to exactly 1.
    pub fn from_matrix(z: DMatrix<f64>) -> Result<Self> {
        let n = z.nrows();
        if z.ncols() != n {
            return Err(Error::dim("Z must be square"));
        }
        let mut z = symmetrize(&z);
        for i in 0..n {
            if (z[(i, i)] - 1.0).abs() > 1e-8 {
                return Err(Error::arg(format!("Z has diagonal entry {} at {i}", z[(i, i)])));
            }
            z[(i, i)] = 1.0;
        }
        let eigen = SymEigen::new(&z);
        if eigen.min() < -1e-8 {
            return Err(Error::arg(format!("Z is not PSD (λ_min = {})", eigen.min())));
        }
        Ok(Self { z, eigen: Some(eigen) })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn eigen(&mut self) -> &SymEigen {
        if self.eigen.is_none() {
            self.eigen = Some(SymEigen::new(&self.z));
        }
        self.eigen.as_ref().unwrap()
    }

    pub fn min_eigenvalue(&mut self) -> f64 {
        self.eigen().min()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterConfig {
    pub lambda: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Initial proximal weight (larger means a smaller step); derived from
    /// the first gradient when unset.
    pub t_init: Option<f64>,
    pub inner: InnerConfig,
    /// Start from `0.95 I + 0.05 11ᵀ` instead of the identity.
    pub blend_init: bool,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gap_tol: 1e-4,
            max_iter: 500,
            t_init: None,
            inner: InnerConfig {
                tol: 1e-9,
                certify: false,
                ..InnerConfig::default()
            },
            blend_init: false,
        }
    }
}

impl OuterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::arg(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.gap_tol > 0.0) {
            return Err(Error::arg("gap_tol must be positive"));
        }
        if let Some(t) = self.t_init {
            if !(t > 0.0) {
                return Err(Error::arg("t_init must be positive"));
            }
        }
        if self.max_iter < 1 {
            return Err(Error::arg("max_iter must be at least 1"));
        }
        self.inner.validate()
    }
}

/// Everything the outer solver needs besides `λ`: the reweighted Gram
/// matrix in factored form, the reduction and the fixed entries.
#[derive(Clone, Debug)]
pub struct OuterProblem {
    pub reduction: ReductionMap,
    pub constraints: ZConstraintSet,
    pub latent_count: usize,
    pub weights: DVector<f64>,
    /// `K ≈ ΦΦᵀ`.
    pub factor: DMatrix<f64>,
    /// Distinct off-diagonal fixed entries `(i, j)`, `i < j`.
    pairs: Vec<(usize, usize)>,
}

impl OuterProblem {
    pub fn new(k: &ReweightedGram, reduction: ReductionMap, constraints: ZConstraintSet, latent_count: usize, factor_tol: f64) -> Result<Self> {
        if reduction.len() != k.len() {
            return Err(Error::dim("reduction and Gram matrix disagree on N"));
        }
        let factor = match &k.low_rank {
            Some(f) => f.clone(),
            None => pivoted_cholesky(&k.k, factor_tol)?.factor,
        };
        let mut pairs = Vec::new();
        for &(i, j, v) in &constraints.fixed_entries {
            if i >= reduction.reduced_size() || j >= reduction.reduced_size() {
                return Err(Error::dim("fixed entry outside the reduced matrix"));
            }
            if i == j {
                if v != 1.0 {
                    return Err(Error::arg(format!("diagonal entry ({i}, {i}) can only be fixed to 1")));
                }
                continue;
            }
            if v != 0.0 {
                return Err(Error::arg(format!("off-diagonal entry ({i}, {j}) can only be fixed to 0, got {v}")));
            }
            pairs.push((i.min(j), i.max(j)));
        }
        pairs.sort_unstable();
        pairs.dedup();
        Ok(Self {
            reduction,
            constraints,
            latent_count,
            weights: k.weights.clone(),
            factor,
            pairs,
        })
    }

    pub fn reduced_size(&self) -> usize {
        self.reduction.reduced_size()
    }

    pub fn inner_problem(&self, z: &DMatrix<f64>, lambda: f64, intercept: bool) -> Result<InnerProblem> {
        InnerProblem::from_factor(self.factor.clone(), &self.weights, &self.reduction, z, lambda, self.latent_count, intercept)
    }
}

/// Value and gradients of `g_R` at one point.
#[derive(Clone, Debug)]
pub struct GEvaluation {
    pub value: f64,
    /// Raw Danskin gradient `G = −P/(2λ) Rᵀ(I−Ω)ᵀK(I−Ω)R`.
    pub raw_gradient: DMatrix<f64>,
    /// `G − Diag(diag(G Z))`.
    pub gradient: DMatrix<f64>,
    pub inner: InnerResult,
}

/// Gradient of a function of `Z` composed with the diagonal rescaling, at a
/// unit-diagonal point.
pub fn rescaled_gradient(raw: &DMatrix<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
    let gz = raw * z;
    let mut out = raw.clone();
    for i in 0..out.nrows() {
        out[(i, i)] -= gz[(i, i)];
    }
    symmetrize(&out)
}

/// Evaluate `g_R(Z)` and its gradients by solving the inner problem.
pub fn eval_g_and_grad(
    z: &ElliptopeState,
    problem: &OuterProblem,
    lambda: f64,
    inner_cfg: &InnerConfig,
    warm: Option<&OmegaState>,
) -> Result<GEvaluation> {
    if z.len() != problem.reduced_size() {
        return Err(Error::dim("Z does not match the reduced size"));
    }
    let ip = problem.inner_problem(z.z(), lambda, inner_cfg.intercept)?;
    let inner = solve_inner(&ip, inner_cfg, warm)?;
    let raw = symmetrize(&ip.outer_gradient(inner.omega.omega()));
    let gradient = rescaled_gradient(&raw, z.z());
    Ok(GEvaluation {
        value: inner.value,
        raw_gradient: raw,
        gradient,
        inner,
    })
}

/// Von Neumann proximal step: with `A = −grad + t log Z⁰ = V Diag(e) Vᵀ`,
/// `M = V Diag(exp(e/t)) Vᵀ`, returned with unit diagonal.
pub fn vn_prox_step(z0: &mut ElliptopeState, grad: &DMatrix<f64>, t: f64) -> Result<ElliptopeState> {
    let log_z = matrix_log(z0);
    prox_from_log(&log_z, grad, t)
}

/// `log Z` with eigenvalues floored at [`EIG_FLOOR`].
fn matrix_log(z: &mut ElliptopeState) -> DMatrix<f64> {
    z.eigen().map(|v| v.max(EIG_FLOOR).ln())
}

fn prox_from_log(log_z: &DMatrix<f64>, grad: &DMatrix<f64>, t: f64) -> Result<ElliptopeState> {
    if !(t > 0.0) {
        return Err(Error::arg(format!("proximal weight must be positive, got {t}")));
    }
    let n = log_z.nrows();
    if grad.shape() != (n, n) {
        return Err(Error::dim("gradient does not match Z"));
    }
    let a = symmetrize(&(log_z * t - grad));
    let ea = SymEigen::new(&a);
    let emax = ea.max();
    // The shift by the top eigenvalue cancels in the rescaling.
    let m = ea.map(|e| ((e - emax) / t).exp());
    Ok(unit_diagonal(&m))
}

/// Proximal step on the elliptope intersected with the fixed zero entries
/// `pairs`: the multipliers of the entries enter the exponent. Returns the
/// point and the multipliers, or `None` when they cannot be found (a longer
/// proximal weight then brings the step closer to the feasible `Z⁰`).
fn constrained_prox(
    log_z: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    t: f64,
    pairs: &[(usize, usize)],
    warm: &[f64],
) -> Result<Option<(ElliptopeState, Vec<f64>)>> {
    if pairs.is_empty() {
        return Ok(Some((prox_from_log(log_z, grad, t)?, Vec::new())));
    }
    if !(t > 0.0) {
        return Err(Error::arg(format!("proximal weight must be positive, got {t}")));
    }
    let a0 = symmetrize(&(log_z * t - grad));
    Ok(solve_multipliers(&a0, t, pairs, warm).map(|(spec, nu)| (unit_diagonal(&spec.matrix()), nu)))
}

/// Von Neumann divergence `tr(A log A − A log B)` between unit-diagonal
/// matrices (the trace terms cancel).
fn vn_divergence(a: &mut ElliptopeState, log_b: &DMatrix<f64>) -> f64 {
    let ent: f64 = a.eigen().values.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).sum();
    (ent - a.z().dot(log_b)).max(0.0)
}

fn unit_diagonal(m: &DMatrix<f64>) -> ElliptopeState {
    let n = m.nrows();
    let d = DVector::from_fn(n, |i, _| 1.0 / m[(i, i)].max(f64::MIN_POSITIVE).sqrt());
    let mut z = DMatrix::from_fn(n, n, |i, j| d[i] * m[(i, j)] * d[j]);
    z = symmetrize(&z);
    for i in 0..n {
        z[(i, i)] = 1.0;
    }
    ElliptopeState { z, eigen: None }
}

/// `max(0, −N_R λ_min(∇g_R))`.
pub fn outer_gap(grad: &DMatrix<f64>) -> f64 {
    let n = grad.nrows();
    if n == 0 {
        return 0.0;
    }
    (-(n as f64) * SymEigen::new(grad).min()).max(0.0)
}

/// `Σ_k ν_k (E_ij + E_ji)` over the pairs `k = (i, j)`.
fn pair_matrix(n: usize, pairs: &[(usize, usize)], nu: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for (&(i, j), &v) in pairs.iter().zip(nu) {
        m[(i, j)] += v;
        m[(j, i)] += v;
    }
    m
}

/// Divided differences of `e ↦ f(e)` on the spectrum, with `f(e) = exp(e/t)`
/// shifted by the top eigenvalue.
fn divided_differences(values: &DVector<f64>, f: &[f64], t: f64) -> DMatrix<f64> {
    let n = values.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = values[i] - values[j];
        if (d / t).abs() < 1e-8 {
            0.5 * (f[i] + f[j]) / t
        } else {
            (f[i] - f[j]) / d
        }
    })
}

/// Shifted exponential of `A/t`: eigendecomposition, `exp((e − e_max)/t)`
/// and `log tr exp(A/t)`.
struct ExpSpectrum {
    eig: SymEigen,
    f: Vec<f64>,
    log_trace: f64,
}

fn exp_spectrum(a: &DMatrix<f64>, t: f64) -> ExpSpectrum {
    let eig = SymEigen::new(a);
    let emax = eig.max();
    let f: Vec<f64> = eig.values.iter().map(|&e| ((e - emax) / t).exp()).collect();
    let log_trace = emax / t + f.iter().sum::<f64>().ln();
    ExpSpectrum { eig, f, log_trace }
}

impl ExpSpectrum {
    fn entry(&self, i: usize, j: usize) -> f64 {
        let v = &self.eig.vectors;
        (0..self.f.len()).map(|k| v[(i, k)] * self.f[k] * v[(j, k)]).sum()
    }

    /// `exp((A − e_max)/t)`.
    fn matrix(&self) -> DMatrix<f64> {
        let v = &self.eig.vectors;
        let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, k| v[(i, k)] * self.f[k]);
        symmetrize(&(scaled * v.transpose()))
    }
}

/// Multipliers `ν` that zero the fixed entries of `exp(A(ν)/t)` with
/// `A(ν) = A₀ − Σ_k ν_k S_k`. They minimise the convex `log tr exp(A(ν)/t)`,
/// whose gradient is `−2 M_ij / (t tr M)`; damped Newton with the exact
/// Hessian from the divided differences. `None` when it fails to converge.
fn solve_multipliers(a0: &DMatrix<f64>, t: f64, pairs: &[(usize, usize)], warm: &[f64]) -> Option<(ExpSpectrum, Vec<f64>)> {
    let n = a0.nrows();
    let m = pairs.len();
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    for &(i, j) in pairs {
        let len = index.len();
        index.entry(i).or_insert(len);
        let len = index.len();
        index.entry(j).or_insert(len);
    }
    let rows: Vec<usize> = {
        let mut r = vec![0; index.len()];
        for (&row, &slot) in &index {
            r[slot] = row;
        }
        r
    };
    let at = |nu: &[f64]| exp_spectrum(&(a0 - pair_matrix(n, pairs, nu)), t);
    let mut nu = warm.to_vec();
    let mut cur = at(&nu);
    let mut best = f64::INFINITY;
    let mut stalls = 0;
    for _ in 0..MULTIPLIER_MAX_ITER {
        let total: f64 = cur.f.iter().sum();
        let diag: Vec<f64> = rows.iter().map(|&r| cur.entry(r, r).max(f64::MIN_POSITIVE)).collect();
        let mut grad = DVector::zeros(m);
        let mut worst = 0.0f64;
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let mij = cur.entry(i, j);
            worst = worst.max(mij.abs() / (diag[index[&i]] * diag[index[&j]]).sqrt());
            grad[k] = -2.0 * mij / (t * total);
        }
        if worst <= FIXED_TOL {
            return Some((cur, nu));
        }
        if worst < 0.5 * best {
            best = worst;
            stalls = 0;
        } else {
            stalls += 1;
            if stalls >= 3 {
                return (worst <= FEASIBLE_TOL).then_some((cur, nu));
            }
        }
        // Hessian of log tr exp: ∇²F/F − ∇F∇Fᵀ/F², with
        // ∂²F/∂ν_k∂ν_l = (2/t) [ q_acᵀ Γ q_bd + q_adᵀ Γ q_bc ] for k = (a, b),
        // l = (c, d) and q_xy the elementwise product of eigenvector rows.
        let gamma = divided_differences(&cur.eig.values, &cur.f, t);
        let v = &cur.eig.vectors;
        let r = rows.len();
        let mut q = vec![vec![DVector::<f64>::zeros(0); r]; r];
        let mut gq = vec![vec![DVector::<f64>::zeros(0); r]; r];
        for x in 0..r {
            for y in x..r {
                let prod = DVector::from_fn(n, |k, _| v[(rows[x], k)] * v[(rows[y], k)]);
                let g = &gamma * &prod;
                q[x][y] = prod.clone();
                q[y][x] = prod;
                gq[x][y] = g.clone();
                gq[y][x] = g;
            }
        }
        let mut hess = DMatrix::zeros(m, m);
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let (a, b) = (index[&a], index[&b]);
            for (l, &(c, d)) in pairs.iter().enumerate().skip(k) {
                let (c, d) = (index[&c], index[&d]);
                let h = 2.0 / t * (q[a][c].dot(&gq[b][d]) + q[a][d].dot(&gq[b][c])) / total;
                hess[(k, l)] = h;
                hess[(l, k)] = h;
            }
        }
        hess -= &grad * grad.transpose();
        let scale = (0..m).map(|k| hess[(k, k)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for k in 0..m {
            hess[(k, k)] += 1e-12 * scale;
        }
        let step = match hess.clone().cholesky() {
            Some(c) => -c.solve(&grad),
            None => -&grad / scale,
        };
        let slope = grad.dot(&step);
        if !(slope < 0.0) {
            return None;
        }
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = nu.iter().zip(step.iter()).map(|(v, s)| v + alpha * s).collect();
            let next = at(&trial);
            if next.log_trace <= cur.log_trace + 1e-4 * alpha * slope {
                nu = trial;
                cur = next;
                break;
            }
            alpha *= 0.5;
            if alpha < 1e-9 {
                return (worst <= FEASIBLE_TOL).then_some((cur, nu));
            }
        }
    }
    None
}

/// One row of the outer trace.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterTraceRow {
    pub iter: usize,
    pub value: f64,
    pub gap: f64,
    pub t: f64,
    pub inner_iterations: usize,
    /// Largest deviation of a fixed entry.
    pub violation: f64,
    /// Largest multiplier of a fixed entry.
    pub multiplier: f64,
    /// `λ_min(Z)` of the iterate.
    pub min_eig: f64,
    /// `max_i |Z_ii − 1|`.
    pub diag_dev: f64,
    /// `⟨∇g_R(Z), Z⟩`.
    pub grad_dot_z: f64,
}

#[derive(Clone, Debug)]
pub struct OuterResult {
    pub z: ElliptopeState,
    pub omega: OmegaState,
    /// `g_R(Z*)`.
    pub value: f64,
    pub gap: f64,
    pub objective_trace: Vec<f64>,
    pub gap_trace: Vec<f64>,
    pub trace: Vec<OuterTraceRow>,
    /// Inner iterations of each accepted evaluation, tagged with the outer
    /// iteration.
    pub inner_trace: Vec<(usize, InnerTraceRow)>,
    pub iterations: usize,
    /// `true` when the gap tolerance was met at a feasible point.
    pub converged: bool,
    pub lambda: f64,
    /// Curvature constant of the last inner solve.
    pub inner_lipschitz: f64,
    /// Proximal weight at exit.
    pub t: f64,
    /// Multipliers of the fixed entries at exit.
    pub multipliers: Vec<f64>,
}

struct Point {
    z: ElliptopeState,
    eval: GEvaluation,
    /// Multipliers of the step that produced the point.
    nu: Vec<f64>,
}

/// Gap certificate at a point. For fixed zero entries any multipliers `ν`
/// give a valid bound at a feasible point, through the rescaled gradient of
/// `g + Σ ν_k Z_k`; the multipliers of the last step are used.
fn point_gap(p: &Point, pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return outer_gap(&p.eval.gradient);
    }
    let n = p.z.len();
    let shifted = &p.eval.raw_gradient + pair_matrix(n, pairs, &p.nu);
    outer_gap(&rescaled_gradient(&shifted, p.z.z()))
}

fn evaluate(
    z: ElliptopeState,
    nu: Vec<f64>,
    problem: &OuterProblem,
    cfg: &OuterConfig,
    warm: Option<&OmegaState>,
    lipschitz: Option<f64>,
) -> Result<Point> {
    let mut inner_cfg = cfg.inner.clone();
    if lipschitz.is_some() {
        inner_cfg.lipschitz_init = lipschitz;
    }
    let eval = eval_g_and_grad(&z, problem, cfg.lambda, &inner_cfg, warm)?;
    Ok(Point { z, eval, nu })
}

fn trace_row(iter: usize, p: &mut Point, gap: f64, t: f64, problem: &OuterProblem) -> OuterTraceRow {
    let z = p.z.z();
    let diag_dev = (0..z.nrows()).map(|i| (z[(i, i)] - 1.0).abs()).fold(0.0, f64::max);
    let grad_dot_z = p.eval.gradient.dot(z);
    OuterTraceRow {
        iter,
        value: p.eval.value,
        gap,
        t,
        inner_iterations: p.eval.inner.iterations,
        violation: problem.constraints.max_violation(z),
        multiplier: p.nu.iter().fold(0.0, |m, v| m.max(v.abs())),
        min_eig: p.z.min_eigenvalue(),
        diag_dev,
        grad_dot_z,
    }
}

/// Warm-start information for [`solve_outer`].
#[derive(Clone, Debug, Default)]
pub struct OuterWarmStart {
    pub z: Option<DMatrix<f64>>,
    pub omega: Option<OmegaState>,
    pub inner_lipschitz: Option<f64>,
    pub t: Option<f64>,
    pub multipliers: Option<Vec<f64>>,
}

/// Minimise the relaxed objective over the elliptope, with the fixed zero
/// entries of the problem held by every step.
pub fn solve_outer(problem: &OuterProblem, cfg: &OuterConfig, warm: &OuterWarmStart) -> Result<OuterResult> {
    cfg.validate()?;
    let nr = problem.reduced_size();
    let pairs = &problem.pairs;
    let z0 = match &warm.z {
        Some(z) => ElliptopeState::from_matrix(z.clone())?,
        None if cfg.blend_init && pairs.is_empty() => ElliptopeState::blended(nr),
        None => ElliptopeState::identity(nr),
    };
    if z0.len() != nr {
        return Err(Error::dim("initial Z does not match the reduced size"));
    }
    let nu0 = match &warm.multipliers {
        Some(nu) if nu.len() == pairs.len() => nu.clone(),
        _ => vec![0.0; pairs.len()],
    };
    let mut cur = evaluate(z0, nu0, problem, cfg, warm.omega.as_ref(), warm.inner_lipschitz)?;
    let mut lip = cur.eval.inner.lipschitz;
    let mut t = cfg.t_init.or(warm.t).unwrap_or_else(|| auto_t(&cur.eval.gradient));
    let feasible = |p: &Point| problem.constraints.max_violation(p.z.z()) <= FEASIBLE_TOL;
    let mut gap = point_gap(&cur, pairs);
    let mut objective_trace = vec![cur.eval.value];
    let mut gap_trace = vec![gap];
    let mut trace = vec![trace_row(0, &mut cur, gap, t, problem)];
    let mut inner_trace: Vec<(usize, InnerTraceRow)> = cur.eval.inner.trace.iter().cloned().map(|r| (0, r)).collect();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        if gap <= cfg.gap_tol && feasible(&cur) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        let mut tries = 0;
        let mut refined = false;
        let log_z = matrix_log(&mut cur.z);
        while accepted.is_none() {
            if let Some((mut cand_z, nu)) = constrained_prox(&log_z, &cur.eval.gradient, t, pairs, &cur.nu)? {
                // Descent-lemma test in the von Neumann geometry on top of a
                // strict decrease: it rejects overlong steps that would zig-zag.
                let linear = cur.eval.gradient.dot(&(cand_z.z() - cur.z.z()));
                let model = cur.eval.value + linear + t * vn_divergence(&mut cand_z, &log_z);
                let cand = evaluate(cand_z, nu, problem, cfg, Some(&cur.eval.inner.omega), Some(lip))?;
                let slack = 1e-12 * (1.0 + cur.eval.value.abs());
                // An infeasible start is left by the first feasible step.
                let entering = !feasible(&cur) && feasible(&cand);
                if entering || (cand.eval.value <= cur.eval.value - 1e-12 && cand.eval.value <= model + slack) {
                    accepted = Some(cand);
                    break;
                }
            }
            tries += 1;
            t *= 2.0;
            if tries >= MAX_DOUBLINGS {
                if refined {
                    return Err(Error::NoDescent {
                        iteration: iterations,
                        t,
                        value: cur.eval.value,
                        gap,
                    });
                }
                // The failure may come from an inexact inner value at the
                // current point: re-solve it tightly and retry once.
                refined = true;
                let mut tight = cfg.clone();
                tight.inner.tol = (cfg.inner.tol * 1e-3).max(1e-14);
                let z = cur.z.clone();
                let omega = cur.eval.inner.omega.clone();
                cur = evaluate(z, cur.nu.clone(), problem, &tight, Some(&omega), Some(lip))?;
                gap = point_gap(&cur, pairs);
                t = auto_t(&cur.eval.gradient);
                tries = 0;
                if gap <= cfg.gap_tol && feasible(&cur) {
                    break;
                }
            }
        }
        let Some(next) = accepted else {
            continue;
        };
        lip = next.eval.inner.lipschitz;
        cur = next;
        t = (t * 0.5).max(f64::MIN_POSITIVE);
        gap = point_gap(&cur, pairs);
        objective_trace.push(cur.eval.value);
        gap_trace.push(gap);
        trace.push(trace_row(iterations, &mut cur, gap, t, problem));
        inner_trace.extend(cur.eval.inner.trace.iter().cloned().map(|r| (iterations, r)));
    }
    if !converged && gap <= cfg.gap_tol && feasible(&cur) {
        converged = true;
    }
    Ok(OuterResult {
        value: cur.eval.value,
        gap,
        omega: cur.eval.inner.omega.clone(),
        inner_lipschitz: lip,
        multipliers: cur.nu.clone(),
        z: cur.z,
        objective_trace,
        gap_trace,
        trace,
        inner_trace,
        iterations,
        converged,
        lambda: cfg.lambda,
        t,
    })
}

/// A step that changes the exponent by about one unit.
fn auto_t(grad: &DMatrix<f64>) -> f64 {
    let n = grad.nrows().max(1) as f64;
    let scale = grad.abs().max() * n.sqrt();
    if scale > 0.0 {
        scale
    } else {
        1.0
    }
}

const PATH_BLEND: f64 = 0.2;

/// Solve along a decreasing sequence of `λ`, warm-starting every solve from
/// the previous one.
pub fn solve_path(problem: &OuterProblem, lambdas: &[f64], cfg: &OuterConfig) -> Result<Vec<OuterResult>> {
    if lambdas.is_empty() {
        return Err(Error::arg("empty lambda path"));
    }
    let mut out: Vec<OuterResult> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let c = OuterConfig { lambda, ..cfg.clone() };
        let warm = match out.last() {
            // Gradients scale like 1/λ, and so does a good proximal weight.
            Some(prev) => OuterWarmStart {
                // A small pull toward I keeps the start away from the
                // boundary, where the entropic step is slow to move.
                z: Some(prev.z.z() * (1.0 - PATH_BLEND) + DMatrix::identity(prev.z.z().nrows(), prev.z.z().nrows()) * PATH_BLEND),
                omega: Some(prev.omega.clone()),
                inner_lipschitz: None,
                t: Some(prev.t * prev.lambda / lambda),
                multipliers: Some(prev.multipliers.clone()),
            },
            None => OuterWarmStart::default(),
        };
        out.push(solve_outer(problem, &c, &warm)?);
    }
    Ok(out)
}
