//! Inner maximisation over the transportation polytope
//! `𝒪 = {Ω ≥ 0, Ω1 = 1, Ωᵀπ = π}` of
//!
//! `F(Ω) = T(Ω) + Σ_n π_n h(Ω_n)`,  `T(Ω) = −P/(2λ) tr((I−Ω) B (I−Ω)ᵀ K)`,
//!
//! by entropic proximal ascent: an exact prox step (the entropy is kept, not
//! linearised), an I-projection by iterative proportional fitting, Nesterov
//! extrapolation in log space with monotone restarts, and an exact
//! Frank-Wolfe gap from a transportation linear program.
//!
//! Without an intercept the column constraint `Ωᵀπ = π` is dropped and the
//! projection reduces to row normalisation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{pivoted_cholesky, ReweightedGram};
use crate::linalg::power_norm;
use crate::problem::ReductionMap;
use crate::transport::max_profit_transport;

/// Entry floor applied before logarithms.
pub const FLOOR: f64 = 1e-12;
/// Marginal tolerance of a returned projection.
pub const IPFP_TOL: f64 = 1e-9;
pub const IPFP_MAX_SWEEPS: usize = 100_000;

/// A strictly positive point of the feasible set, with its logarithm.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaState {
    omega: DMatrix<f64>,
    log_omega: DMatrix<f64>,
}

impl OmegaState {
    /// `Ω_nm = π_m`: rank one, feasible, strictly positive.
    pub fn prior(weights: &DVector<f64>) -> Self {
        let n = weights.len();
        let omega = DMatrix::from_fn(n, n, |_, m| weights[m]);
        let log_omega = omega.map(|v| v.max(FLOOR).ln());
        Self { omega, log_omega }
    }

    /// Wrap a matrix without projecting it. Entries are floored at [`FLOOR`].
    pub fn from_matrix(omega: DMatrix<f64>) -> Self {
        let omega = omega.map(|v| v.max(FLOOR));
        let log_omega = omega.map(f64::ln);
        Self { omega, log_omega }
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn log_omega(&self) -> &DMatrix<f64> {
        &self.log_omega
    }

    pub fn len(&self) -> usize {
        self.omega.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.nrows() == 0
    }

    /// `max_n |Σ_m Ω_nm − 1|`.
    pub fn row_residual(&self) -> f64 {
        self.omega.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max_m |Σ_n π_n Ω_nm − π_m|`.
    pub fn col_residual(&self, weights: &DVector<f64>) -> f64 {
        let cols = self.omega.tr_mul(weights);
        cols.iter().zip(weights.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `Σ_n π_n h(Ω_n)`.
    pub fn weighted_entropy(&self, weights: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for n in 0..self.len() {
            let mut row = 0.0;
            for m in 0..self.len() {
                row -= self.omega[(n, m)] * self.log_omega[(n, m)];
            }
            s += weights[n] * row;
        }
        s
    }
}

/// `Σ_n π_n KL(A_n ‖ B_n)` from logarithms.
pub fn weighted_kl(a: &OmegaState, b: &OmegaState, weights: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for n in 0..a.len() {
        let mut row = 0.0;
        for m in 0..a.len() {
            row += a.omega[(n, m)] * (a.log_omega[(n, m)] - b.log_omega[(n, m)]);
        }
        s += weights[n] * row;
    }
    s
}

/// `c − y` and `Σ_n π_n KL(c_n ‖ y_n)` from log differences, in the Bregman
/// form `Σ y (e^d d − e^d + 1)` whose terms are nonnegative, so that tiny
/// steps do not lose the divergence to cancellation.
fn step_and_divergence(c: &OmegaState, y: &OmegaState, weights: &DVector<f64>) -> (DMatrix<f64>, f64) {
    let n = c.len();
    let mut delta = DMatrix::zeros(n, n);
    let mut kl = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            let yv = y.omega[(i, j)];
            let d = c.log_omega[(i, j)] - y.log_omega[(i, j)];
            let em1 = d.exp_m1();
            delta[(i, j)] = yv * em1;
            let phi = if d.abs() < 1e-3 {
                d * d * (0.5 + d * (1.0 / 3.0 + d * 0.125))
            } else {
                d * (em1 + 1.0) - em1
            };
            row += yv * phi;
        }
        kl += weights[i] * row;
    }
    (delta, kl)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InnerConfig {
    /// Stationarity tolerance `L · Σ_n π_n ‖Ω_{k+1,n} − Y_n‖₁`.
    pub tol: f64,
    /// Gap required before a certified run stops.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Initial curvature constant; estimated from operator norms when unset.
    pub lipschitz_init: Option<f64>,
    pub accelerate: bool,
    /// Number of starts (the prior or warm start, then seeded random points).
    pub restarts: usize,
    pub floor: f64,
    /// Keep the column constraint `Ωᵀπ = π` (classifier with intercept).
    pub intercept: bool,
    /// Compute the exact Frank-Wolfe gap at convergence.
    pub certify: bool,
    pub ipfp_tol: f64,
    pub ipfp_max_sweeps: usize,
    /// Relative tolerance of the low-rank factor built when the Gram matrix
    /// carries none.
    pub factor_tol: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            gap_tol: 1e-6,
            max_iter: 20_000,
            lipschitz_init: None,
            accelerate: true,
            restarts: 1,
            floor: FLOOR,
            intercept: true,
            certify: true,
            ipfp_tol: 1e-12,
            ipfp_max_sweeps: IPFP_MAX_SWEEPS,
            factor_tol: 1e-12,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.gap_tol > 0.0) {
            return Err(Error::arg("inner tolerances must be positive"));
        }
        if self.max_iter < 1 || self.restarts < 1 {
            return Err(Error::arg("inner max_iter and restarts must be at least 1"));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::arg("inner floor must lie in (0, 1)"));
        }
        if let Some(l) = self.lipschitz_init {
            if !(l > 0.0) {
                return Err(Error::StepNotConcave(l));
            }
        }
        if !(self.ipfp_tol > 0.0) || self.ipfp_max_sweeps < 1 {
            return Err(Error::arg("invalid IPFP settings"));
        }
        Ok(())
    }
}

/// One accepted inner iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerTraceRow {
    pub iter: usize,
    pub value: f64,
    pub stationarity: f64,
    pub lipschitz: f64,
    pub row_residual: f64,
    pub col_residual: f64,
}

#[derive(Clone, Debug)]
pub struct InnerResult {
    pub omega: OmegaState,
    /// `F(Ω)`.
    pub value: f64,
    /// Frank-Wolfe gap when `certified`, otherwise the stationarity measure.
    pub gap: f64,
    pub certified: bool,
    pub iterations: usize,
    pub monotone: bool,
    /// Curvature constant at exit, reusable as a warm start.
    pub lipschitz: f64,
    pub trace: Vec<InnerTraceRow>,
}

/// Dense evaluation of `T` and `∇T = (P/λ) K (I−Ω) B`.
pub fn eval_t_and_grad(omega: &DMatrix<f64>, b: &DMatrix<f64>, k: &DMatrix<f64>, lambda: f64, p: usize) -> Result<(f64, DMatrix<f64>)> {
    if !(lambda > 0.0) {
        return Err(Error::arg(format!("lambda must be positive, got {lambda}")));
    }
    let n = omega.nrows();
    if omega.shape() != (n, n) || b.shape() != (n, n) || k.shape() != (n, n) {
        return Err(Error::dim("eval_t_and_grad expects square matrices of one size"));
    }
    let d = DMatrix::identity(n, n) - omega;
    let grad = (k * &d * b) * (p as f64 / lambda);
    let t = -0.5 * d.dot(&grad);
    Ok((t, grad))
}

/// The inner objective for one expanded matrix `B = R Z Rᵀ`, in factored
/// form `K ≈ ΦΦᵀ` so that value and gradient cost `O(N² r)`.
///
/// With an intercept the factor is centred, `Φ_c = (I − π1ᵀ)Φ`. On the
/// feasible set this changes neither `T` nor the Frank-Wolfe gap nor the
/// outer gradient, and the gradient only moves by a column-constant term
/// that the projection absorbs; it removes the mean direction from the
/// curvature, which speeds up the solver.
#[derive(Clone, Debug)]
pub struct InnerProblem {
    phi: DMatrix<f64>,
    reduction: ReductionMap,
    z: DMatrix<f64>,
    weights: DVector<f64>,
    lambda: f64,
    latent_count: usize,
    intercept: bool,
}

impl InnerProblem {
    pub fn new(
        k: &ReweightedGram,
        reduction: &ReductionMap,
        z: &DMatrix<f64>,
        lambda: f64,
        latent_count: usize,
        intercept: bool,
        factor_tol: f64,
    ) -> Result<Self> {
        let n = k.len();
        let phi = match &k.low_rank {
            Some(f) => f.clone(),
            None => pivoted_cholesky(&k.k, factor_tol)?.factor,
        };
        Self::from_factor(phi, &k.weights, reduction, z, lambda, latent_count, intercept).and_then(|p| {
            if p.phi.nrows() != n {
                Err(Error::dim("low-rank factor has the wrong number of rows"))
            } else {
                Ok(p)
            }
        })
    }

    pub fn from_factor(
        phi: DMatrix<f64>,
        weights: &DVector<f64>,
        reduction: &ReductionMap,
        z: &DMatrix<f64>,
        lambda: f64,
        latent_count: usize,
        intercept: bool,
    ) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::arg(format!("lambda must be positive, got {lambda}")));
        }
        let n = weights.len();
        if phi.nrows() != n || reduction.len() != n {
            return Err(Error::dim("factor, weights and reduction disagree on N"));
        }
        let nr = reduction.reduced_size();
        if z.shape() != (nr, nr) {
            return Err(Error::dim(format!("Z is {}x{}, expected {nr}x{nr}", z.nrows(), z.ncols())));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::arg("inner solver needs strictly positive weights"));
        }
        let phi = if intercept {
            let colsum = phi.row_sum();
            &phi - weights * colsum
        } else {
            phi
        };
        Ok(Self {
            phi,
            reduction: reduction.clone(),
            z: z.clone(),
            weights: weights.clone(),
            lambda,
            latent_count,
            intercept,
        })
    }

    /// Same problem with another `Z` (and `λ`).
    pub fn with_z(&self, z: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if z.shape() != self.z.shape() {
            return Err(Error::dim("Z shape changed"));
        }
        if !(lambda > 0.0) {
            return Err(Error::arg(format!("lambda must be positive, got {lambda}")));
        }
        let mut out = self.clone();
        out.z = z.clone();
        out.lambda = lambda;
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.phi
    }

    fn scale(&self) -> f64 {
        self.latent_count as f64 / self.lambda
    }

    /// `Φᵀ D R` (`r × N_R`).
    fn reduced_block(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        self.reduction.right_reduce(&self.phi.tr_mul(d))
    }

    /// `(P/2λ) tr(D B Dᵀ K) ≥ 0`.
    pub fn quad(&self, d: &DMatrix<f64>) -> f64 {
        let cr = self.reduced_block(d);
        let m = &cr * &self.z;
        0.5 * self.scale() * m.dot(&cr)
    }

    /// `(T(Ω), ∇T(Ω))`.
    pub fn value_grad(&self, omega: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let n = self.len();
        let d = DMatrix::identity(n, n) - omega;
        let cr = self.reduced_block(&d);
        let m = &cr * &self.z;
        let t = -0.5 * self.scale() * m.dot(&cr);
        let grad = (&self.phi * self.reduction.right_expand(&m)) * self.scale();
        (t, grad)
    }

    pub fn value(&self, omega: &OmegaState) -> f64 {
        let n = self.len();
        -self.quad(&(DMatrix::identity(n, n) - omega.omega())) + omega.weighted_entropy(&self.weights)
    }

    /// Raw outer gradient `G = −P/(2λ) Rᵀ(I−Ω)ᵀK(I−Ω)R` (`N_R × N_R`).
    pub fn outer_gradient(&self, omega: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.len();
        let cr = self.reduced_block(&(DMatrix::identity(n, n) - omega));
        cr.tr_mul(&cr) * (-0.5 * self.scale())
    }

    /// `(P/λ) ‖K_c‖₂ ‖B‖₂`, by power iteration.
    fn curvature_bound(&self) -> f64 {
        let gram = self.phi.tr_mul(&self.phi);
        let k_norm = power_norm(gram.nrows(), |v| &gram * v, 1e-3);
        let b_norm = power_norm(
            self.len(),
            |v| {
                let row = DMatrix::from_row_slice(1, v.len(), v.as_slice());
                let zr = self.reduction.right_reduce(&row) * &self.z;
                DVector::from_column_slice(self.reduction.right_expand(&zr).as_slice())
            },
            1e-3,
        );
        // Power iteration slightly underestimates.
        1.05 * self.scale() * k_norm * b_norm
    }
}

/// Exact prox step before projection, in log space:
/// `log Ω_nm = (grad_nm/π_n + L log Ω⁰_nm)/(L + 1)`, row-normalised, with
/// entries floored at `floor` relative to the row maximum.
pub fn prox_step_log(log_omega0: &DMatrix<f64>, grad: &DMatrix<f64>, lipschitz: f64, weights: &DVector<f64>, floor: f64) -> Result<DMatrix<f64>> {
    if !(lipschitz > 0.0) {
        return Err(Error::StepNotConcave(lipschitz));
    }
    let n = log_omega0.nrows();
    if grad.shape() != (n, n) || log_omega0.shape() != (n, n) || weights.len() != n {
        return Err(Error::dim("prox_step inputs have inconsistent shapes"));
    }
    let mut out = DMatrix::zeros(n, n);
    let inv = 1.0 / (lipschitz + 1.0);
    let log_floor = floor.ln();
    for i in 0..n {
        let mut mx = f64::NEG_INFINITY;
        for j in 0..n {
            let v = (grad[(i, j)] / weights[i] + lipschitz * log_omega0[(i, j)]) * inv;
            out[(i, j)] = v;
            mx = mx.max(v);
        }
        let mut s = 0.0;
        for j in 0..n {
            let v = (out[(i, j)] - mx).max(log_floor);
            out[(i, j)] = v;
            s += v.exp();
        }
        let ls = s.ln();
        for j in 0..n {
            out[(i, j)] -= ls;
        }
    }
    Ok(out)
}

/// Prox step of a state, returned as a row-stochastic matrix.
pub fn prox_step(omega0: &OmegaState, grad: &DMatrix<f64>, lipschitz: f64, weights: &DVector<f64>) -> Result<DMatrix<f64>> {
    Ok(prox_step_log(omega0.log_omega(), grad, lipschitz, weights, FLOOR)?.map(f64::exp))
}

/// Outcome of an IPFP run.
#[derive(Clone, Debug)]
pub struct IpfpOutcome {
    pub state: OmegaState,
    pub sweeps: usize,
    /// `Σ_m |Σ_n π_n Ω_nm − π_m|` after the row step of every sweep.
    pub residual_trace: Vec<f64>,
    /// Column scaling, reusable as a warm start.
    pub col_scale: DVector<f64>,
}

/// I-projection of a positive matrix given by its logarithm onto the
/// feasible set, by alternating row and weighted-column rescaling. The
/// input is floored at `floor` relative to each row maximum; the output is
/// floored at `floor` absolutely.
pub fn ipfp_project_log(
    log_m: &DMatrix<f64>,
    weights: &DVector<f64>,
    tol: f64,
    max_sweeps: usize,
    floor: f64,
    warm_col: Option<&DVector<f64>>,
) -> Result<IpfpOutcome> {
    let n = log_m.nrows();
    if log_m.shape() != (n, n) || weights.len() != n {
        return Err(Error::dim("ipfp inputs have inconsistent shapes"));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::arg("IPFP needs strictly positive weights"));
    }
    if log_m.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::arg("IPFP input has NaN or infinite entries"));
    }
    let log_floor = floor.ln();
    // Row-max shift; the row scaling absorbs it.
    let mut m = DMatrix::zeros(n, n);
    let mut shifted = log_m.clone();
    for i in 0..n {
        let mx = (0..n).map(|j| log_m[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        for j in 0..n {
            let v = (log_m[(i, j)] - mx).max(log_floor);
            shifted[(i, j)] = v;
            m[(i, j)] = v.exp();
        }
    }
    let mut c = match warm_col {
        Some(c) if c.len() == n && c.iter().all(|v| v.is_finite() && *v > 0.0) => c.clone(),
        _ => DVector::from_element(n, 1.0),
    };
    let mut r = DVector::zeros(n);
    let mut trace = Vec::new();
    let mut sweeps = 0;
    let mut colsum = DVector::zeros(n);
    loop {
        sweeps += 1;
        let mc = &m * &c;
        for i in 0..n {
            r[i] = 1.0 / mc[i];
        }
        let wr = weights.component_mul(&r);
        m.tr_mul_to(&wr, &mut colsum);
        let mut l1 = 0.0;
        let mut linf = 0.0f64;
        for j in 0..n {
            let e = (c[j] * colsum[j] - weights[j]).abs();
            l1 += e;
            linf = linf.max(e);
        }
        trace.push(l1);
        if linf <= tol {
            break;
        }
        if sweeps >= max_sweeps {
            let omega = DMatrix::from_fn(n, n, |i, j| r[i] * m[(i, j)] * c[j]);
            let row_res = omega.row_iter().map(|row| (row.sum() - 1.0).abs()).fold(0.0, f64::max);
            return Err(Error::IpfpNoConvergence {
                sweeps,
                row_residual: row_res,
                col_residual: linf,
            });
        }
        for j in 0..n {
            c[j] = weights[j] / colsum[j];
        }
        // Keep the scalings in range; a common factor moves between r and c.
        let cmax = c.max();
        if !(1e-100..=1e100).contains(&cmax) {
            c /= cmax;
        }
    }
    let lr = r.map(f64::ln);
    let lc = c.map(f64::ln);
    let mut log_omega = DMatrix::from_fn(n, n, |i, j| lr[i] + shifted[(i, j)] + lc[j]);
    let mut omega = log_omega.map(f64::exp);
    // Absolute floor, then restore exact row sums.
    for i in 0..n {
        let mut touched = false;
        for j in 0..n {
            if omega[(i, j)] < floor {
                omega[(i, j)] = floor;
                touched = true;
            }
        }
        let s = omega.row(i).sum();
        if touched || (s - 1.0).abs() > 1e-15 {
            for j in 0..n {
                omega[(i, j)] /= s;
                log_omega[(i, j)] = omega[(i, j)].ln();
            }
        }
    }
    Ok(IpfpOutcome {
        state: OmegaState { omega, log_omega },
        sweeps,
        residual_trace: trace,
        col_scale: c,
    })
}

/// I-projection of a positive matrix onto the feasible set.
pub fn ipfp_project(m: &DMatrix<f64>, weights: &DVector<f64>) -> Result<OmegaState> {
    if m.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::arg("IPFP input must be strictly positive"));
    }
    Ok(ipfp_project_log(&m.map(f64::ln), weights, IPFP_TOL, IPFP_MAX_SWEEPS, FLOOR, None)?.state)
}

/// Row normalisation in log space (the projection without intercept).
fn row_normalize_log(log_m: &DMatrix<f64>, floor: f64) -> OmegaState {
    let n = log_m.nrows();
    let log_floor = floor.ln();
    let mut log_omega = log_m.clone();
    for i in 0..n {
        let mx = (0..n).map(|j| log_m[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for j in 0..n {
            let v = (log_m[(i, j)] - mx).max(log_floor);
            log_omega[(i, j)] = v;
            s += v.exp();
        }
        let ls = s.ln();
        for j in 0..n {
            log_omega[(i, j)] -= ls;
        }
    }
    let omega = log_omega.map(f64::exp);
    OmegaState { omega, log_omega }
}

/// `∇F = ∇T − π_n (log Ω_nm + 1)`.
pub fn grad_f(grad_t: &DMatrix<f64>, omega: &OmegaState, weights: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(grad_t.nrows(), grad_t.ncols(), |i, j| {
        grad_t[(i, j)] - weights[i] * (omega.log_omega[(i, j)] + 1.0)
    })
}

/// Frank-Wolfe gap `max_{Ω′ ∈ 𝒪} ⟨∇F, Ω′ − Ω⟩`, computed exactly as a
/// transportation problem on the π-scaled variable `X = Diag(π) Ω′`.
pub fn inner_gap(omega: &OmegaState, grad_f: &DMatrix<f64>, weights: &DVector<f64>) -> Result<f64> {
    let n = omega.len();
    if grad_f.shape() != (n, n) || weights.len() != n {
        return Err(Error::dim("inner_gap inputs have inconsistent shapes"));
    }
    let profit = DMatrix::from_fn(n, n, |i, j| grad_f[(i, j)] / weights[i]);
    let w: Vec<f64> = weights.iter().copied().collect();
    let plan = max_profit_transport(&profit, &w, &w)?;
    Ok((plan.value - grad_f.dot(omega.omega())).max(0.0))
}

/// Frank-Wolfe gap over row-stochastic matrices (no intercept): a row-wise
/// maximum.
pub fn inner_gap_rows(omega: &OmegaState, grad_f: &DMatrix<f64>) -> f64 {
    let mut gap = 0.0;
    for i in 0..omega.len() {
        let row = grad_f.row(i);
        gap += row.max() - row.dot(&omega.omega.row(i));
    }
    gap.max(0.0)
}

struct Projector<'a> {
    weights: &'a DVector<f64>,
    cfg: &'a InnerConfig,
    warm_col: Option<DVector<f64>>,
}

impl Projector<'_> {
    fn project(&mut self, log_m: &DMatrix<f64>) -> Result<OmegaState> {
        if !self.cfg.intercept {
            return Ok(row_normalize_log(log_m, self.cfg.floor));
        }
        let out = ipfp_project_log(
            log_m,
            self.weights,
            self.cfg.ipfp_tol,
            self.cfg.ipfp_max_sweeps,
            self.cfg.floor,
            self.warm_col.as_ref(),
        )?;
        self.warm_col = Some(out.col_scale);
        Ok(out.state)
    }
}

fn initial_lipschitz(problem: &InnerProblem, cfg: &InnerConfig) -> f64 {
    cfg.lipschitz_init.unwrap_or_else(|| {
        let min_w = problem.weights.min();
        1.0 + problem.curvature_bound() / min_w
    })
}

/// Maximise `F` over the feasible set.
pub fn solve_inner(problem: &InnerProblem, cfg: &InnerConfig, warm: Option<&OmegaState>) -> Result<InnerResult> {
    cfg.validate()?;
    if problem.intercept != cfg.intercept {
        return Err(Error::arg("inner problem and config disagree on the intercept"));
    }
    let n = problem.len();
    let mut best: Option<InnerResult> = None;
    for start in 0..cfg.restarts {
        let init = if start == 0 {
            match warm {
                Some(w) if w.len() == n => w.clone(),
                Some(_) => return Err(Error::dim("warm start has the wrong size")),
                None => OmegaState::prior(&problem.weights),
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + start as u64);
            let log_m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-3.0..3.0));
            let mut proj = Projector { weights: &problem.weights, cfg, warm_col: None };
            proj.project(&log_m)?
        };
        let res = solve_from(problem, cfg, init)?;
        if best.as_ref().is_none_or(|b| res.value > b.value) {
            best = Some(res);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

fn solve_from(problem: &InnerProblem, cfg: &InnerConfig, init: OmegaState) -> Result<InnerResult> {
    let w = &problem.weights;
    let mut proj = Projector { weights: w, cfg, warm_col: None };
    let mut proj_y = Projector { weights: w, cfg, warm_col: None };
    // Re-project so that the start is feasible to the working tolerance.
    let mut x = if cfg.intercept {
        proj.project(init.log_omega())?
    } else {
        row_normalize_log(init.log_omega(), cfg.floor)
    };
    let mut fx = problem.value(&x);
    let mut x_prev = x.clone();
    let mut lip = initial_lipschitz(problem, cfg);
    let lip_min = 1e-8;
    let mut t_seq = 1.0f64;
    let mut accepted = 0usize;
    let mut stat_tol = cfg.tol;
    let mut trace = Vec::new();
    let mut gap = f64::INFINITY;
    let mut certified = false;
    let mut iterations = 0usize;
    let mut next_stag_check = 0usize;
    let mut stag_gap = f64::INFINITY;

    while iterations < cfg.max_iter {
        iterations += 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_seq * t_seq).sqrt());
        let theta = if cfg.accelerate { (t_seq - 1.0) / t_next } else { 0.0 };
        let extrapolated = theta > 0.0;
        let y = if extrapolated {
            let ly = x.log_omega() * (1.0 + theta) - x_prev.log_omega() * theta;
            proj_y.project(&ly)?
        } else {
            x.clone()
        };
        let (_, g_y) = problem.value_grad(y.omega());
        let mut cand;
        let mut backtracks = 0;
        loop {
            let lc = prox_step_log(y.log_omega(), &g_y, lip, w, cfg.floor)?;
            cand = proj.project(&lc)?;
            let (delta, kl) = step_and_divergence(&cand, &y, w);
            let curv = problem.quad(&delta);
            if curv <= lip * kl * (1.0 + 1e-9) + 1e-14 * (1.0 + fx.abs()) {
                break;
            }
            lip *= 2.0;
            backtracks += 1;
            if backtracks > 100 {
                return Err(Error::arg("curvature backtracking did not terminate"));
            }
        }
        let fc = problem.value(&cand);
        let slack = 1e-12 * (1.0 + fx.abs());
        if fc < fx - slack {
            if extrapolated {
                // Monotone restart: drop the momentum and retry from x.
                t_seq = 1.0;
                x_prev = x.clone();
                continue;
            }
            // A plain prox step from x cannot decrease F beyond rounding.
            break;
        }
        let stationarity = {
            let mut s = 0.0;
            for i in 0..cand.len() {
                let mut row = 0.0;
                for j in 0..cand.len() {
                    row += (cand.omega()[(i, j)] - y.omega()[(i, j)]).abs();
                }
                s += w[i] * row;
            }
            lip * s
        };
        x_prev = std::mem::replace(&mut x, cand);
        fx = fc;
        t_seq = t_next;
        accepted += 1;
        trace.push(InnerTraceRow {
            iter: iterations,
            value: fx,
            stationarity,
            lipschitz: lip,
            row_residual: x.row_residual(),
            col_residual: x.col_residual(w),
        });
        if accepted % 10 == 0 {
            lip = (lip * 0.5).max(lip_min);
        }
        // Stagnation: with the entropy kept exact, one plain step closes at
        // least a 1/(L+1) fraction of the remaining suboptimality, so a
        // window of negligible increases means the value is converged even
        // when rounding keeps the stationarity measure above tolerance.
        let window = 10;
        let stagnated = trace.len() > window && trace.len() >= next_stag_check && {
            let gain = fx - trace[trace.len() - 1 - window].value;
            gain * (lip + 1.0) <= 1e-13 * (1.0 + fx.abs())
        };
        if stationarity <= stat_tol || stagnated {
            if !cfg.certify {
                gap = stationarity;
                break;
            }
            let (_, gt) = problem.value_grad(x.omega());
            let gf = grad_f(&gt, &x, w);
            gap = if cfg.intercept { inner_gap(&x, &gf, w)? } else { inner_gap_rows(&x, &gf) };
            if gap <= cfg.gap_tol {
                certified = true;
                break;
            }
            if stagnated {
                // The value is flat but the point can still move toward
                // stationarity. Keep going while that halves the gap, and
                // report the gap reached once it stops doing so.
                if gap > 0.5 * stag_gap {
                    certified = true;
                    break;
                }
                stag_gap = gap;
                next_stag_check = trace.len() + 5 * window;
                continue;
            }
            stat_tol *= 0.1;
            if stat_tol < 1e-15 {
                certified = true;
                break;
            }
        }
    }
    if !certified {
        if cfg.certify {
            let (_, gt) = problem.value_grad(x.omega());
            let gf = grad_f(&gt, &x, w);
            gap = if cfg.intercept { inner_gap(&x, &gf, w)? } else { inner_gap_rows(&x, &gf) };
            certified = true;
        } else if !gap.is_finite() {
            gap = trace.last().map_or(f64::INFINITY, |r: &InnerTraceRow| r.stationarity);
        }
    }
    Ok(InnerResult {
        value: fx,
        omega: x,
        gap,
        certified,
        iterations,
        monotone: trace.windows(2).all(|p| p[1].value >= p[0].value - 1e-12 * (1.0 + p[0].value.abs())),
        lipschitz: lip,
        trace,
    })
}

/// Convenience wrapper: `B` given densely (identity reduction, `Z = B`).
pub fn solve_inner_dense(
    b: &DMatrix<f64>,
    k: &ReweightedGram,
    lambda: f64,
    latent_count: usize,
    cfg: &InnerConfig,
    warm: Option<&OmegaState>,
) -> Result<InnerResult> {
    let r = ReductionMap::identity(k.len());
    let problem = InnerProblem::new(k, &r, b, lambda, latent_count, cfg.intercept, cfg.factor_tol)?;
    solve_inner(&problem, cfg, warm)
}
