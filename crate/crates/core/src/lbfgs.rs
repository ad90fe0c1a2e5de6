//! Limited-memory BFGS for smooth unconstrained minimisation.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct LbfgsConfig {
    /// History length.
    pub memory: usize,
    /// Stop once `‖∇f‖₂ ≤ gtol`.
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            gtol: 1e-8,
            max_iter: 5000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimise `f` from `x0`; `f` returns the value and gradient.
///
/// Every accepted step satisfies the Armijo condition, so values are
/// nonincreasing. If the gradient norm grows tenfold beyond its initial value
/// and the line search then fails, the run is reported as diverged.
pub fn minimize(mut f: impl FnMut(&DVector<f64>) -> (f64, DVector<f64>), x0: DVector<f64>, cfg: &LbfgsConfig) -> Result<LbfgsResult> {
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("objective is not finite at the starting point"));
    }
    let g0 = g.norm();
    let mut hist: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let gn = g.norm();
        if gn <= cfg.gtol {
            return Ok(LbfgsResult { x, value: fx, grad_norm: gn, iterations, converged: true });
        }
        iterations += 1;
        let mut d = two_loop(&g, &hist);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            hist.clear();
            d = -&g;
            slope = -gn * gn;
        }
        let mut step = if hist.is_empty() { (1.0 / gn).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let xn = &x + &d * step;
            let (fn_, gn_) = f(&xn);
            if fn_.is_finite() && fn_ <= fx + ARMIJO * step * slope {
                accepted = Some((xn, fn_, gn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gnew)) = accepted else {
            // Rounding floor: no representable decrease along d.
            if gn > 10.0 * g0.max(cfg.gtol) {
                return Err(Error::MStepDiverged { initial: g0, current: gn });
            }
            return Ok(LbfgsResult { x, value: fx, grad_norm: gn, iterations, converged: false });
        };
        let s = &xn - &x;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        g = gnew;
    }
    let gn = g.norm();
    Ok(LbfgsResult { x, value: fx, grad_norm: gn, iterations, converged: gn <= cfg.gtol })
}

fn two_loop(g: &DVector<f64>, hist: &VecDeque<(DVector<f64>, DVector<f64>, f64)>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alpha = vec![0.0; hist.len()];
    for (k, (s, y, rho)) in hist.iter().enumerate().rev() {
        alpha[k] = rho * s.dot(&q);
        q -= y * alpha[k];
    }
    if let Some((s, y, _)) = hist.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for (k, (s, y, rho)) in hist.iter().enumerate() {
        let beta = rho * y.dot(&q);
        q += s * (alpha[k] - beta);
    }
    -q
}
