//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! The search direction comes from the standard two-loop recursion over the
//! last `memory` curvature pairs. Accepted iterates always satisfy the Armijo
//! sufficient-decrease condition, so the recorded cost history is strictly
//! decreasing.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the gradient 2-norm falls below this value.
    pub grad_tol: f64,
    /// Stop when |Δf| / max(|f|, |f_new|, 1) falls below this value.
    pub cost_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iters: 100, grad_tol: 1e-6, cost_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Objective at x0 followed by the objective at every accepted iterate.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl LbfgsResult {
    /// True when the run ended on a line-search failure instead of a
    /// convergence test or the iteration cap.
    pub fn degraded(&self) -> bool {
        self.termination == Termination::LineSearchFailed
    }
}

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `objective` starting from `x0`.
///
/// The objective writes the gradient into its second argument and returns the
/// function value.
pub fn minimize<F>(mut objective: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("objective is not finite at the starting point"));
    }
    let mut history = vec![f];
    if n == 0 {
        return Ok(LbfgsResult {
            x,
            value: f,
            grad_norm: 0.0,
            history,
            iterations: 0,
            termination: Termination::GradientTolerance,
        });
    }

    let memory = cfg.memory.max(1);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut d = vec![0.0; n];
    let mut x_trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];
    let mut alpha_buf = vec![0.0; memory];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        let gnorm = norm(&g);
        if gnorm < cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }

        two_loop(&g, &pairs, &mut alpha_buf, &mut d);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -gnorm * gnorm;
        }
        // Without curvature information the first trial step has unit length.
        let mut step = if pairs.is_empty() { 1.0 / gnorm.max(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            for i in 0..n {
                x_trial[i] = x[i] + step * d[i];
            }
            let f_trial = objective(&x_trial, &mut g_trial);
            if f_trial.is_finite() && f_trial <= f + ARMIJO_C1 * step * slope && f_trial < f {
                accepted = Some(f_trial);
                break;
            }
            step *= BACKTRACK;
        }

        let Some(f_new) = accepted else {
            if !pairs.is_empty() {
                // Retry once from steepest descent before giving up.
                pairs.clear();
                continue;
            }
            termination = Termination::LineSearchFailed;
            break;
        };

        iterations += 1;
        let s: Vec<f64> = x_trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let rel = (f - f_new).abs() / f.abs().max(f_new.abs()).max(1.0);
        x.copy_from_slice(&x_trial);
        g.copy_from_slice(&g_trial);
        f = f_new;
        history.push(f);
        if rel < cfg.cost_tol {
            termination = Termination::CostTolerance;
            break;
        }
    }

    Ok(LbfgsResult { grad_norm: norm(&g), x, value: f, history, iterations, termination })
}

/// d = −H g using the stored (s, y, 1/sᵀy) pairs, oldest first.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, alpha: &mut [f64], d: &mut [f64]) {
    d.copy_from_slice(g);
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, d);
        alpha[k] = a;
        d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        d.iter_mut().for_each(|di| *di *= gamma);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, d);
        d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha[k] - b) * si);
    }
    d.iter_mut().for_each(|di| *di = -*di);
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    #[test]
    fn convex_quadratic_matches_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let a = &m * m.transpose() + DMatrix::identity(8, 8) * 0.5;
        let b = DVector::from_fn(8, |_, _| rng.random_range(-2.0..2.0));
        let exact = a.clone().lu().solve(&b).unwrap();

        let obj = |x: &[f64], g: &mut [f64]| {
            let xv = DVector::from_column_slice(x);
            let ax = &a * &xv;
            g.copy_from_slice((&ax - &b).as_slice());
            0.5 * xv.dot(&ax) - b.dot(&xv)
        };
        let cfg = LbfgsConfig { max_iters: 50, grad_tol: 1e-9, cost_tol: 0.0, ..Default::default() };
        let res = minimize(obj, &[0.0; 8], &cfg).unwrap();
        let err = (DVector::from_vec(res.x.clone()) - exact).norm();
        assert!(err < 1e-6, "err={err}, iters={}", res.iterations);
        assert!(res.iterations <= 50);
    }

    #[test]
    fn starts_at_minimum() {
        let res = minimize(rosenbrock, &[1.0, 1.0], &LbfgsConfig::default()).unwrap();
        assert!(res.iterations <= 1);
        assert_eq!(res.termination, Termination::GradientTolerance);
    }

    #[test]
    fn rosenbrock_from_standard_start() {
        let cfg = LbfgsConfig { max_iters: 200, grad_tol: 1e-10, cost_tol: 0.0, ..Default::default() };
        let res = minimize(rosenbrock, &[-1.2, 1.0], &cfg).unwrap();
        assert!(res.value < 1e-8, "f={} after {} iters", res.value, res.iterations);
        assert!(res.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn rejects_non_finite_start() {
        let obj = |_: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        };
        assert!(minimize(obj, &[0.0], &LbfgsConfig::default()).is_err());
    }

    #[test]
    fn line_search_failure_is_flagged() {
        // Gradient points the wrong way: no descent step exists along −g.
        let obj = |x: &[f64], g: &mut [f64]| {
            g[0] = -1.0;
            x[0] * x[0] + 1.0
        };
        let res = minimize(obj, &[0.0], &LbfgsConfig::default()).unwrap();
        assert!(res.degraded());
        assert_eq!(res.x, vec![0.0]);
    }
}
