//! Limited-memory BFGS with Armijo backtracking.
//!
//! Accepted iterates never increase the objective. Evaluation errors are
//! treated as `+∞`, so the line search backs away from infeasible points.

use std::collections::VecDeque;

use crate::error::{MfgError, Result};

pub trait Objective {
    /// Value at `x`, writing the gradient into `grad`.
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Initial inverse-Hessian approximation applied to `g`.
    fn precondition(&self, g: &[f64]) -> Vec<f64> {
        g.to_vec()
    }

    /// Norm used for the stationarity test.
    fn grad_norm(&self, g: &[f64]) -> f64 {
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Hook run on every accepted iterate; an error aborts the run.
    fn accept(&mut self, _x: &[f64], _f: f64) -> Result<()> {
        Ok(())
    }

    /// May rewrite `x` without changing the objective (e.g. rescaling along
    /// an invariance). Returns `true` when `x` was changed.
    fn renormalize(&mut self, _x: &mut [f64]) -> bool {
        false
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    pub tol_grad: f64,
    /// Stop when the objective drops by less than this over `stall_window` iterations.
    pub tol_energy: f64,
    pub stall_window: usize,
    /// Length of the very first step along the preconditioned gradient.
    pub step0: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 12,
            max_iter: 20_000,
            tol_grad: 1e-9,
            tol_energy: 1e-13,
            stall_window: 20,
            step0: 1e-2,
            backtrack: 0.5,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn eval_or_inf(obj: &mut impl Objective, x: &[f64], g: &mut [f64]) -> f64 {
    match obj.eval(x, g) {
        Ok(v) if v.is_finite() => v,
        _ => f64::INFINITY,
    }
}

pub fn minimize(obj: &mut impl Objective, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsReport> {
    let n = x0.len();
    let mut x = x0;
    obj.renormalize(&mut x);
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g)?;
    if !f.is_finite() {
        return Err(MfgError::InvalidParameter("objective is not finite at the start point".into()));
    }
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut history = vec![f];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut fresh = true;
    for it in 0..opts.max_iter {
        let gnorm = obj.grad_norm(&g);
        if gnorm < opts.tol_grad {
            return Ok(LbfgsReport { x, value: f, grad_norm: gnorm, iterations: it, converged: true, history });
        }
        if history.len() > opts.stall_window {
            let old = history[history.len() - 1 - opts.stall_window];
            if old - f < opts.tol_energy * f.abs().max(1.0) {
                return Ok(LbfgsReport { x, value: f, grad_norm: gnorm, iterations: it, converged: true, history });
            }
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let mut d = obj.precondition(&q);
        if let Some((s, y, _)) = mem.back() {
            let yy = dot(y, &obj.precondition(y));
            let gamma = dot(s, y) / yy;
            if gamma.is_finite() && gamma > 0.0 {
                d.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            mem.clear();
            d = obj.precondition(&g);
            d.iter_mut().for_each(|v| *v = -*v);
            slope = dot(&g, &d);
            fresh = true;
        }
        let mut step = if fresh {
            let dn = dot(&d, &d).sqrt();
            (opts.step0 * (dot(&x, &x).sqrt().max(1.0)) / dn).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut fnew = f;
        for _ in 0..opts.max_backtracks {
            for i in 0..n {
                xn[i] = x[i] + step * d[i];
            }
            fnew = eval_or_inf(obj, &xn, &mut gn);
            if fnew <= f + opts.armijo * step * slope {
                accepted = true;
                break;
            }
            step *= opts.backtrack;
        }
        if !accepted {
            if !mem.is_empty() {
                mem.clear();
                fresh = true;
                continue;
            }
            // no descent possible along the preconditioned gradient
            return Ok(LbfgsReport { x, value: f, grad_norm: gnorm, iterations: it, converged: true, history });
        }
        obj.accept(&xn, fnew)?;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut g, &mut gn);
        f = fnew;
        history.push(f);
        fresh = false;
        if obj.renormalize(&mut x) {
            f = obj.eval(&x, &mut g)?;
            mem.clear();
            fresh = true;
            continue;
        }
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            mem.push_back((s, y, 1.0 / sy));
            if mem.len() > opts.memory {
                mem.pop_front();
            }
        }
    }
    let gnorm = obj.grad_norm(&g);
    Ok(LbfgsReport {
        x,
        value: f,
        grad_norm: gnorm,
        iterations: opts.max_iter,
        converged: false,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64> {
            let mut f = 0.0;
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..x.len() - 1 {
                let a = x[i + 1] - x[i] * x[i];
                let b = 1.0 - x[i];
                f += 100.0 * a * a + b * b;
                g[i] += -400.0 * a * x[i] - 2.0 * b;
                g[i + 1] += 200.0 * a;
            }
            Ok(f)
        }
    }

    #[test]
    fn solves_rosenbrock_monotonically() {
        let opts = LbfgsOptions { tol_grad: 1e-10, tol_energy: 0.0, ..Default::default() };
        let r = minimize(&mut Rosenbrock, vec![-1.2, 1.0, -0.5, 0.8], &opts).unwrap();
        assert!(r.converged);
        assert!(r.x.iter().all(|v| (v - 1.0).abs() < 1e-6), "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    struct Barrier;

    impl Objective for Barrier {
        fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64> {
            if x[0] <= 0.0 {
                return Err(MfgError::InvalidParameter("outside domain".into()));
            }
            g[0] = 1.0 - 1.0 / x[0];
            Ok(x[0] - x[0].ln())
        }
    }

    #[test]
    fn line_search_avoids_invalid_region() {
        let opts = LbfgsOptions { step0: 10.0, ..Default::default() };
        let r = minimize(&mut Barrier, vec![5.0], &opts).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }
}
