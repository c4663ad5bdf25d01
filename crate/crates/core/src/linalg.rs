//! Small sparse linear solvers for the grid operators.

use crate::error::{MfgError, Result};

/// Row-wise sparse matrix; each row stores its diagonal separately.
#[derive(Clone, Debug)]
pub(crate) struct SparseRows {
    pub diag: Vec<f64>,
    pub off: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(n: usize) -> Self {
        Self {
            diag: vec![0.0; n],
            off: vec![Vec::new(); n],
        }
    }

    pub fn add(&mut self, row: usize, col: usize, v: f64) {
        if row == col {
            self.diag[row] += v;
            return;
        }
        if let Some(e) = self.off[row].iter_mut().find(|e| e.0 == col) {
            e.1 += v;
        } else {
            self.off[row].push((col, v));
        }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = self.diag[i] * x[i];
            for &(j, v) in &self.off[i] {
                s += v * x[j];
            }
            *yi = s;
        }
    }

    /// Direct solve when the pattern is tridiagonal (1D grids).
    pub fn solve_tridiagonal(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut lower = vec![0.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            for &(j, v) in &self.off[i] {
                if j + 1 == i {
                    lower[i] = v;
                } else if j == i + 1 {
                    upper[i] = v;
                }
            }
        }
        thomas(&lower, &self.diag, &upper, rhs)
    }
}

/// Solves a tridiagonal system; `lower[0]` and `upper[n-1]` are ignored.
pub(crate) fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / den } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Right-preconditioned BiCGSTAB.
pub(crate) fn bicgstab(
    a: &dyn Fn(&[f64], &mut [f64]),
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = b.len();
    let mut x = x0;
    let mut r = vec![0.0; n];
    a(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = dot(b, b).sqrt().max(f64::MIN_POSITIVE);
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = dot(&r, &r).sqrt();
    for _ in 0..max_iter {
        if res <= tol * bnorm {
            return Ok(x);
        }
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = precond(&p);
        a(&ph, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if dot(&s, &s).sqrt() <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok(x);
        }
        let sh = precond(&s);
        a(&sh, &mut t);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        res = dot(&r, &r).sqrt();
        if !res.is_finite() || omega == 0.0 {
            break;
        }
    }
    if res <= tol * bnorm {
        return Ok(x);
    }
    Err(MfgError::SolverDiverged {
        iterations: max_iter,
        residual: res / bnorm,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_solves_poisson_like_system() {
        let n = 50;
        let lower = vec![-1.0; n];
        let upper = vec![-1.0; n];
        let diag = vec![2.5; n];
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            rhs[i] = 2.5 * xs[i] - if i > 0 { xs[i - 1] } else { 0.0 } - if i + 1 < n { xs[i + 1] } else { 0.0 };
        }
        let x = thomas(&lower, &diag, &upper, &rhs);
        assert!(x.iter().zip(&xs).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let n = 40;
        let mut m = SparseRows::new(n);
        for i in 0..n {
            m.add(i, i, 4.0);
            if i > 0 {
                m.add(i, i - 1, -1.5);
            }
            if i + 1 < n {
                m.add(i, i + 1, -0.5);
            }
        }
        let xs: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.01).collect();
        let mut b = vec![0.0; n];
        m.apply(&xs, &mut b);
        let x = bicgstab(&|v, out| m.apply(v, out), &|v| v.to_vec(), &b, vec![0.0; n], 1e-13, 500).unwrap();
        assert!(x.iter().zip(&xs).all(|(a, b)| (a - b).abs() < 1e-10));
        let y = m.solve_tridiagonal(&b);
        assert!(y.iter().zip(&xs).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
