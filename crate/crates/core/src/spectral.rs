//! Exact solves for functions of the cell-centered Neumann Laplacian.
//!
//! The operator `div∘grad` with zero boundary flux is diagonalized by the
//! type-II cosine basis along each axis. At desk grid sizes the basis is
//! kept as an explicit orthonormal matrix and applied axis by axis.

use std::f64::consts::PI;

use crate::grid::GridSpec;

#[derive(Clone, Debug)]
pub struct NeumannSpectrum {
    grid: GridSpec,
    /// Row `k` holds the `k`-th orthonormal cosine mode.
    basis: Vec<f64>,
    /// Eigenvalues of the 1D Laplacian, all ≤ 0.
    eig1: Vec<f64>,
}

impl NeumannSpectrum {
    pub fn new(grid: &GridSpec) -> Self {
        let n = grid.cells();
        let h = grid.spacing();
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let norm = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for i in 0..n {
                basis[k * n + i] = norm * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
            }
        }
        let eig1 = (0..n)
            .map(|k| -4.0 / (h * h) * (PI * k as f64 / (2.0 * n as f64)).sin().powi(2))
            .collect();
        Self {
            grid: *grid,
            basis,
            eig1,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Laplacian eigenvalue of mode `k` (flat index in transform space).
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let [i, j] = self.grid.cell_ij(k);
        if self.grid.dim() == 1 {
            self.eig1[i]
        } else {
            self.eig1[i] + self.eig1[j]
        }
    }

    fn transform_1d(&self, x: &[f64], out: &mut [f64], inverse: bool) {
        let n = self.grid.cells();
        for k in 0..n {
            let mut s = 0.0;
            if inverse {
                for (i, xi) in x.iter().enumerate() {
                    s += self.basis[i * n + k] * xi;
                }
            } else {
                let row = &self.basis[k * n..(k + 1) * n];
                for (b, xi) in row.iter().zip(x) {
                    s += b * xi;
                }
            }
            out[k] = s;
        }
    }

    fn transform(&self, x: &[f64], inverse: bool) -> Vec<f64> {
        let n = self.grid.cells();
        let mut out = vec![0.0; x.len()];
        if self.grid.dim() == 1 {
            self.transform_1d(x, &mut out, inverse);
            return out;
        }
        let mut tmp = vec![0.0; x.len()];
        // along axis 1 (contiguous rows)
        for i in 0..n {
            self.transform_1d(&x[i * n..(i + 1) * n], &mut tmp[i * n..(i + 1) * n], inverse);
        }
        // along axis 0 (columns)
        let mut col = vec![0.0; n];
        let mut res = vec![0.0; n];
        for j in 0..n {
            for i in 0..n {
                col[i] = tmp[i * n + j];
            }
            self.transform_1d(&col, &mut res, inverse);
            for i in 0..n {
                out[i * n + j] = res[i];
            }
        }
        out
    }

    /// Applies `f(L)` to `x`, where `f` is evaluated on each eigenvalue.
    pub fn apply_fn(&self, x: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut c = self.transform(x, false);
        for (k, v) in c.iter_mut().enumerate() {
            *v *= f(self.eigenvalue(k));
        }
        self.transform(&c, true)
    }

    /// Solves `(σ I - L) u = r` for `σ > 0`.
    pub fn solve_shifted(&self, r: &[f64], sigma: f64) -> Vec<f64> {
        if self.grid.dim() == 1 {
            let n = r.len();
            let c = 1.0 / self.grid.spacing().powi(2);
            let off = vec![-c; n];
            let mut diag = vec![sigma + 2.0 * c; n];
            diag[0] -= c;
            diag[n - 1] -= c;
            return crate::linalg::thomas(&off, &diag, &off, r);
        }
        self.apply_fn(r, |l| 1.0 / (sigma - l))
    }

    /// Mean-free solution of `-L u = r` (the mean of `r` is discarded).
    pub fn solve_poisson(&self, r: &[f64]) -> Vec<f64> {
        self.apply_fn(r, |l| if l < 0.0 { -1.0 / l } else { 0.0 })
    }
}
