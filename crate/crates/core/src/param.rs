//! Unconstrained coordinates for one population.
//!
//! `x = (φ, ψ)` maps to `m = φ²/S` with `S = h^N Σ φ²` and
//! `w = grad m + curl ψ`, so every image is nonnegative, has unit mass and
//! satisfies the discrete Fokker–Planck identity exactly. In 1D the stream
//! part is empty and `w = grad m` is the only feasible flux.

use crate::grid::{self, curl_adjoint, curl_into, stream_len, FluxField, GridSpec, ScalarField};
use crate::spectral::NeumannSpectrum;

#[derive(Clone, Debug)]
pub(crate) struct Codec {
    pub grid: GridSpec,
    pub nc: usize,
    pub ns: usize,
    spectrum: NeumannSpectrum,
    /// Shift of the `(σ - Δ)^{-1}` preconditioner on the `φ` block.
    sigma: f64,
}

impl Codec {
    pub fn new(grid: &GridSpec, width: f64) -> Self {
        Self {
            grid: *grid,
            nc: grid.num_cells(),
            ns: stream_len(grid),
            spectrum: NeumannSpectrum::new(grid),
            sigma: 1.0 / (width * width),
        }
    }

    pub fn len(&self) -> usize {
        self.nc + self.ns
    }

    /// Writes `m` and `w` for `x`; returns `S`.
    pub fn decode(&self, x: &[f64], m: &mut [f64], w: &mut [Vec<f64>]) -> f64 {
        let phi = &x[..self.nc];
        let s = self.grid.cell_volume() * phi.iter().map(|p| p * p).sum::<f64>();
        for (mi, p) in m.iter_mut().zip(phi) {
            *mi = p * p / s;
        }
        grid::grad_into(&self.grid, m, w);
        if self.ns > 0 {
            let mut c: Vec<Vec<f64>> = w.iter().map(|f| vec![0.0; f.len()]).collect();
            curl_into(&self.grid, &x[self.nc..], &mut c);
            for (wa, ca) in w.iter_mut().zip(&c) {
                for (a, b) in wa.iter_mut().zip(ca) {
                    *a += b;
                }
            }
        }
        s
    }

    pub fn decode_fields(&self, x: &[f64]) -> (ScalarField, FluxField) {
        let mut m = ScalarField::zeros(self.grid);
        let mut w = FluxField::zeros(self.grid);
        self.decode(x, &mut m.values, &mut w.faces);
        (m, w)
    }

    /// Coordinates of a nonnegative density with a gradient flux.
    pub fn encode(&self, m: &ScalarField) -> Vec<f64> {
        let mut x: Vec<f64> = m.values.iter().map(|v| v.max(0.0).sqrt()).collect();
        x.resize(self.len(), 0.0);
        x
    }

    /// Pulls partial derivatives `(g_m, g_w)` of an objective of `(m, w)` back
    /// to `x`. `g_m` is overwritten as scratch.
    pub fn pullback(&self, x: &[f64], s: f64, m: &[f64], g_m: &mut [f64], g_w: &mut [Vec<f64>], out: &mut [f64]) {
        let g = &self.grid;
        for (a, faces) in g_w.iter_mut().enumerate() {
            for (k, v) in faces.iter_mut().enumerate() {
                if g.face_cells(a, k).is_none() {
                    *v = 0.0;
                }
            }
        }
        // total derivative in m: g_m + gradᵀ g_w = g_m - div g_w
        let mut d = vec![0.0; self.nc];
        grid::div_into(g, g_w, &mut d);
        for (gm, dv) in g_m.iter_mut().zip(&d) {
            *gm -= dv;
        }
        let hv = g.cell_volume();
        let avg = hv * g_m.iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
        for j in 0..self.nc {
            out[j] = 2.0 * x[j] / s * (g_m[j] - avg);
        }
        if self.ns > 0 {
            curl_adjoint(g, g_w, &mut out[self.nc..]);
        }
    }

    /// `(σ - Δ)^{-1}` on the `φ` block, identity on `ψ`.
    pub fn precondition(&self, g: &[f64], out: &mut [f64]) {
        let p = self.spectrum.solve_shifted(&g[..self.nc], self.sigma);
        out[..self.nc].copy_from_slice(&p);
        let scale = self.sigma;
        for (o, v) in out[self.nc..].iter_mut().zip(&g[self.nc..]) {
            *o = v / scale;
        }
    }

    /// Rescales `φ` so that `S = 1`; returns `true` if it drifted by more than 1%.
    pub fn renormalize(&self, x: &mut [f64]) -> bool {
        let s = self.grid.cell_volume() * x[..self.nc].iter().map(|p| p * p).sum::<f64>();
        if (s - 1.0).abs() > 0.01 {
            let f = 1.0 / s.sqrt();
            x[..self.nc].iter_mut().for_each(|p| *p *= f);
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{kinetic_raw, HamiltonianParams};
    use crate::feasible::fp_residual;

    fn codec2() -> (Codec, Vec<f64>) {
        let g = GridSpec::new(2, 2.0, 16).unwrap();
        let c = Codec::new(&g, 1.0);
        let mut x = vec![0.0; c.len()];
        for (k, v) in x.iter_mut().enumerate() {
            *v = if k < c.nc {
                let p = g.center(k);
                (-(p[0] * p[0] + 0.5 * p[1] * p[1])).exp() + 0.05
            } else {
                0.01 * ((k as f64) * 0.37).sin()
            };
        }
        (c, x)
    }

    #[test]
    fn decoded_pairs_are_feasible() {
        let (c, x) = codec2();
        let (m, w) = c.decode_fields(&x);
        assert!((grid::mass(&m) - 1.0).abs() < 1e-13);
        assert!(fp_residual(&m, &w).values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn pullback_matches_finite_differences() {
        let (c, x) = codec2();
        let hp = HamiltonianParams::new(2.5, 1.0).unwrap();
        let f = |x: &[f64]| {
            let (m, w) = c.decode_fields(x);
            kinetic_raw(&c.grid, &m.values, &w.faces, &hp, None).unwrap()
                + m.values.iter().map(|v| v * v).sum::<f64>()
        };
        let (m, w) = c.decode_fields(&x);
        let mut gm = vec![0.0; c.nc];
        let mut gw = FluxField::zeros(c.grid).faces;
        kinetic_raw(&c.grid, &m.values, &w.faces, &hp, Some((&mut gm, &mut gw))).unwrap();
        for (g, v) in gm.iter_mut().zip(&m.values) {
            *g += 2.0 * v;
        }
        let s = c.grid.cell_volume() * x[..c.nc].iter().map(|p| p * p).sum::<f64>();
        let mut out = vec![0.0; c.len()];
        c.pullback(&x, s, &m.values, &mut gm, &mut gw, &mut out);
        for &k in &[0usize, 37, 130, 255, 256, 300, 400] {
            let h = 1e-6;
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - out[k]).abs() < 1e-5 * (1.0 + fd.abs()), "k={k}: {fd} vs {}", out[k]);
        }
    }
}
