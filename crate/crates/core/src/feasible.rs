//! The discrete constraint set: `-Δm + div w = 0`, unit mass, `m ≥ 0`.
//!
//! Projection works on the dual normal equations `A Aᵀ y = A x - b`. With
//! the staggered layout the mass row decouples and the PDE block equals
//! `L² - L` for the Neumann Laplacian `L`, which the cosine basis inverts
//! exactly; that inverse serves as the preconditioner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MfgError, Result};
use crate::grid::{self, curl_into, stream_len, FluxField, GridSpec, ScalarField};
use crate::spectral::NeumannSpectrum;

pub const PROJECTION_TOL: f64 = 1e-12;
const PROJECTION_MAX_ITER: usize = 20;
const CLIP_ROUNDS: usize = 50;
/// Inputs with `min m < -SEVERE · max|m|` are rejected by clipping.
const SEVERE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct FeasiblePair {
    pub m: ScalarField,
    pub w: FluxField,
    pub residual_norm: f64,
}

impl FeasiblePair {
    /// Wraps a pair and records its constraint residual.
    pub fn from_parts(m: ScalarField, w: FluxField) -> Self {
        let residual_norm = l2(&fp_residual(&m, &w).values);
        Self { m, w, residual_norm }
    }

    pub fn grid(&self) -> GridSpec {
        self.m.grid
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `-Δ_h m + div_h w` per cell.
pub fn fp_residual(m: &ScalarField, w: &FluxField) -> ScalarField {
    let gm = grid::grad(m);
    let mut d = w.clone();
    for (a, faces) in d.faces.iter_mut().enumerate() {
        for (k, v) in faces.iter_mut().enumerate() {
            *v -= gm.faces[a][k];
        }
    }
    grid::div(&d)
}

/// `A(m, w) = (-Δ_h m + div_h w, h^N Σ m)` with its transpose and projector.
#[derive(Clone, Debug)]
pub struct ConstraintOperator {
    grid: GridSpec,
    spectrum: NeumannSpectrum,
}

impl ConstraintOperator {
    pub fn new(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            spectrum: NeumannSpectrum::new(grid),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn apply(&self, m: &ScalarField, w: &FluxField) -> (ScalarField, f64) {
        (fp_residual(m, w), grid::mass(m))
    }

    /// `Aᵀ(y, μ) = (-Δ_h y + μ h^N 1, -grad y)`.
    pub fn apply_transpose(&self, y: &ScalarField, mu: f64) -> (ScalarField, FluxField) {
        let hv = self.grid.cell_volume();
        let mut m = grid::laplacian(y);
        m.values.iter_mut().for_each(|v| *v = -*v + mu * hv);
        (m, grid::grad(y).scaled(-1.0))
    }

    /// Operator-norm scale used to make residual tolerances relative.
    fn norm_scale(&self) -> f64 {
        let h = self.grid.spacing();
        4.0 * self.grid.dim() as f64 / (h * h)
    }

    /// Euclidean projection onto `{A(m, w) = (0, 1)}`.
    pub fn project(&self, m: &ScalarField, w: &FluxField) -> Result<FeasiblePair> {
        let x_norm = l2(&m.values) + l2(&w.flat());
        let target = PROJECTION_TOL * self.norm_scale() * x_norm.max(f64::MIN_POSITIVE);
        let hv = self.grid.cell_volume();
        let count = self.grid.num_cells() as f64;
        let mut mm = m.clone();
        let mut ww = w.clone();
        ww.zero_boundary();
        let mut residual = f64::INFINITY;
        for _ in 0..PROJECTION_MAX_ITER {
            let (r, mass) = self.apply(&mm, &ww);
            let mass_err = mass - 1.0;
            residual = l2(&r.values);
            if residual <= target && mass_err.abs() <= 1e-13 {
                return Ok(FeasiblePair::from_parts(mm, ww));
            }
            let y = self.spectrum.apply_fn(&r.values, |l| {
                let d = l * l - l;
                if d > 0.0 {
                    1.0 / d
                } else {
                    0.0
                }
            });
            let y = ScalarField::new(self.grid, y)?;
            let mu = mass_err / (hv * hv * count);
            let (dm, dw) = self.apply_transpose(&y, mu);
            for (a, b) in mm.values.iter_mut().zip(&dm.values) {
                *a -= b;
            }
            for (fa, fb) in ww.faces.iter_mut().zip(&dw.faces) {
                for (a, b) in fa.iter_mut().zip(fb) {
                    *a -= b;
                }
            }
        }
        Err(MfgError::SolverDiverged {
            iterations: PROJECTION_MAX_ITER,
            residual: residual / (self.norm_scale() * x_norm),
            tol: PROJECTION_TOL,
        })
    }

    /// Clips negative densities and re-projects until both constraints hold.
    pub fn clip_nonnegative(&self, pair: &FeasiblePair) -> Result<FeasiblePair> {
        let max_abs = pair.m.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = pair.m.min();
        if min < -SEVERE * max_abs {
            return Err(MfgError::SeverelyNegative(min));
        }
        if min >= 0.0 {
            return Ok(pair.clone());
        }
        let mut cur = pair.clone();
        for _ in 0..CLIP_ROUNDS {
            cur.m.values.iter_mut().for_each(|v| *v = v.max(0.0));
            cur = self.project(&cur.m, &cur.w)?;
            if cur.m.min() >= -1e-12 {
                cur.m.values.iter_mut().for_each(|v| *v = v.max(0.0));
                return Ok(FeasiblePair::from_parts(cur.m, cur.w));
            }
        }
        // Alternating projections converge linearly; finish by adding the
        // kernel element (δm, grad δm) that removes the remaining negativity,
        // then restore unit mass by joint scaling.
        let mut dm = ScalarField::zeros(self.grid);
        for (d, v) in dm.values.iter_mut().zip(&cur.m.values) {
            *d = (-v).max(0.0);
        }
        let m = ScalarField::new(
            self.grid,
            cur.m.values.iter().zip(&dm.values).map(|(a, b)| a + b).collect(),
        )?;
        let w = cur.w.add(&grid::grad(&dm));
        let total = grid::mass(&m);
        let out = FeasiblePair::from_parts(m.scaled(1.0 / total), w.scaled(1.0 / total));
        let scale = l2(&out.m.values) + l2(&out.w.flat());
        if out.m.min() < 0.0 || out.residual_norm > 1e-10 * scale {
            return Err(MfgError::AlternatingProjectionStalled {
                rounds: CLIP_ROUNDS,
                min_m: out.m.min(),
            });
        }
        Ok(out)
    }
}

/// Convenience wrapper building a one-off operator.
pub fn project(m: &ScalarField, w: &FluxField) -> Result<FeasiblePair> {
    ConstraintOperator::new(&m.grid).project(m, w)
}

pub fn clip_nonnegative(pair: &FeasiblePair) -> Result<FeasiblePair> {
    ConstraintOperator::new(&pair.m.grid).clip_nonnegative(pair)
}

/// Keeps `m` (assumed to have unit mass) and corrects `w` by the least-norm
/// gradient `grad z`, `Δz = Δm - div w`, so the pair is feasible.
pub fn project_flux(m: ScalarField, w: &FluxField) -> FeasiblePair {
    let r = fp_residual(&m, w);
    let sp = NeumannSpectrum::new(&m.grid);
    let z = ScalarField {
        grid: m.grid,
        values: sp.solve_poisson(&r.values),
    };
    let w = w.add(&grid::grad(&z));
    FeasiblePair::from_parts(m, w)
}

/// Interpolates a pair onto another grid, restoring unit mass and the
/// constraint.
pub fn resample_pair(pair: &FeasiblePair, grid: &GridSpec) -> FeasiblePair {
    let src = pair.m.grid;
    let edge = src.half_width() - 0.5 * src.spacing();
    let m = ScalarField::from_fn(*grid, |x| pair.m.sample(x.map(|c| c.clamp(-edge, edge))).max(0.0));
    let total = grid::mass(&m);
    let m = m.scaled(1.0 / total);
    let w = FluxField::from_fn(*grid, |a, x| pair.w.sample(a, x) / total);
    project_flux(m, &w)
}

/// Smooth random field: a sum of cosine modes whose amplitudes decay like
/// `exp(-smoothness · k²)`, in units of the box.
fn smooth_noise(grid: &GridSpec, rng: &mut ChaCha8Rng, smoothness: f64, modes: usize) -> Vec<[f64; 4]> {
    let mut terms = Vec::new();
    for kx in 0..modes {
        for ky in 0..if grid.dim() == 2 { modes } else { 1 } {
            if kx == 0 && ky == 0 {
                continue;
            }
            let k2 = (kx * kx + ky * ky) as f64;
            let amp = (-smoothness * k2).exp() * rng.gen_range(-1.0..1.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            terms.push([kx as f64, ky as f64, amp, phase]);
        }
    }
    terms
}

fn eval_noise(terms: &[[f64; 4]], p: [f64; 2], l: f64) -> f64 {
    let w = std::f64::consts::PI / l;
    terms
        .iter()
        .map(|t| t[2] * (w * (t[0] * p[0] + t[1] * p[1]) + t[3]).cos())
        .sum()
}

/// A strictly positive unit-mass density with `w = grad m + curl ψ`.
/// Larger `smoothness` damps both the density noise and the solenoidal part.
pub fn random_feasible(seed: u64, grid: &GridSpec, smoothness: f64) -> FeasiblePair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = grid.half_width();
    let s = smoothness.max(0.0);
    let terms = smooth_noise(grid, &mut rng, 0.05 + 0.05 * s, 8);
    let center = [rng.gen_range(-0.2..0.2) * l, rng.gen_range(-0.2..0.2) * l];
    let width = rng.gen_range(0.15..0.35) * l;
    let mut m = ScalarField::from_fn(*grid, |p| {
        let r2: f64 = (0..grid.dim()).map(|k| (p[k] - center[k]).powi(2)).sum();
        (-r2 / (width * width) + 1.5 * eval_noise(&terms, p, l)).exp()
    });
    let total = grid::mass(&m);
    m = m.scaled(1.0 / total);
    let mut w = grid::grad(&m);
    if grid.dim() == 2 {
        let sol = smooth_noise(grid, &mut rng, 0.1, 6);
        let amp = m.max() * width / (1.0 + s);
        let n = grid.cells();
        let h = grid.spacing();
        let mut psi = vec![0.0; stream_len(grid)];
        for i in 1..n {
            for j in 1..n {
                let p = [-l + i as f64 * h, -l + j as f64 * h];
                let r2: f64 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                // keep the stream function inside the bulk of m so |w|/m stays bounded
                psi[(i - 1) * (n - 1) + (j - 1)] =
                    amp * (-2.0 * r2 / (width * width)).exp() * eval_noise(&sol, p, l);
            }
        }
        let mut c = FluxField::zeros(*grid);
        curl_into(grid, &psi, &mut c.faces);
        w = w.add(&c);
    }
    FeasiblePair::from_parts(m, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn gauss(g: GridSpec, c: f64, s: f64) -> ScalarField {
        let m = ScalarField::from_fn(g, |p| (-((p[0] - c).powi(2) + p[1].powi(2)) / (s * s)).exp());
        let t = grid::mass(&m);
        m.scaled(1.0 / t)
    }

    #[test]
    fn gradient_flux_is_in_the_kernel() {
        let g = GridSpec::new(2, 2.0, 16).unwrap();
        let m = gauss(g, 0.3, 0.7);
        let r = fp_residual(&m, &grid::grad(&m));
        assert!(r.values.iter().all(|v| v.abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let psi: Vec<f64> = (0..stream_len(&g)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = grid::grad(&m).add(&grid::curl(&g, &psi));
        assert!(fp_residual(&m, &w).values.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn zero_flux_leaves_minus_laplacian() {
        let g = GridSpec::new(1, 6.0, 256).unwrap();
        let m = ScalarField::from_fn(g, |p| (-p[0] * p[0]).exp());
        let r = fp_residual(&m, &FluxField::zeros(g));
        for c in 10..246 {
            let x = g.center(c)[0];
            let exact = -(4.0 * x * x - 2.0) * (-x * x).exp();
            assert!((r.values[c] - exact).abs() < 5e-3, "cell {c}");
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let g = GridSpec::new(2, 3.0, 16).unwrap();
        let op = ConstraintOperator::new(&g);
        let m = gauss(g, 0.0, 1.0).scaled(1.3);
        let w = FluxField::from_fn(g, |a, p| (a as f64 + 0.5) * p[0].sin());
        let once = op.project(&m, &w).unwrap();
        let twice = op.project(&once.m, &once.w).unwrap();
        let d: f64 = once
            .m
            .values
            .iter()
            .zip(&twice.m.values)
            .map(|(a, b)| (a - b).abs())
            .chain(once.w.flat().iter().zip(twice.w.flat()).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        assert!(d < 1e-11, "{d}");
        assert!((grid::mass(&once.m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn feasible_input_is_unchanged() {
        let g = GridSpec::new(1, 4.0, 64).unwrap();
        let m = gauss(g, 0.5, 0.8);
        let w = grid::grad(&m);
        let p = project(&m, &w).unwrap();
        assert!(p.m.values.iter().zip(&m.values).all(|(a, b)| (a - b).abs() < 1e-11));
        assert!(p.w.flat().iter().zip(w.flat()).all(|(a, b)| (a - b).abs() < 1e-11));
    }

    /// Dense minimum-norm correction through the SVD pseudo-inverse.
    fn dense_projection(g: &GridSpec, m: &ScalarField, w: &FluxField) -> Vec<f64> {
        let nc = g.num_cells();
        let nf: usize = (0..g.dim()).map(|a| g.face_count(a)).sum();
        let cols = nc + nf;
        let mut a = DMatrix::<f64>::zeros(nc + 1, cols);
        let mut unit_m = ScalarField::zeros(*g);
        for j in 0..nc {
            unit_m.values[j] = 1.0;
            let r = fp_residual(&unit_m, &FluxField::zeros(*g));
            for i in 0..nc {
                a[(i, j)] = r.values[i];
            }
            a[(nc, j)] = g.cell_volume();
            unit_m.values[j] = 0.0;
        }
        let mut col = nc;
        for ax in 0..g.dim() {
            for f in 0..g.face_count(ax) {
                if g.face_cells(ax, f).is_some() {
                    let mut uw = FluxField::zeros(*g);
                    uw.faces[ax][f] = 1.0;
                    let r = fp_residual(&ScalarField::zeros(*g), &uw);
                    for i in 0..nc {
                        a[(i, col)] = r.values[i];
                    }
                }
                col += 1;
            }
        }
        let mut x = DVector::<f64>::from_vec(m.values.clone());
        x = DVector::from_iterator(cols, x.iter().cloned().chain(w.flat()));
        let mut b = DVector::<f64>::zeros(nc + 1);
        b[nc] = 1.0;
        let resid = &a * &x - b;
        let pinv = a.clone().pseudo_inverse(1e-10).unwrap();
        (x - pinv * resid).iter().cloned().collect()
    }

    #[test]
    fn projection_matches_dense_least_squares() {
        let g = GridSpec::new(1, 3.0, 32).unwrap();
        let m = ScalarField::from_fn(g, |p| (-(p[0] - 0.4).powi(2)).exp());
        let m = m.scaled(1.0 / grid::mass(&m));
        let p = project(&m, &FluxField::zeros(g)).unwrap();
        assert!(l2(&fp_residual(&p.m, &p.w).values) < 1e-10);
        let dense = dense_projection(&g, &m, &FluxField::zeros(g));
        let ours: Vec<f64> = p.m.values.iter().cloned().chain(p.w.flat()).collect();
        let d = ours.iter().zip(&dense).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-9, "{d}");

        let g2 = GridSpec::new(2, 1.0, 16).unwrap();
        let m2 = gauss(g2, 0.2, 0.5).scaled(0.9);
        let w2 = FluxField::from_fn(g2, |a, p| if a == 0 { p[1] } else { p[0] * p[0] });
        let p2 = project(&m2, &w2).unwrap();
        let dense2 = dense_projection(&g2, &m2, &w2);
        let ours2: Vec<f64> = p2.m.values.iter().cloned().chain(p2.w.flat()).collect();
        let d2 = ours2.iter().zip(&dense2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d2 < 1e-9, "{d2}");
    }

    #[test]
    fn random_pairs_are_feasible_and_distinct() {
        for g in [GridSpec::new(1, 6.0, 128).unwrap(), GridSpec::new(2, 4.0, 32).unwrap()] {
            let a = random_feasible(1, &g, 1.0);
            let b = random_feasible(2, &g, 1.0);
            for p in [&a, &b] {
                assert!((grid::mass(&p.m) - 1.0).abs() < 1e-12);
                let scale = l2(&p.m.values) + l2(&p.w.flat());
                assert!(p.residual_norm <= 1e-10 * scale, "{}", p.residual_norm);
                assert!(p.m.min() > 0.0);
            }
            let diff: f64 = a.m.values.iter().zip(&b.m.values).map(|(x, y)| (x - y).abs()).sum::<f64>()
                * g.cell_volume();
            assert!(diff > 0.1, "seeds gave near-identical densities");
        }
    }

    #[test]
    fn large_smoothness_leaves_only_the_gradient() {
        let g = GridSpec::new(2, 4.0, 32).unwrap();
        let rough = random_feasible(9, &g, 0.0);
        let smooth = random_feasible(9, &g, 1e6);
        let sol = |p: &FeasiblePair| {
            let gm = grid::grad(&p.m);
            l2(&p.w.add(&gm.scaled(-1.0)).flat()) / l2(&gm.flat())
        };
        assert!(sol(&smooth) < 1e-5 * sol(&rough));
    }

    #[test]
    fn clipping_repairs_mild_negativity() {
        let g = GridSpec::new(1, 4.0, 64).unwrap();
        let mut m = gauss(g, 0.0, 0.8);
        m.values[3] = -1e-6;
        let pair = FeasiblePair::from_parts(m.clone(), grid::grad(&m));
        let op = ConstraintOperator::new(&g);
        let out = op.clip_nonnegative(&pair).unwrap();
        assert!(out.m.min() >= 0.0);
        assert!((grid::mass(&out.m) - 1.0).abs() < 1e-12);
        assert!(out.residual_norm < 1e-10);
        let change: f64 = out
            .m
            .values
            .iter()
            .zip(&m.values)
            .map(|(a, b)| (a - b).powi(2))
            .chain(out.w.flat().iter().zip(pair.w.flat()).map(|(a, b)| (a - b).powi(2)))
            .sum::<f64>()
            .sqrt();
        assert!(change <= 1e-5, "{change}");

        let ok = FeasiblePair::from_parts(gauss(g, 0.0, 0.8), grid::grad(&gauss(g, 0.0, 0.8)));
        assert_eq!(op.clip_nonnegative(&ok).unwrap(), ok);

        let mut bad = gauss(g, 0.0, 0.8);
        bad.values[30] = -0.5;
        let bad = FeasiblePair::from_parts(bad.clone(), grid::grad(&bad));
        assert!(matches!(op.clip_nonnegative(&bad), Err(MfgError::SeverelyNegative(_))));
    }
}
