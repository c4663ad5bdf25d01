//! Value functions, ergodic constants and residual diagnostics.

use serde::{Deserialize, Serialize};

use crate::energy::{
    kinetic_cost, overlap, potential_energy, power_integral, HamiltonianParams, MfgParams, Pow, State,
};
use crate::error::{MfgError, Result};
use crate::grid::{self, FluxField, GridSpec, Point, ScalarField};
use crate::linalg::{bicgstab, SparseRows};
use crate::spectral::NeumannSpectrum;

/// Density floor (relative to the maximum) below which residuals are masked.
pub const RESIDUAL_MASK: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct ValuePair {
    /// Value function normalized to `min u = 0`.
    pub u: ScalarField,
    pub lambda: f64,
    /// Flat index of the minimum of `u` (smallest index on ties).
    pub argmin: usize,
    pub x_min: Point,
    pub steps: usize,
    /// Max-norm of the discrete steady residual at exit.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HjbConfig {
    pub tol: f64,
    pub max_steps: usize,
    pub dt0: f64,
    pub dt_max: f64,
    /// Second-order one-sided differences inside the upwind Hamiltonian.
    pub second_order: bool,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_steps: 4000,
            dt0: 0.05,
            dt_max: 1e4,
            second_order: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kappa: f64,
    pub delta0: f64,
    pub fit_range: (f64, f64),
    pub r2: f64,
}

/// Magnitude of a face vector: the normal component plus the transverse
/// component averaged from the four surrounding faces.
fn face_magnitude(grid: &GridSpec, faces: &[Vec<f64>], a: usize, f: usize) -> f64 {
    let wn = faces[a][f];
    if grid.dim() == 1 {
        return wn.abs();
    }
    let Some((lo, hi)) = grid.face_cells(a, f) else {
        return wn.abs();
    };
    let b = 1 - a;
    let mut t = 0.0;
    for c in [lo, hi] {
        let (l, h) = grid.cell_faces(c, b);
        t += faces[b][l] + faces[b][h];
    }
    let t = t / 4.0;
    (wn * wn + t * t).sqrt()
}

fn face_density(m: &ScalarField, a: usize, f: usize) -> Option<f64> {
    m.grid
        .face_cells(a, f)
        .map(|(lo, hi)| 0.5 * (m.values[lo] + m.values[hi]))
}

/// `∇u` from `w = -C_H γ m |∇u|^{γ-2} ∇u`, face by face.
pub fn grad_u_from_flux(m: &ScalarField, w: &FluxField, hp: &HamiltonianParams) -> Result<FluxField> {
    let g = m.grid;
    let mut out = FluxField::zeros(g);
    let c = hp.c_h * hp.gamma;
    let p = 1.0 / (hp.gamma - 1.0);
    for a in 0..g.dim() {
        for f in 0..g.face_count(a) {
            let Some(mf) = face_density(m, a, f) else { continue };
            let wn = w.faces[a][f];
            if wn == 0.0 {
                continue;
            }
            let mag = face_magnitude(&g, &w.faces, a, f);
            if mf <= 0.0 {
                let (lo, _) = g.face_cells(a, f).unwrap();
                return Err(MfgError::DegenerateCell(lo));
            }
            let gu = (mag / (c * mf)).powf(p);
            out.faces[a][f] = -gu * wn / mag;
        }
    }
    Ok(out)
}

/// `w = -C_H γ m |∇u|^{γ-2} ∇u` with face-averaged `m`.
pub fn recover_w_from_u(m: &ScalarField, u: &ScalarField, hp: &HamiltonianParams) -> FluxField {
    let gu = grid::grad(u);
    recover_w_from_grad(m, &gu, hp)
}

pub(crate) fn recover_w_from_grad(m: &ScalarField, gu: &FluxField, hp: &HamiltonianParams) -> FluxField {
    let g = m.grid;
    let mut out = FluxField::zeros(g);
    let c = hp.c_h * hp.gamma;
    for a in 0..g.dim() {
        for f in 0..g.face_count(a) {
            let Some(mf) = face_density(m, a, f) else { continue };
            let pn = gu.faces[a][f];
            if pn == 0.0 {
                continue;
            }
            let mag = face_magnitude(&g, &gu.faces, a, f);
            out.faces[a][f] = -c * mf * mag.powf(hp.gamma - 2.0) * pn;
        }
    }
    out
}

/// Right-hand side `F_i = V_i - α_i m_i^{γ'/N} - β m_i^{s-1} m_j^s`.
pub fn coupling_rhs(i: usize, state: &State, params: &MfgParams) -> ScalarField {
    let g = state.grid();
    let hp = &params.hamiltonian;
    let dim = g.dim();
    let alpha = params.coupling.alpha(i);
    let beta = params.coupling.beta;
    let v = params.potential(i);
    let s = hp.cross_power(dim);
    let pself = Pow::new(hp.gamma_conj() / dim as f64);
    let pa = Pow::new(s - 1.0);
    let pb = Pow::new(s);
    let mi = &state.m[i];
    let mj = &state.m[1 - i];
    let values = (0..g.num_cells())
        .map(|c| {
            let a = mi.values[c].max(0.0);
            let b = mj.values[c].max(0.0);
            let mut f = v.eval(g.center(c), dim) - alpha * pself.apply(a);
            if beta != 0.0 {
                f -= beta * pa.apply(a) * pb.apply(b);
            }
            f
        })
        .collect();
    ScalarField { grid: g, values }
}

/// `λ_i = kinetic_i + ∫V_i m_i - α_i∫m_i^{1+γ'/N} - β∫(m₁m₂)^s` for unit-mass states.
pub fn lambda_formula(i: usize, state: &State, params: &MfgParams) -> Result<f64> {
    let hp = &params.hamiltonian;
    let k = kinetic_cost(&state.m[i], &state.w[i], hp)?;
    let v = potential_energy(params.potential(i), &state.m[i]);
    let p = power_integral(&state.m[i], hp);
    let o = if params.coupling.beta != 0.0 {
        overlap(&state.m[0], &state.m[1], hp)
    } else {
        0.0
    };
    Ok(k + v - params.coupling.alpha(i) * p - params.coupling.beta * o)
}

/// Smooth (van Albada) choice between two second differences; a hard ENO
/// switch lets the pseudo-time iteration cycle between stencils.
fn eno(a: f64, b: f64) -> f64 {
    const EPS: f64 = 1e-8;
    (a * (b * b + EPS) + b * (a * a + EPS)) / (a * a + b * b + 2.0 * EPS)
}

/// Value of `u` at offset `k` along `axis` from `cell`, reflected at the walls.
fn along(grid: &GridSpec, u: &[f64], cell: usize, axis: usize, k: isize) -> (usize, f64) {
    let n = grid.cells() as isize;
    let ij = grid.cell_ij(cell);
    let mut p = ij[axis] as isize + k;
    if p < 0 {
        p = -p - 1;
    }
    if p >= n {
        p = 2 * n - 1 - p;
    }
    let mut q = ij;
    q[axis] = p as usize;
    let c = grid.cell_index(q);
    (c, u[c])
}

/// Godunov upwind `C_H |∇u|^γ` per cell, with an optional first-order Jacobian.
fn godunov_hamiltonian(
    grid: &GridSpec,
    u: &[f64],
    hp: &HamiltonianParams,
    second_order: bool,
    mut jac: Option<&mut SparseRows>,
) -> Vec<f64> {
    let h = grid.spacing();
    let dim = grid.dim();
    let mut out = vec![0.0; u.len()];
    for c in 0..u.len() {
        let mut sum = 0.0;
        let mut picks = [(0.0f64, 0isize); 2];
        for a in 0..dim {
            let v = |k: isize| along(grid, u, c, a, k).1;
            let (um2, um1, u0, up1, up2) = (v(-2), v(-1), v(0), v(1), v(2));
            let mut pm = (u0 - um1) / h;
            let mut pp = (up1 - u0) / h;
            if second_order {
                let d2m = (u0 - 2.0 * um1 + um2) / (h * h);
                let d2 = (up1 - 2.0 * u0 + um1) / (h * h);
                let d2p = (up2 - 2.0 * up1 + u0) / (h * h);
                pm += 0.5 * h * eno(d2m, d2);
                pp -= 0.5 * h * eno(d2, d2p);
            }
            let back = pm.max(0.0);
            let fwd = -pp.min(0.0);
            let (pa, side) = if back >= fwd {
                (back, if back > 0.0 { -1 } else { 0 })
            } else {
                (fwd, 1)
            };
            picks[a] = (pa, side);
            sum += pa * pa;
        }
        if sum == 0.0 {
            continue;
        }
        out[c] = hp.c_h * sum.powf(0.5 * hp.gamma);
        if let Some(j) = jac.as_mut() {
            let dh = hp.c_h * hp.gamma * sum.powf(0.5 * hp.gamma - 1.0);
            for (a, &(pa, side)) in picks.iter().enumerate().take(dim) {
                if side == 0 {
                    continue;
                }
                let ca = dh * pa / h;
                let (nb, _) = along(grid, u, c, a, side);
                j.add(c, c, ca);
                j.add(c, nb, -ca);
            }
        }
    }
    out
}

fn neumann_laplacian_rows(grid: &GridSpec, rows: &mut SparseRows, scale: f64) {
    let h2 = grid.spacing().powi(2);
    for c in 0..grid.num_cells() {
        for a in 0..grid.dim() {
            for k in [-1isize, 1] {
                let ij = grid.cell_ij(c);
                let p = ij[a] as isize + k;
                if p < 0 || p >= grid.cells() as isize {
                    continue;
                }
                let mut q = ij;
                q[a] = p as usize;
                let nbc = grid.cell_index(q);
                rows.add(c, c, scale / h2);
                rows.add(c, nbc, -scale / h2);
            }
        }
    }
}

fn steady_residual(
    grid: &GridSpec,
    u: &[f64],
    f: &[f64],
    hp: &HamiltonianParams,
    second_order: bool,
    jac: Option<&mut SparseRows>,
) -> (Vec<f64>, f64) {
    let ham = godunov_hamiltonian(grid, u, hp, second_order, jac);
    let mut lap = vec![0.0; u.len()];
    let gu = {
        let mut w: Vec<Vec<f64>> = (0..grid.dim()).map(|a| vec![0.0; grid.face_count(a)]).collect();
        grid::grad_into(grid, u, &mut w);
        w
    };
    grid::div_into(grid, &gu, &mut lap);
    let n = u.len() as f64;
    let lambda = f.iter().zip(&ham).zip(&lap).map(|((fi, hi), li)| fi - hi + li).sum::<f64>() / n;
    let r = (0..u.len()).map(|c| lap[c] - ham[c] + f[c] - lambda).collect();
    (r, lambda)
}

fn normalize_min(u: &mut [f64]) {
    let mn = u.iter().cloned().fold(f64::INFINITY, f64::min);
    u.iter_mut().for_each(|v| *v -= mn);
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Steady state of `∂_t u = Δu - C_H|∇u|^γ + F - λ(t)` with `λ(t)` the
/// spatial mean, reached by linearly implicit pseudo-time stepping.
pub fn solve_ergodic_hjb(f: &ScalarField, hp: &HamiltonianParams, cfg: &HjbConfig) -> Result<ValuePair> {
    solve_ergodic_hjb_from(f, hp, cfg, None)
}

/// As [`solve_ergodic_hjb`], warm-started from `u0`.
pub fn solve_ergodic_hjb_from(
    f: &ScalarField,
    hp: &HamiltonianParams,
    cfg: &HjbConfig,
    u0: Option<&ScalarField>,
) -> Result<ValuePair> {
    let grid = f.grid;
    if !f.is_finite() {
        return Err(MfgError::MarchingDiverged("right-hand side is not finite".into()));
    }
    let n = grid.num_cells();
    let spectrum = if grid.dim() == 2 { Some(NeumannSpectrum::new(&grid)) } else { None };
    let mut u = u0.map(|u| u.values.clone()).unwrap_or_else(|| vec![0.0; n]);
    normalize_min(&mut u);
    let mut dt = cfg.dt0;
    let mut jac = SparseRows::new(n);
    let (mut r, mut lambda) = steady_residual(&grid, &u, &f.values, hp, cfg.second_order, Some(&mut jac));
    let mut res = max_abs(&r);
    let res0 = res.max(1.0);
    for step in 0..cfg.max_steps {
        if res < cfg.tol {
            let uf = ScalarField { grid, values: u };
            let argmin = uf.argmin();
            return Ok(ValuePair {
                x_min: grid.center(argmin),
                u: uf,
                lambda,
                argmin,
                steps: step,
                residual: res,
            });
        }
        let mut op = jac.clone();
        neumann_laplacian_rows(&grid, &mut op, 1.0);
        for d in op.diag.iter_mut() {
            *d += 1.0 / dt;
        }
        let delta = match &spectrum {
            None => op.solve_tridiagonal(&r),
            Some(sp) => {
                let pre = |v: &[f64]| sp.solve_shifted(v, 1.0 / dt);
                bicgstab(&|x, y| op.apply(x, y), &pre, &r, vec![0.0; n], 1e-12, 400)?
            }
        };
        let mut un: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a + b).collect();
        normalize_min(&mut un);
        let mut jn = SparseRows::new(n);
        let (rn, ln) = steady_residual(&grid, &un, &f.values, hp, cfg.second_order, Some(&mut jn));
        let resn = max_abs(&rn);
        if !resn.is_finite() || resn > 1e12 * res0 {
            return Err(MfgError::MarchingDiverged(format!(
                "residual {resn:e} at step {step} (dt = {dt:e})"
            )));
        }
        if resn > 2.0 * res && dt > 1e-10 {
            dt *= 0.25;
            continue;
        }
        u = un;
        r = rn;
        lambda = ln;
        jac = jn;
        dt = if resn < res { (dt * 2.0).min(cfg.dt_max) } else { dt * 0.5 };
        res = resn;
        if dt < 1e-12 {
            return Err(MfgError::MarchingDiverged("pseudo-time step collapsed".into()));
        }
    }
    Err(MfgError::MarchingDiverged(format!(
        "no steady state after {} steps (residual {res:e})",
        cfg.max_steps
    )))
}

/// Max-norm of `-Δu + C_H|∇u|^γ + λ - F` with centered gradients, over
/// cells where `m > RESIDUAL_MASK · max m`.
pub fn hjb_residual_with(u: &ScalarField, lambda: f64, f: &ScalarField, m: &ScalarField, hp: &HamiltonianParams) -> f64 {
    let grid = u.grid;
    let h = grid.spacing();
    let lap = grid::laplacian(u);
    let cut = RESIDUAL_MASK * m.max();
    let mut worst = 0.0f64;
    for c in 0..grid.num_cells() {
        if m.values[c] <= cut {
            continue;
        }
        let mut g2 = 0.0;
        for a in 0..grid.dim() {
            let (_, l) = along(&grid, &u.values, c, a, -1);
            let (_, r) = along(&grid, &u.values, c, a, 1);
            g2 += ((r - l) / (2.0 * h)).powi(2);
        }
        let res = -lap.values[c] + hp.c_h * g2.powf(0.5 * hp.gamma) + lambda - f.values[c];
        worst = worst.max(res.abs());
    }
    worst
}

/// HJB residual of population `i` in a two-population state.
pub fn hjb_residual(u: &ScalarField, lambda: f64, i: usize, state: &State, params: &MfgParams) -> f64 {
    let f = coupling_rhs(i, state, params);
    hjb_residual_with(u, lambda, &f, &state.m[i], &params.hamiltonian)
}

/// Fits `log m ≈ c - κ |x - x_peak|^{δ₀}` on the tail of a single bump, over
/// cells between `1e-6` and `1e-2` of the peak to stay clear of the wall layer.
pub fn decay_fit(m: &ScalarField) -> Result<DecayFit> {
    let g = m.grid;
    let peak = m.argmax();
    let mut xp = g.center(peak);
    // sub-cell peak location by a parabola through the neighbours
    for a in 0..g.dim() {
        let (_, l) = along(&g, &m.values, peak, a, -1);
        let (_, r) = along(&g, &m.values, peak, a, 1);
        let c = m.values[peak];
        let den = l - 2.0 * c + r;
        if den < 0.0 {
            xp[a] += 0.5 * g.spacing() * (l - r) / den;
        }
    }
    let mx = m.max();
    let pts: Vec<(f64, f64)> = (0..g.num_cells())
        .filter(|&c| m.values[c] > 1e-6 * mx && m.values[c] < 1e-2 * mx)
        .map(|c| (g.dist(g.center(c), xp), m.values[c].ln()))
        .collect();
    if pts.len() < 10 {
        return Err(MfgError::InsufficientTail(pts.len()));
    }
    let r_lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let r_hi = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    let mut best: Option<DecayFit> = None;
    for k in 1..=200 {
        let d0 = k as f64 / 200.0;
        let xs: Vec<f64> = pts.iter().map(|p| p.0.powf(d0)).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (slope, _, r2) = linear_fit(&xs, &ys);
        let fit = DecayFit {
            kappa: -slope,
            delta0: d0,
            fit_range: (r_lo, r_hi),
            r2,
        };
        if best.is_none_or(|b| r2 > b.r2) {
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

/// Ordinary least squares `y = a x + b`; returns `(a, b, r²)`.
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{CouplingParams, PotentialSpec};

    fn hp2() -> HamiltonianParams {
        HamiltonianParams::new(2.0, 1.0).unwrap()
    }

    #[test]
    fn quadratic_gamma_inverts_linearly() {
        let g = GridSpec::new(1, 4.0, 64).unwrap();
        let hp = hp2();
        let m = ScalarField::from_fn(g, |p| (-p[0] * p[0]).exp());
        let w = FluxField::from_fn(g, |_, p| p[0].sin());
        let gu = grad_u_from_flux(&m, &w, &hp).unwrap();
        for f in 1..64 {
            let mf = face_density(&m, 0, f).unwrap();
            assert!((gu.faces[0][f] + w.faces[0][f] / (2.0 * mf)).abs() < 1e-12);
        }
        let zero = grad_u_from_flux(&m, &FluxField::zeros(g), &hp).unwrap();
        assert!(zero.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flux_round_trip() {
        for (g, gamma) in [(GridSpec::new(1, 3.0, 48).unwrap(), 1.6), (GridSpec::new(2, 2.0, 16).unwrap(), 2.0)] {
            let hp = HamiltonianParams::new(gamma, 0.7).unwrap();
            let m = ScalarField::from_fn(g, |p| 0.1 + (-p[0] * p[0] - p[1] * p[1]).exp());
            let u = ScalarField::from_fn(g, |p| p[0] * p[0] + 0.3 * p[1] + 0.2 * (p[0] * p[1]).sin());
            let w = recover_w_from_u(&m, &u, &hp);
            let gu = grad_u_from_flux(&m, &w, &hp).unwrap();
            let w2 = recover_w_from_grad(&m, &gu, &hp);
            for (a, b) in w.flat().iter().zip(w2.flat()) {
                assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn empty_face_with_flux_is_degenerate() {
        let g = GridSpec::new(1, 3.0, 32).unwrap();
        let m = ScalarField::zeros(g);
        let mut w = FluxField::zeros(g);
        w.faces[0][5] = 1.0;
        assert!(matches!(grad_u_from_flux(&m, &w, &hp2()), Err(MfgError::DegenerateCell(_))));
    }

    #[test]
    fn constant_source_gives_flat_value() {
        let g = GridSpec::new(1, 3.0, 64).unwrap();
        let f = ScalarField::from_fn(g, |_| 0.37);
        let vp = solve_ergodic_hjb(&f, &hp2(), &HjbConfig::default()).unwrap();
        assert!((vp.lambda - 0.37).abs() < 1e-12);
        assert!(vp.u.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn harmonic_value_function() {
        // -u'' + C_H u'^2 + λ = x² has u = x²/(2√C_H), λ = 1/√C_H
        let c_h: f64 = 1.7;
        let hp = HamiltonianParams::new(2.0, c_h).unwrap();
        let g = GridSpec::new(1, 5.0, 400).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0] * p[0]);
        let vp = solve_ergodic_hjb(&f, &hp, &HjbConfig::default()).unwrap();
        assert!((vp.lambda - 1.0 / c_h.sqrt()).abs() < 1e-3, "λ = {}", vp.lambda);
        let m = ScalarField::from_fn(g, |p| (-c_h.sqrt() * p[0] * p[0]).exp());
        assert!(hjb_residual_with(&vp.u, vp.lambda, &f, &m, &hp) < 1e-2);
        for c in 150..250 {
            let x = g.center(c)[0];
            let exact = x * x / (2.0 * c_h.sqrt()) - g.center(vp.argmin)[0].powi(2) / (2.0 * c_h.sqrt());
            assert!((vp.u.values[c] - exact).abs() < 1e-3, "x = {x}");
        }
    }

    #[test]
    fn marching_in_two_dimensions() {
        let hp = hp2();
        let g = GridSpec::new(2, 3.0, 32).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0] * p[0] + p[1] * p[1]);
        let vp = solve_ergodic_hjb(&f, &hp, &HjbConfig::default()).unwrap();
        // separable: λ = 2/√C_H
        assert!((vp.lambda - 2.0).abs() < 2e-2, "λ = {}", vp.lambda);
    }

    #[test]
    fn manufactured_residual_is_second_order() {
        // u = cos(x) on [-π, π] has zero normal derivative at the walls
        let hp = hp2();
        let res = |n: usize| {
            let g = GridSpec::new(1, std::f64::consts::PI, n).unwrap();
            let u = ScalarField::from_fn(g, |p| p[0].cos());
            let lambda = 0.4;
            let f = ScalarField::from_fn(g, |p| p[0].cos() + p[0].sin().powi(2) + lambda);
            let m = ScalarField::from_fn(g, |p| (-p[0] * p[0]).exp());
            hjb_residual_with(&u, lambda, &f, &m, &hp)
        };
        let (a, b) = (res(64), res(128));
        assert!(a < 1e-2);
        assert!((a / b).log2() > 1.8, "{a} {b}");
    }

    #[test]
    fn residual_is_affine_in_lambda() {
        let hp = hp2();
        let g = GridSpec::new(1, 5.0, 256).unwrap();
        let f = ScalarField::from_fn(g, |p| p[0] * p[0]);
        let vp = solve_ergodic_hjb(&f, &hp, &HjbConfig::default()).unwrap();
        let m = ScalarField::from_fn(g, |p| (-p[0] * p[0]).exp());
        let r0 = hjb_residual_with(&vp.u, vp.lambda, &f, &m, &hp);
        let r1 = hjb_residual_with(&vp.u, vp.lambda + 0.1, &f, &m, &hp);
        assert!((r1 - 0.1).abs() < r0 + 1e-9);
    }

    #[test]
    fn lambda_formula_decouples_and_is_symmetric() {
        let g = GridSpec::new(1, 4.0, 128).unwrap();
        let m = ScalarField::from_fn(g, |p| (-p[0] * p[0]).exp());
        let m = m.scaled(1.0 / grid::mass(&m));
        let s = State {
            m: [m.clone(), m.clone()],
            w: [grid::grad(&m), grid::grad(&m)],
        };
        let params = MfgParams {
            hamiltonian: hp2(),
            coupling: CouplingParams { alpha1: 1.0, alpha2: 1.0, beta: 0.5 },
            potential1: PotentialSpec::single([0.0, 0.0], 2.0, 1.0),
            potential2: PotentialSpec::single([0.0, 0.0], 2.0, 1.0),
        };
        assert_eq!(lambda_formula(0, &s, &params).unwrap(), lambda_formula(1, &s, &params).unwrap());
        let decoupled = params.with_coupling(CouplingParams { beta: 0.0, ..params.coupling });
        let single = crate::energy::kinetic_cost(&m, &s.w[0], &hp2()).unwrap()
            + potential_energy(&decoupled.potential1, &m)
            - power_integral(&m, &hp2());
        assert!((lambda_formula(0, &s, &decoupled).unwrap() - single).abs() < 1e-14);
    }

    #[test]
    fn decay_fit_on_exponential_and_gaussian() {
        let g = GridSpec::new(1, 16.0, 1024).unwrap();
        let e = ScalarField::from_fn(g, |p| (-2.0 * p[0].abs()).exp());
        let fit = decay_fit(&e).unwrap();
        assert!((fit.kappa - 2.0).abs() < 1e-2, "{fit:?}");
        assert!((fit.delta0 - 1.0).abs() < 1e-9);
        assert!(fit.r2 > 0.999);
        let gs = ScalarField::from_fn(g, |p| (-p[0] * p[0]).exp());
        let gf = decay_fit(&gs).unwrap();
        assert_eq!(gf.delta0, 1.0);
        assert!(gf.r2 < fit.r2);
        let narrow = ScalarField::from_fn(g, |p| if p[0].abs() < 0.1 { 1.0 } else { 0.0 });
        assert!(matches!(decay_fit(&narrow), Err(MfgError::InsufficientTail(_))));
    }
}
