//! Two-population minimizers, ray energies and existence classification.
//!
//! `descend` runs L-BFGS in the coordinates of [`crate::param`], where every
//! iterate is exactly feasible. `fictitious_play` is an independent solver
//! that alternates value-function solves with stationary Fokker–Planck
//! updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{coupling_rhs, lambda_formula, recover_w_from_grad, solve_ergodic_hjb_from, HjbConfig};
use crate::energy::{
    kinetic_raw, total_energy, CouplingParams, EnergyBreakdown, MfgParams, PotentialForm, PotentialSpec, Pow,
    State,
};
use crate::error::{MfgError, Result};
use crate::feasible::{fp_residual, project_flux, resample_pair, FeasiblePair};
use crate::grid::{self, FluxField, GridSpec, Point, ScalarField};
use crate::linalg::{bicgstab, SparseRows};
use crate::optim::{minimize, LbfgsOptions, Objective};
use crate::param::Codec;
use crate::reference::{rescale_reference_on, ReferenceSolution};
use crate::spectral::NeumannSpectrum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub step0: f64,
    pub backtrack: f64,
    pub tol_grad: f64,
    pub tol_energy: f64,
    pub max_iter: usize,
    /// Way-points in `(α₁, α₂, β)`; when non-empty the last one must be the target.
    pub continuation: Vec<CouplingParams>,
    pub seed: u64,
    /// Number of multi-start seeds.
    pub starts: usize,
    /// Energies below this abort with `EnergyDiverging`.
    pub energy_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step0: 1e-2,
            backtrack: 0.5,
            tol_grad: 1e-9,
            tol_energy: 1e-13,
            max_iter: 20_000,
            continuation: Vec::new(),
            seed: 0,
            starts: 3,
            energy_floor: -1e3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MfgError::Validation(m.to_string()));
        if !(self.tol_grad > 0.0 && self.tol_energy > 0.0) {
            return bad("solver tolerances must be positive");
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return bad("backtrack must lie in (0, 1)");
        }
        if !(self.step0 > 0.0) || self.max_iter == 0 || self.starts == 0 {
            return bad("step0, max_iter and starts must be positive");
        }
        Ok(())
    }

    fn lbfgs(&self) -> LbfgsOptions {
        LbfgsOptions {
            max_iter: self.max_iter,
            tol_grad: self.tol_grad,
            tol_energy: self.tol_energy,
            step0: self.step0,
            backtrack: self.backtrack,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Max-norm of `-Δm_i + div w_i`.
    pub fp: [f64; 2],
    pub mass_error: [f64; 2],
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizerResult {
    pub state: [FeasiblePair; 2],
    pub breakdown: EnergyBreakdown,
    /// `ε_i = kinetic_i^{-1/γ'}`.
    pub eps: [f64; 2],
    pub lambda: [f64; 2],
    pub x_conc: [Point; 2],
    pub converged: bool,
    pub iterations: usize,
    pub residuals: Residuals,
    /// Total energy after every accepted step.
    pub history: Vec<f64>,
}

impl MinimizerResult {
    /// Recomputes every derived quantity from the state.
    pub fn evaluate(
        params: &MfgParams,
        state: [FeasiblePair; 2],
        converged: bool,
        iterations: usize,
        grad_norm: f64,
        history: Vec<f64>,
    ) -> Result<Self> {
        let s = State {
            m: [state[0].m.clone(), state[1].m.clone()],
            w: [state[0].w.clone(), state[1].w.clone()],
        };
        let breakdown = total_energy(&s, params)?;
        let gc = params.hamiltonian.gamma_conj();
        let eps = [0, 1].map(|i| breakdown.kinetic(i).powf(-1.0 / gc));
        let lambda = [lambda_formula(0, &s, params)?, lambda_formula(1, &s, params)?];
        let g = s.grid();
        let x_conc = [0, 1].map(|i| g.center(s.m[i].argmax()));
        let fp = [0, 1].map(|i| {
            fp_residual(&state[i].m, &state[i].w)
                .values
                .iter()
                .fold(0.0f64, |a, v| a.max(v.abs()))
        });
        let mass_error = [0, 1].map(|i| grid::mass(&state[i].m) - 1.0);
        Ok(Self {
            state,
            breakdown,
            eps,
            lambda,
            x_conc,
            converged,
            iterations,
            residuals: Residuals { fp, mass_error, grad_norm },
            history,
        })
    }

    pub fn energy(&self) -> f64 {
        self.breakdown.total
    }

    pub fn to_state(&self) -> State {
        State {
            m: [self.state[0].m.clone(), self.state[1].m.clone()],
            w: [self.state[0].w.clone(), self.state[1].w.clone()],
        }
    }
}

struct PairEnergy<'a> {
    codecs: [Codec; 2],
    params: &'a MfgParams,
    v: [Vec<f64>; 2],
    floor: f64,
    m: [Vec<f64>; 2],
    w: [Vec<Vec<f64>>; 2],
    gm: [Vec<f64>; 2],
    gw: [Vec<Vec<f64>>; 2],
}

fn second_moment_width(m: &ScalarField) -> f64 {
    let g = m.grid;
    let hv = g.cell_volume();
    let total = grid::mass(m);
    let mut c = [0.0; 2];
    for k in 0..g.dim() {
        c[k] = hv * (0..g.num_cells()).map(|i| g.center(i)[k] * m.values[i]).sum::<f64>() / total;
    }
    let var = hv * (0..g.num_cells()).map(|i| g.dist(g.center(i), c).powi(2) * m.values[i]).sum::<f64>() / total;
    var.sqrt().max(4.0 * g.spacing())
}

impl<'a> PairEnergy<'a> {
    fn new(params: &'a MfgParams, init: &[FeasiblePair; 2], floor: f64) -> Self {
        let g = init[0].grid();
        let codecs = [0, 1].map(|i| Codec::new(&g, second_moment_width(&init[i].m)));
        let faces: Vec<Vec<f64>> = (0..g.dim()).map(|a| vec![0.0; g.face_count(a)]).collect();
        let n = g.num_cells();
        Self {
            codecs,
            params,
            v: [0, 1].map(|i| params.potential(i).sample(&g).values),
            floor,
            m: [vec![0.0; n], vec![0.0; n]],
            w: [faces.clone(), faces.clone()],
            gm: [vec![0.0; n], vec![0.0; n]],
            gw: [faces.clone(), faces],
        }
    }

    fn split(&self) -> usize {
        self.codecs[0].len()
    }

    fn encode(&self, init: &[FeasiblePair; 2]) -> Vec<f64> {
        let mut x = self.codecs[0].encode(&init[0].m);
        x.extend(self.codecs[1].encode(&init[1].m));
        x
    }

    fn decode(&self, x: &[f64]) -> [FeasiblePair; 2] {
        let k = self.split();
        let parts = [&x[..k], &x[k..]];
        [0, 1].map(|i| {
            let (m, w) = self.codecs[i].decode_fields(parts[i]);
            FeasiblePair::from_parts(m, w)
        })
    }
}

impl Objective for PairEnergy<'_> {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let k = self.split();
        let g = self.codecs[0].grid;
        let hv = g.cell_volume();
        let dim = g.dim();
        let hp = &self.params.hamiltonian;
        let c = &self.params.coupling;
        let q = hp.gamma_conj() / dim as f64;
        let s = hp.cross_power(dim);
        let (pq, ps, ps1) = (Pow::new(q), Pow::new(s), Pow::new(s - 1.0));
        let cf = hp.coupling_factor(dim);
        let (x1, x2) = x.split_at(k);
        let sn = [
            self.codecs[0].decode(x1, &mut self.m[0], &mut self.w[0]),
            self.codecs[1].decode(x2, &mut self.m[1], &mut self.w[1]),
        ];
        let mut e = 0.0;
        for i in 0..2 {
            self.gm[i].iter_mut().for_each(|v| *v = 0.0);
            self.gw[i].iter_mut().for_each(|f| f.iter_mut().for_each(|v| *v = 0.0));
            e += kinetic_raw(&g, &self.m[i], &self.w[i], hp, Some((&mut self.gm[i], &mut self.gw[i])))?;
            let a = c.alpha(i);
            let (mi, vi, gmi) = (&self.m[i], &self.v[i], &mut self.gm[i]);
            for j in 0..mi.len() {
                let mq = pq.apply(mi[j]);
                e += hv * (vi[j] * mi[j] - cf * a * mq * mi[j]);
                gmi[j] += hv * (vi[j] - a * mq);
            }
        }
        if c.beta != 0.0 {
            let mut o = 0.0;
            for j in 0..self.m[0].len() {
                let (a, b) = (self.m[0][j], self.m[1][j]);
                let (sa, sb) = (ps.apply(a), ps.apply(b));
                o += sa * sb;
                self.gm[0][j] -= hv * c.beta * ps1.apply(a) * sb;
                self.gm[1][j] -= hv * c.beta * sa * ps1.apply(b);
            }
            e -= 2.0 * c.beta * cf * hv * o;
        }
        let (g1, g2) = grad.split_at_mut(k);
        let [gm0, gm1] = &mut self.gm;
        let [gw0, gw1] = &mut self.gw;
        self.codecs[0].pullback(x1, sn[0], &self.m[0], gm0, gw0, g1);
        self.codecs[1].pullback(x2, sn[1], &self.m[1], gm1, gw1, g2);
        Ok(e)
    }

    fn precondition(&self, g: &[f64]) -> Vec<f64> {
        let k = self.split();
        let mut out = vec![0.0; g.len()];
        let (o1, o2) = out.split_at_mut(k);
        self.codecs[0].precondition(&g[..k], o1);
        self.codecs[1].precondition(&g[k..], o2);
        out
    }

    fn grad_norm(&self, g: &[f64]) -> f64 {
        let hv = self.codecs[0].grid.cell_volume();
        (g.iter().map(|v| v * v).sum::<f64>() / hv).sqrt()
    }

    fn accept(&mut self, _x: &[f64], f: f64) -> Result<()> {
        if f < self.floor {
            return Err(MfgError::EnergyDiverging { energy: f, floor: self.floor });
        }
        Ok(())
    }

    fn renormalize(&mut self, x: &mut [f64]) -> bool {
        let k = self.split();
        let (x1, x2) = x.split_at_mut(k);
        let a = self.codecs[0].renormalize(x1);
        let b = self.codecs[1].renormalize(x2);
        a || b
    }
}

/// Minimizes the total energy from a feasible initial pair.
///
/// Non-convergence within `max_iter` is reported through `converged = false`
/// with the best iterate.
pub fn descend(params: &MfgParams, init: &[FeasiblePair; 2], cfg: &SolverConfig) -> Result<MinimizerResult> {
    cfg.validate()?;
    let g = init[0].grid();
    if init[1].grid() != g {
        return Err(MfgError::ShapeMismatch("populations live on different grids".into()));
    }
    let mut obj = PairEnergy::new(params, init, cfg.energy_floor);
    let x0 = obj.encode(init);
    let rep = minimize(&mut obj, x0, &cfg.lbfgs())?;
    let state = obj.decode(&rep.x);
    MinimizerResult::evaluate(params, state, rep.converged, rep.iterations, rep.grad_norm, rep.history)
}

/// Points where a potential attains its minimum value: well centers for
/// wells, the origin for the zero potential.
pub fn potential_minima(v: &PotentialSpec) -> Vec<Point> {
    match v.form {
        PotentialForm::Zero => vec![[0.0, 0.0]],
        _ => v.wells.iter().map(|w| w.point()).collect(),
    }
}

/// Rescaled reference bumps centered at randomly chosen wells.
pub fn initial_pair(
    params: &MfgParams,
    reference: &ReferenceSolution,
    grid: &GridSpec,
    seed: u64,
) -> Result<[FeasiblePair; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fwhm = reference.half_height_width();
    let t_min = fwhm / (0.5 * grid.half_width());
    let t_max = fwhm / (10.0 * grid.spacing());
    let mut out = Vec::with_capacity(2);
    for i in 0..2 {
        let minima = potential_minima(params.potential(i));
        let c = minima[rng.gen_range(0..minima.len())];
        let t = (t_min * 2.0 * rng.gen_range(0.8..1.25)).min(t_max);
        out.push(rescale_reference_on(reference, t, c, grid)?);
    }
    let b = out.pop().unwrap();
    let a = out.pop().unwrap();
    Ok([a, b])
}

/// Best of `cfg.starts` descents from seeds `cfg.seed, cfg.seed + 1, …`.
pub fn multistart_descend(
    params: &MfgParams,
    reference: &ReferenceSolution,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<MinimizerResult> {
    let runs: Vec<Result<MinimizerResult>> = (0..cfg.starts as u64)
        .into_par_iter()
        .map(|k| {
            let init = initial_pair(params, reference, grid, cfg.seed + k)?;
            descend(params, &init, cfg)
        })
        .collect();
    let mut best: Option<MinimizerResult> = None;
    let mut first_err = None;
    for r in runs {
        match r {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.energy() < b.energy()) {
                    best = Some(r);
                }
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap())
}

/// Equally spaced way-points from zero coupling to `target`, ending at it.
pub fn linear_schedule(target: &CouplingParams, steps: usize) -> Vec<CouplingParams> {
    let zero = CouplingParams { alpha1: 0.0, alpha2: 0.0, beta: 0.0 };
    (1..=steps.max(1))
        .map(|k| zero.lerp(target, k as f64 / steps.max(1) as f64))
        .collect()
}

/// Warm-started chain of descents along `cfg.continuation` (or just the
/// target when the schedule is empty); the first way-point uses multi-start.
pub fn continuation_solve(
    target: &MfgParams,
    reference: &ReferenceSolution,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Result<MinimizerResult> {
    let schedule = if cfg.continuation.is_empty() {
        vec![target.coupling]
    } else {
        cfg.continuation.clone()
    };
    if schedule.last() != Some(&target.coupling) {
        return Err(MfgError::InvalidParameter(
            "continuation schedule must end at the target couplings".into(),
        ));
    }
    let wrap = |index: usize| move |e: MfgError| MfgError::Continuation { index, source: Box::new(e) };
    let p0 = target.with_coupling(schedule[0]);
    let mut cur = multistart_descend(&p0, reference, grid, cfg).map_err(wrap(0))?;
    for (k, c) in schedule.iter().enumerate().skip(1) {
        let p = target.with_coupling(*c);
        cur = descend(&p, &cur.state, cfg).map_err(wrap(k))?;
    }
    Ok(cur)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FictitiousPlayConfig {
    /// Damping `τ` in `m ← (1-τ) m + τ m_new`.
    pub damping: f64,
    /// Stop when the L¹ update of both densities is below this.
    pub tol: f64,
    pub max_iter: usize,
    pub hjb: HjbConfig,
}

impl Default for FictitiousPlayConfig {
    fn default() -> Self {
        Self {
            damping: 0.3,
            tol: 1e-10,
            max_iter: 3000,
            hjb: HjbConfig::default(),
        }
    }
}

/// `z / (e^z - 1)`.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Drift `-C_H γ |∇u|^{γ-2} ∇u` on the faces.
fn drift(u: &ScalarField, hp: &crate::energy::HamiltonianParams) -> FluxField {
    let one = ScalarField { grid: u.grid, values: vec![1.0; u.values.len()] };
    recover_w_from_grad(&one, &grid::grad(u), hp)
}

/// Unit-mass stationary density of `Δm - div(v m) = 0` with the
/// Scharfetter–Gummel flux `J = (B(-vh) m_lo - B(vh) m_hi)/h`.
fn stationary_density(v: &FluxField, start: &ScalarField) -> Result<ScalarField> {
    let g = v.grid;
    let h = g.spacing();
    if g.dim() == 1 {
        // zero flux on every face: m_hi / m_lo = e^{v h}
        let n = g.cells();
        let mut logm = vec![0.0; n];
        for i in 1..n {
            logm[i] = logm[i - 1] + v.faces[0][i] * h;
        }
        let mx = logm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let m = ScalarField { grid: g, values: logm.iter().map(|l| (l - mx).exp()).collect() };
        let total = grid::mass(&m);
        return Ok(m.scaled(1.0 / total));
    }
    let n = g.num_cells();
    let mut d = SparseRows::new(n);
    let h2 = h * h;
    for a in 0..g.dim() {
        for f in 0..g.face_count(a) {
            let Some((lo, hi)) = g.face_cells(a, f) else { continue };
            let z = v.faces[a][f] * h;
            let (bl, bh) = (bernoulli(-z), bernoulli(z));
            d.add(lo, lo, bl / h2);
            d.add(lo, hi, -bh / h2);
            d.add(hi, lo, -bl / h2);
            d.add(hi, hi, bh / h2);
        }
    }
    let sp = NeumannSpectrum::new(&g);
    let mut m = start.values.clone();
    let dt = 10.0;
    for _ in 0..200 {
        let rhs: Vec<f64> = m.iter().map(|x| x / dt).collect();
        let op = |x: &[f64], y: &mut [f64]| {
            d.apply(x, y);
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi += xi / dt;
            }
        };
        let pre = |r: &[f64]| sp.solve_shifted(r, 1.0 / dt);
        let mn = bicgstab(&op, &pre, &rhs, m.clone(), 1e-13, 2000)?;
        let change: f64 = mn.iter().zip(&m).map(|(a, b)| (a - b).abs()).sum::<f64>() * g.cell_volume();
        m = mn;
        if change < 1e-13 {
            break;
        }
    }
    let m = ScalarField { grid: g, values: m.iter().map(|x| x.max(0.0)).collect() };
    let total = grid::mass(&m);
    Ok(m.scaled(1.0 / total))
}

/// Scharfetter–Gummel flux plus `grad m`: the flux `w` with `w - grad m = J`.
fn fp_flux(m: &ScalarField, v: &FluxField) -> FluxField {
    let g = m.grid;
    let h = g.spacing();
    let mut w = FluxField::zeros(g);
    for a in 0..g.dim() {
        for f in 0..g.face_count(a) {
            let Some((lo, hi)) = g.face_cells(a, f) else { continue };
            let z = v.faces[a][f] * h;
            let (ml, mh) = (m.values[lo], m.values[hi]);
            let j = (bernoulli(-z) * ml - bernoulli(z) * mh) / h;
            w.faces[a][f] = j + (mh - ml) / h;
        }
    }
    w
}

/// Damped best-response iteration on the coupled system.
pub fn fictitious_play(
    params: &MfgParams,
    init: &[FeasiblePair; 2],
    cfg: &FictitiousPlayConfig,
) -> Result<MinimizerResult> {
    let hp = &params.hamiltonian;
    let g = init[0].grid();
    let mut m = [init[0].m.clone(), init[1].m.clone()];
    let mut u: [Option<ScalarField>; 2] = [None, None];
    let mut drifts = [FluxField::zeros(g), FluxField::zeros(g)];
    let mut update = f64::INFINITY;
    let mut iterations = 0;
    let mut history = Vec::new();
    while iterations < cfg.max_iter {
        iterations += 1;
        let frozen = State {
            m: m.clone(),
            w: [FluxField::zeros(g), FluxField::zeros(g)],
        };
        let mut new_m = Vec::with_capacity(2);
        for i in 0..2 {
            let f = coupling_rhs(i, &frozen, params);
            let vp = solve_ergodic_hjb_from(&f, hp, &cfg.hjb, u[i].as_ref())?;
            drifts[i] = drift(&vp.u, hp);
            new_m.push(stationary_density(&drifts[i], &m[i])?);
            u[i] = Some(vp.u);
        }
        update = 0.0;
        for i in 0..2 {
            let hv = g.cell_volume();
            update += hv * new_m[i].values.iter().zip(&m[i].values).map(|(a, b)| (a - b).abs()).sum::<f64>();
            for (mi, ni) in m[i].values.iter_mut().zip(&new_m[i].values) {
                *mi = (1.0 - cfg.damping) * *mi + cfg.damping * ni;
            }
        }
        if !update.is_finite() {
            break;
        }
        history.push(update);
        if update < cfg.tol {
            let state = [0, 1].map(|i| project_flux(m[i].clone(), &fp_flux(&m[i], &drifts[i])));
            return MinimizerResult::evaluate(params, state, true, iterations, update, history);
        }
    }
    Err(MfgError::FixedPointStalled { iterations, update })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RayVariant {
    /// Both populations concentrate at their own centers.
    Plain,
    /// Centers pushed apart by `±ι (ln t / t) ν`.
    LogShifted { iota: f64, nu: Point },
    /// Only `population` concentrates; the other stays at scale `t_other`.
    Single { population: usize, t_other: f64 },
}

/// Total energy along a scaling ray of rescaled reference pairs. Scales the
/// grid cannot resolve are skipped.
pub fn ray_energy(
    params: &MfgParams,
    reference: &ReferenceSolution,
    grid: &GridSpec,
    t_list: &[f64],
    variant: RayVariant,
    x0_pair: [Point; 2],
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &t in t_list {
        let mut scales = [t, t];
        let mut centers = x0_pair;
        match variant {
            RayVariant::Plain => {}
            RayVariant::LogShifted { iota, nu } => {
                let shift = iota * t.ln() / t;
                for k in 0..2 {
                    centers[0][k] += shift * nu[k];
                    centers[1][k] -= shift * nu[k];
                }
            }
            RayVariant::Single { population, t_other } => scales[1 - population] = t_other,
        }
        let pair = (
            rescale_reference_on(reference, scales[0], centers[0], grid),
            rescale_reference_on(reference, scales[1], centers[1], grid),
        );
        let (Ok(a), Ok(b)) = pair else { continue };
        let s = State { m: [a.m, b.m], w: [a.w, b.w] };
        if let Ok(e) = total_energy(&s, params) {
            out.push((t, e.total));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayEvidence {
    pub ray: String,
    pub points: Vec<(f64, f64)>,
    /// Least-squares `c` in `E(t) ≈ c t^{γ'} + d` over the largest scales.
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExistenceVerdict {
    Exists(Box<MinimizerResult>),
    UnboundedBelow(RayEvidence),
    /// ε shrinks with the mesh: the infimum is approached by concentration.
    BoundaryNoMinimizer { eps: Vec<f64> },
    Undetermined { reason: String },
}

impl ExistenceVerdict {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Exists(_) => "Exists",
            Self::UnboundedBelow(_) => "UnboundedBelow",
            Self::BoundaryNoMinimizer { .. } => "BoundaryNoMinimizer",
            Self::Undetermined { .. } => "Undetermined",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ClassifyConfig {
    pub solver: SolverConfig,
    /// Rays with `c · M* <` minus this count as diverging.
    pub ray_tol: f64,
    /// Way-points used when the solver schedule is empty.
    pub schedule_steps: usize,
    /// Accepted relative change of ε under mesh halving.
    pub eps_stability: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            ray_tol: 0.01,
            schedule_steps: 3,
            eps_stability: 0.15,
        }
    }
}

/// Fitted `c` in `E ≈ c t^{p} + d` over the last `k` points.
pub fn leading_coefficient(points: &[(f64, f64)], p: f64, k: usize) -> f64 {
    let tail = &points[points.len().saturating_sub(k)..];
    let x: Vec<f64> = tail.iter().map(|(t, _)| t.powf(p)).collect();
    let y: Vec<f64> = tail.iter().map(|(_, e)| *e).collect();
    crate::dual::linear_fit(&x, &y).0
}

/// A common minimum of both potentials if there is one, else the first minimum of `V₁`.
fn common_point(params: &MfgParams, dim: usize) -> Point {
    let a = potential_minima(&params.potential1);
    let b = potential_minima(&params.potential2);
    for p in &a {
        if b.iter().any(|q| (0..dim).all(|k| (p[k] - q[k]).abs() < 1e-12)) {
            return *p;
        }
    }
    a[0]
}

fn descent_divergence() -> ExistenceVerdict {
    ExistenceVerdict::UnboundedBelow(RayEvidence {
        ray: "descent".into(),
        points: Vec::new(),
        coefficient: f64::NEG_INFINITY,
    })
}

/// Ray test first, then continuation on the grid and its refinement.
pub fn classify_existence(
    params: &MfgParams,
    reference: &ReferenceSolution,
    grid: &GridSpec,
    cfg: &ClassifyConfig,
) -> ExistenceVerdict {
    let gc = params.hamiltonian.gamma_conj();
    let fwhm = reference.half_height_width();
    let t_max = fwhm / (8.5 * grid.spacing());
    let t_min = (fwhm / grid.half_width()).max(t_max / 8.0);
    let t_list: Vec<f64> = (0..8).map(|k| t_min * (t_max / t_min).powf(k as f64 / 7.0)).collect();
    let own = [
        potential_minima(&params.potential1)[0],
        potential_minima(&params.potential2)[0],
    ];
    let c = common_point(params, grid.dim());
    let rays = [
        ("single-1", RayVariant::Single { population: 0, t_other: t_min }, own),
        ("single-2", RayVariant::Single { population: 1, t_other: t_min }, own),
        ("symmetric", RayVariant::Plain, [c, c]),
    ];
    for (name, variant, x0) in rays {
        let pts = ray_energy(params, reference, grid, &t_list, variant, x0);
        if pts.len() < 4 {
            continue;
        }
        let coef = leading_coefficient(&pts, gc, 4);
        let falling = pts.windows(2).rev().take(3).all(|w| w[1].1 < w[0].1);
        let below = pts.iter().any(|p| p.1 < cfg.solver.energy_floor);
        if below || (coef * reference.m_star < -cfg.ray_tol && falling) {
            return ExistenceVerdict::UnboundedBelow(RayEvidence {
                ray: name.to_string(),
                points: pts,
                coefficient: coef,
            });
        }
    }
    let mut solver = cfg.solver.clone();
    if solver.continuation.is_empty() {
        solver.continuation = linear_schedule(&params.coupling, cfg.schedule_steps);
    }
    let fine = grid.refined(2);
    let coarse = continuation_solve(params, reference, grid, &solver);
    // The fine solve starts from the coarse minimizer so both follow one branch.
    let finer = match &coarse {
        Ok(c) => {
            let init = [0, 1].map(|i| resample_pair(&c.state[i], &fine));
            descend(params, &init, &solver)
        }
        Err(_) => Err(MfgError::InvalidParameter("coarse solve failed".into())),
    };
    let (coarse, finer) = match (coarse, finer) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            return match e {
                MfgError::Continuation { ref source, .. } if matches!(**source, MfgError::EnergyDiverging { .. }) => {
                    descent_divergence()
                }
                MfgError::EnergyDiverging { .. } => descent_divergence(),
                e => ExistenceVerdict::Undetermined { reason: e.to_string() },
            }
        }
    };
    let eps = |r: &MinimizerResult| r.eps[0].min(r.eps[1]);
    let (e1, e2) = (eps(&coarse), eps(&finer));
    let record = vec![e1, e2];
    let h2 = fine.spacing();
    if e2 < 3.0 * h2 || e2 < (1.0 - 2.0 * cfg.eps_stability) * e1 {
        return ExistenceVerdict::BoundaryNoMinimizer { eps: record };
    }
    if coarse.converged && finer.converged && (e2 / e1 - 1.0).abs() < cfg.eps_stability {
        return ExistenceVerdict::Exists(Box::new(finer));
    }
    ExistenceVerdict::Undetermined {
        reason: format!("eps {e1:.4e} -> {e2:.4e} under refinement, converged {} {}", coarse.converged, finer.converged),
    }
}
