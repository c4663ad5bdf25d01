//! Parameter sweeps, rate fits and the existence phase diagram.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{coupling_rhs, linear_fit, solve_ergodic_hjb, HjbConfig};
use crate::energy::{overlap, square_difference, thresholds, CouplingParams, MfgParams, PotentialSpec, State};
use crate::error::{MfgError, Result};
use crate::grid::{GridSpec, Point, ScalarField};
use crate::minimizer::{
    classify_existence, continuation_solve, descend, linear_schedule, potential_minima, ClassifyConfig,
    ExistenceVerdict, MinimizerResult, SolverConfig,
};
use crate::reference::ReferenceSolution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonZero {
    pub x: Point,
    pub a1: f64,
    pub p1: f64,
    pub a2: f64,
    pub p2: f64,
    /// `min(p₁, p₂)`.
    pub p: f64,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlattestSelection {
    pub zeros: Vec<CommonZero>,
    pub p0: f64,
    /// Indices into `zeros` with `p_j = p0`.
    pub z_bar: Vec<usize>,
    pub mu: f64,
    /// Indices into `zeros` in `z_bar` with `μ_j = μ`.
    pub z0: Vec<usize>,
}

fn same_point(a: Point, b: Point, dim: usize) -> bool {
    (0..dim).all(|k| (a[k] - b[k]).abs() < 1e-12)
}

/// Flattest common minima of `V₁` and `V₂`, evaluated from the well lists.
pub fn select_flattest(v1: &PotentialSpec, v2: &PotentialSpec, dim: usize) -> Result<FlattestSelection> {
    let mut zeros = Vec::new();
    for (j1, w1) in v1.wells.iter().enumerate() {
        let Some(j2) = v2.wells.iter().position(|w2| same_point(w1.point(), w2.point(), dim)) else {
            continue;
        };
        let (a1, p1) = v1.local_expansion(j1, dim);
        let (a2, p2) = v2.local_expansion(j2, dim);
        let mu = if p1 < p2 {
            a1
        } else if p1 == p2 {
            a1 + a2
        } else {
            a2
        };
        zeros.push(CommonZero { x: w1.point(), a1, p1, a2, p2, p: p1.min(p2), mu });
    }
    if zeros.is_empty() {
        return Err(MfgError::NoCommonZero);
    }
    let p0 = zeros.iter().map(|z| z.p).fold(f64::NEG_INFINITY, f64::max);
    let z_bar: Vec<usize> = (0..zeros.len()).filter(|&j| zeros[j].p == p0).collect();
    let mu = z_bar.iter().map(|&j| zeros[j].mu).fold(f64::INFINITY, f64::min);
    let z0 = z_bar.iter().copied().filter(|&j| zeros[j].mu == mu).collect();
    Ok(FlattestSelection { zeros, p0, z_bar, mu, z0 })
}

/// `(2γ'/(p₀ μ ν̄_{p₀} a*))^{1/(γ'+p₀)} δ^{1/(γ'+p₀)}`.
pub fn predicted_eps_attractive(delta: f64, reference: &ReferenceSolution, selection: &FlattestSelection) -> f64 {
    let gc = reference.gamma_conj();
    let p0 = selection.p0;
    let nu = reference.nu_bar_unit(p0);
    let e = 1.0 / (gc + p0);
    (2.0 * gc / (p0 * selection.mu * nu * reference.a_star)).powf(e) * delta.powf(e)
}

/// Both printed readings for the repulsive scale of one population:
/// `eps_lemma = X^{1/(γ'+q)}` and `eps_theorem = X^{1/((γ'+q)γ')}` with
/// `X = γ'(a* - α)/(a* b ν̄_q q)`.
pub fn predicted_eps_repulsive(alpha: f64, reference: &ReferenceSolution, well: (f64, f64)) -> (f64, f64) {
    let (b, q) = well;
    let gc = reference.gamma_conj();
    let a = reference.a_star;
    let x = gc * (a - alpha) / (a * b * reference.nu_bar_unit(q) * q);
    let lemma = x.powf(1.0 / (gc + q));
    (lemma, lemma.powf(1.0 / gc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowupRecord {
    pub coupling: CouplingParams,
    /// Attractive: `a* - (α₁+α₂+2β)/2`; repulsive: `a* - α_i` per population.
    pub delta: [f64; 2],
    pub eps_measured: [f64; 2],
    /// Attractive: the same prediction twice; repulsive: the lemma reading.
    pub eps_predicted: [f64; 2],
    /// Repulsive only: the theorem reading.
    pub eps_predicted_alt: Option<[f64; 2]>,
    pub x_conc: [Point; 2],
    /// Minimum points of the value functions.
    pub x_min_u: [Point; 2],
    pub overlap: f64,
    pub lambda_eps_gamma: [f64; 2],
    pub sq_diff: f64,
    pub kinetic_ratio: f64,
    pub energy: f64,
    /// L¹ distance of the rescaled densities to the unit reference profile.
    pub profile_l1: [f64; 2],
    pub converged: bool,
    /// `ε < 8h`: the bump is under-resolved and the point is excluded from fits.
    pub flagged: bool,
    pub error: Option<String>,
    #[serde(skip)]
    pub state: Option<Box<State>>,
}

impl BlowupRecord {
    fn failed(coupling: CouplingParams, delta: [f64; 2], err: &MfgError) -> Self {
        let nan2 = [f64::NAN; 2];
        Self {
            coupling,
            delta,
            eps_measured: nan2,
            eps_predicted: nan2,
            eps_predicted_alt: None,
            x_conc: [[f64::NAN; 2]; 2],
            x_min_u: [[f64::NAN; 2]; 2],
            overlap: f64::NAN,
            lambda_eps_gamma: nan2,
            sq_diff: f64::NAN,
            kinetic_ratio: f64::NAN,
            energy: f64::NAN,
            profile_l1: nan2,
            converged: false,
            flagged: true,
            error: Some(err.to_string()),
            state: None,
        }
    }

    pub fn usable(&self) -> bool {
        self.error.is_none() && self.converged && !self.flagged
    }
}

fn center_of_mass(m: &ScalarField) -> Point {
    let g = m.grid;
    let hv = g.cell_volume();
    let total: f64 = m.values.iter().sum::<f64>() * hv;
    let mut c = [0.0; 2];
    for k in 0..g.dim() {
        c[k] = hv * (0..g.num_cells()).map(|i| g.center(i)[k] * m.values[i]).sum::<f64>() / total;
    }
    c
}

/// `ε^N m(εx + c)` on `target`, with `c` the center of mass of `m`.
pub fn rescaled_profile(m: &ScalarField, eps: f64, target: &GridSpec) -> ScalarField {
    let dim = target.dim();
    let c = center_of_mass(m);
    let scale = eps.powi(dim as i32);
    ScalarField::from_fn(*target, |x| {
        let mut y = [0.0; 2];
        for k in 0..dim {
            y[k] = eps * x[k] + c[k];
        }
        scale * m.sample(y)
    })
}

/// `∫|ε^N m(εx + c) - Q(x)| dx` with `Q` sampled on its own grid.
pub fn rescaled_profile_distance(m: &ScalarField, eps: f64, unit: &ScalarField) -> f64 {
    let r = rescaled_profile(m, eps, &unit.grid);
    let s: f64 = r.values.iter().zip(&unit.values).map(|(a, b)| (a - b).abs()).sum();
    s * unit.grid.cell_volume()
}

fn make_record(
    params: &MfgParams,
    r: &MinimizerResult,
    delta: [f64; 2],
    predicted: [f64; 2],
    alt: Option<[f64; 2]>,
    unit: &ScalarField,
) -> BlowupRecord {
    let hp = &params.hamiltonian;
    let gc = hp.gamma_conj();
    let state = r.to_state();
    let g = state.grid();
    let x_min_u = [0, 1].map(|i| {
        let f = coupling_rhs(i, &state, params);
        solve_ergodic_hjb(&f, hp, &HjbConfig::default())
            .map(|vp| vp.x_min)
            .unwrap_or([f64::NAN; 2])
    });
    let m = &state.m;
    BlowupRecord {
        coupling: params.coupling,
        delta,
        eps_measured: r.eps,
        eps_predicted: predicted,
        eps_predicted_alt: alt,
        x_conc: r.x_conc,
        x_min_u,
        overlap: overlap(&m[0], &m[1], hp),
        lambda_eps_gamma: [0, 1].map(|i| r.lambda[i] * r.eps[i].powf(gc)),
        sq_diff: square_difference(&m[0], &m[1], hp),
        kinetic_ratio: r.breakdown.kinetic_1 / r.breakdown.kinetic_2,
        energy: r.energy(),
        profile_l1: [0, 1].map(|i| rescaled_profile_distance(&m[i], r.eps[i], unit)),
        converged: r.converged,
        flagged: r.eps[0].min(r.eps[1]) < 8.0 * g.spacing(),
        error: None,
        state: Some(Box::new(state.clone())),
    }
}

/// Geometric δ schedule with ratio 1/2 starting at `start`, `count` points.
pub fn halving_schedule(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * 0.5f64.powi(k as i32)).collect()
}

/// Solves along `couplings` (after a linear ramp to the first one), keeping
/// every intermediate result.
fn chain(
    base: &MfgParams,
    couplings: &[CouplingParams],
    reference: &ReferenceSolution,
    grid: &GridSpec,
    cfg: &SolverConfig,
) -> Vec<Result<MinimizerResult>> {
    let mut solver = cfg.clone();
    solver.continuation = linear_schedule(&couplings[0], 3);
    let mut out = Vec::with_capacity(couplings.len());
    let first = continuation_solve(&base.with_coupling(couplings[0]), reference, grid, &solver);
    let mut prev = match first {
        Ok(r) => {
            out.push(Ok(r.clone()));
            r
        }
        Err(e) => {
            out.push(Err(e));
            return out;
        }
    };
    for c in &couplings[1..] {
        match descend(&base.with_coupling(*c), &prev.state, cfg) {
            Ok(r) => {
                out.push(Ok(r.clone()));
                prev = r;
            }
            Err(e) => {
                out.push(Err(e));
                break;
            }
        }
    }
    out
}

/// Attractive schedule `α_{1,2} = a* - β - δ(1 ± κ)` at fixed `β > 0`, so `δ`
/// is the mean gap `a* - (α₁+α₂+2β)/2`. Each point runs its own warm-started chain through the larger δ values,
/// so points are independent jobs; output is ordered like `deltas`
/// (sorted decreasing).
pub fn attractive_sweep(
    base: &MfgParams,
    reference: &ReferenceSolution,
    grid: &GridSpec,
    deltas: &[f64],
    asymmetry: f64,
    cfg: &SolverConfig,
) -> Result<Vec<BlowupRecord>> {
    let beta = base.coupling.beta;
    if !(beta > 0.0) {
        return Err(MfgError::InvalidParameter("attractive sweep needs beta > 0".into()));
    }
    if !(0.0..1.0).contains(&asymmetry) {
        return Err(MfgError::InvalidParameter("asymmetry must lie in [0, 1)".into()));
    }
    let selection = select_flattest(&base.potential1, &base.potential2, grid.dim())?;
    let mut deltas = deltas.to_vec();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let a = reference.a_star;
    let couplings: Vec<CouplingParams> = deltas
        .iter()
        .map(|d| CouplingParams {
            alpha1: a - beta - d * (1.0 + asymmetry),
            alpha2: a - beta - d * (1.0 - asymmetry),
            beta,
        })
        .collect();
    let unit = reference.unit_profile_on(&reference.grid, [0.0, 0.0]);
    let records = (0..deltas.len())
        .into_par_iter()
        .map(|k| {
            let res = chain(base, &couplings[..=k], reference, grid, cfg).pop().unwrap();
            let d = deltas[k];
            match res {
                Ok(r) => {
                    let p = predicted_eps_attractive(d, reference, &selection);
                    make_record(&base.with_coupling(couplings[k]), &r, [d, d], [p, p], None, &unit)
                }
                Err(e) => BlowupRecord::failed(couplings[k], [d, d], &e),
            }
        })
        .collect();
    Ok(records)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RepulsiveSchedule {
    /// `ε̃₁ = ε̃₂^s`; `s = 1` makes both tilde scales equal.
    Power { s: f64 },
}

impl Default for RepulsiveSchedule {
    fn default() -> Self {
        Self::Power { s: 1.0 }
    }
}

impl RepulsiveSchedule {
    /// `(a* - α₁, a* - α₂)` for a given `a* - α₂ = δ`.
    pub fn deltas(&self, delta: f64, gc: f64, q: [f64; 2]) -> [f64; 2] {
        let Self::Power { s } = *self;
        let e2 = delta.powf(1.0 / (gc + q[1]));
        [e2.powf(s * (gc + q[0])), delta]
    }
}

/// The single well `(b_i, q_i)` of `V_i`.
fn single_well(v: &PotentialSpec, dim: usize) -> Result<(f64, f64, Point)> {
    if v.wells.len() != 1 {
        return Err(MfgError::InvalidParameter("repulsive sweep needs single-well potentials".into()));
    }
    let (b, q) = v.local_expansion(0, dim);
    Ok((b, q, v.wells[0].point()))
}

/// Repulsive schedule at fixed `β < 0` with distinct single wells.
pub fn repulsive_sweep(
    base: &MfgParams,
    reference: &ReferenceSolution,
    grid: &GridSpec,
    deltas: &[f64],
    schedule: RepulsiveSchedule,
    cfg: &SolverConfig,
) -> Result<Vec<BlowupRecord>> {
    let beta = base.coupling.beta;
    if !(beta < 0.0) {
        return Err(MfgError::InvalidParameter("repulsive sweep needs beta < 0".into()));
    }
    let dim = grid.dim();
    let w = [single_well(&base.potential1, dim)?, single_well(&base.potential2, dim)?];
    if same_point(w[0].2, w[1].2, dim) {
        return Err(MfgError::InvalidParameter("repulsive sweep needs distinct wells".into()));
    }
    let gc = reference.gamma_conj();
    let a = reference.a_star;
    let mut deltas = deltas.to_vec();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let pairs: Vec<[f64; 2]> = deltas.iter().map(|&d| schedule.deltas(d, gc, [w[0].1, w[1].1])).collect();
    let couplings: Vec<CouplingParams> = pairs
        .iter()
        .map(|d| CouplingParams { alpha1: a - d[0], alpha2: a - d[1], beta })
        .collect();
    let unit = reference.unit_profile_on(&reference.grid, [0.0, 0.0]);
    let records = (0..deltas.len())
        .into_par_iter()
        .map(|k| {
            let res = chain(base, &couplings[..=k], reference, grid, cfg).pop().unwrap();
            match res {
                Ok(r) => {
                    let pred = [0, 1].map(|i| predicted_eps_repulsive(couplings[k].alpha(i), reference, (w[i].0, w[i].1)));
                    make_record(
                        &base.with_coupling(couplings[k]),
                        &r,
                        pairs[k],
                        [pred[0].0, pred[1].0],
                        Some([pred[0].1, pred[1].1]),
                        &unit,
                    )
                }
                Err(e) => BlowupRecord::failed(couplings[k], pairs[k], &e),
            }
        })
        .collect();
    Ok(records)
}

/// `exp(-ε̃₁^{-δ̂}) / ε̃₂^{q₂}`: must tend to zero along a valid repulsive schedule.
pub fn relaxed_condition(eps1_tilde: f64, eps2_tilde: f64, q2: f64, delta_hat: f64) -> f64 {
    (-eps1_tilde.powf(-delta_hat)).exp() / eps2_tilde.powf(q2)
}

/// Whether the relaxed comparability quantity decreases along the schedule.
pub fn schedule_valid(records: &[BlowupRecord], gc: f64, q: [f64; 2], delta_hat: f64) -> bool {
    let vals: Vec<f64> = records
        .iter()
        .map(|r| {
            let t1 = r.delta[0].powf(1.0 / (gc + q[0]));
            let t2 = r.delta[1].powf(1.0 / (gc + q[1]));
            relaxed_condition(t1, t2, q[1], delta_hat)
        })
        .collect();
    vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub prefactor: f64,
    pub r2: f64,
    /// Half-width of the 95% band on the slope.
    pub slope_band: f64,
}

/// Least squares of `ln y` on `ln x`.
pub fn fit_rate(x: &[f64], y: &[f64]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite() && **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let decades = if pts.is_empty() {
        0.0
    } else {
        let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / std::f64::consts::LN_10
    };
    if pts.len() < 4 || decades < 1.5 - 1e-9 {
        return Err(MfgError::InsufficientSpan { points: pts.len(), decades });
    }
    let lx: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ly: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (slope, intercept, r2) = linear_fit(&lx, &ly);
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let se = (sse / (n - 2.0) / sxx).sqrt();
    Ok(RateFit { slope, prefactor: intercept.exp(), r2, slope_band: 2.0 * se })
}

/// Rate fit over the usable records of a sweep, per population.
pub fn fit_records(records: &[BlowupRecord], population: usize) -> Result<RateFit> {
    let usable: Vec<&BlowupRecord> = records.iter().filter(|r| r.usable()).collect();
    let x: Vec<f64> = usable.iter().map(|r| r.delta[population]).collect();
    let y: Vec<f64> = usable.iter().map(|r| r.eps_measured[population]).collect();
    fit_rate(&x, &y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TheoremRegion {
    Exists,
    NoMinimizer,
    /// On a critical curve or in the strip the theory leaves open.
    Open,
}

/// Expected outcome at `(α₁, α₂, β)` and its distance to the critical curves
/// `α_i = a*`, `β = β_*`, `β = β*`.
pub fn theorem_region(c: &CouplingParams, a_star: f64) -> (TheoremRegion, f64) {
    let a = a_star;
    let excess = (c.alpha1 - a).max(c.alpha2 - a);
    if excess > 0.0 {
        return (TheoremRegion::NoMinimizer, excess);
    }
    let th = thresholds(c, a);
    let (d1, d2) = (a - c.alpha1, a - c.alpha2);
    let mut dist = d1.min(d2);
    // β* = a* - (α₁+α₂)/2 has gradient (1/2, 1/2, -1) in (α₁, α₂, β)
    dist = dist.min((c.beta - th.beta_super).abs() / 1.5f64.sqrt());
    if d1 > 0.0 && d2 > 0.0 {
        let s = (d1 * d2).sqrt();
        let g = (1.0 + ((d2 / s).powi(2) + (d1 / s).powi(2)) / 4.0).sqrt();
        dist = dist.min((c.beta - th.beta_sub).abs() / g);
    }
    let region = if c.beta > th.beta_super {
        TheoremRegion::NoMinimizer
    } else if d1 > 0.0 && d2 > 0.0 && c.beta < th.beta_sub {
        TheoremRegion::Exists
    } else {
        TheoremRegion::Open
    };
    (region, dist)
}

/// Whether a verdict is compatible with the expected region.
pub fn verdict_agrees(region: TheoremRegion, verdict: &ExistenceVerdict) -> bool {
    match region {
        TheoremRegion::Exists => matches!(verdict, ExistenceVerdict::Exists(_)),
        TheoremRegion::NoMinimizer => !matches!(verdict, ExistenceVerdict::Exists(_)),
        TheoremRegion::Open => true,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub coupling: CouplingParams,
    pub verdict: ExistenceVerdict,
}

/// Classifies every `(α₁, α₂) × β` combination in parallel; output is in
/// row-major order of the inputs.
pub fn phase_diagram(
    base: &MfgParams,
    reference: &ReferenceSolution,
    grid: &GridSpec,
    alpha_grid: &[(f64, f64)],
    beta_grid: &[f64],
    cfg: &ClassifyConfig,
) -> Vec<PhasePoint> {
    let points: Vec<CouplingParams> = alpha_grid
        .iter()
        .flat_map(|&(a1, a2)| beta_grid.iter().map(move |&b| CouplingParams { alpha1: a1, alpha2: a2, beta: b }))
        .collect();
    points
        .par_iter()
        .map(|c| PhasePoint {
            coupling: *c,
            verdict: classify_existence(&base.with_coupling(*c), reference, grid, cfg),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub energy: f64,
    pub bound: f64,
    pub pass: bool,
    /// Far from criticality the bound is not asserted.
    pub skipped: bool,
}

/// Upper bound on the ground-state energy near attractive criticality,
/// with 20% slack, plus `e ≥ 0`. Skipped when `δ > max_delta`.
pub fn energy_upper_bound_check(
    energy: f64,
    delta: f64,
    selection: &FlattestSelection,
    reference: &ReferenceSolution,
    max_delta: f64,
) -> BoundCheck {
    let gc = reference.gamma_conj();
    let p0 = selection.p0;
    let nu = reference.nu_bar_unit(p0);
    let e = gc + p0;
    let bound = ((gc + p0) / p0)
        * (selection.mu * nu * p0 / gc).powf(gc / e)
        * (2.0 / reference.a_star).powf(p0 / e)
        * delta.powf(p0 / e)
        * 1.2;
    let skipped = delta > max_delta;
    BoundCheck {
        energy,
        bound,
        pass: energy >= 0.0 && (skipped || energy <= bound),
        skipped,
    }
}

/// Minima of `V₁ + V₂`-type selection helper: the concentration targets of
/// each population's potential.
pub fn wells_of(v: &PotentialSpec) -> Vec<Point> {
    potential_minima(v)
}
