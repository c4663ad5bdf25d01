//! Energy functionals of the two-population problem.
//!
//! The kinetic term is the discrete perspective cost. Each cell combines its
//! faces by a per-axis quadratic mean, `q = Σ_axes (w_lo² + w_hi²)/2`, and
//! charges `C_L m^{1-γ'} q^{γ'/2} h^N`. This is jointly convex in `(m, w)`
//! and, unlike an arithmetic face average, has no checkerboard null mode.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::grid::{FluxField, GridSpec, Point, ScalarField};

/// Cells with `m` below this fraction of `max m` are treated as empty.
pub const M_FLOOR_REL: f64 = 1e-14;
/// Flux magnitude tolerated in an empty cell.
pub const FLUX_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianParams {
    pub gamma: f64,
    pub c_h: f64,
}

impl HamiltonianParams {
    pub fn new(gamma: f64, c_h: f64) -> Result<Self> {
        if !(gamma > 1.0 && gamma.is_finite()) {
            return Err(MfgError::InvalidParameter(format!("gamma must exceed 1, got {gamma}")));
        }
        if !(c_h > 0.0 && c_h.is_finite()) {
            return Err(MfgError::InvalidParameter(format!("c_h must be positive, got {c_h}")));
        }
        Ok(Self { gamma, c_h })
    }

    /// γ' = γ/(γ-1).
    pub fn gamma_conj(&self) -> f64 {
        self.gamma / (self.gamma - 1.0)
    }

    /// C_L = (1/γ')(γ C_H)^{1/(1-γ)}.
    pub fn c_l(&self) -> f64 {
        (self.gamma * self.c_h).powf(1.0 / (1.0 - self.gamma)) / self.gamma_conj()
    }

    /// Self-interaction exponent `1 + γ'/N`.
    pub fn self_power(&self, dim: usize) -> f64 {
        1.0 + self.gamma_conj() / dim as f64
    }

    /// Cross-interaction exponent `s = 1/2 + γ'/(2N)`.
    pub fn cross_power(&self, dim: usize) -> f64 {
        0.5 + self.gamma_conj() / (2.0 * dim as f64)
    }

    /// `N/(N+γ')`, the prefactor shared by the coupling terms.
    pub fn coupling_factor(&self, dim: usize) -> f64 {
        let n = dim as f64;
        n / (n + self.gamma_conj())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
}

impl CouplingParams {
    pub fn alpha(&self, i: usize) -> f64 {
        if i == 0 {
            self.alpha1
        } else {
            self.alpha2
        }
    }

    pub fn lerp(&self, other: &CouplingParams, t: f64) -> CouplingParams {
        CouplingParams {
            alpha1: self.alpha1 + t * (other.alpha1 - self.alpha1),
            alpha2: self.alpha2 + t * (other.alpha2 - self.alpha2),
            beta: self.beta + t * (other.beta - self.beta),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialForm {
    ProductOfWells,
    SingleWell,
    /// `V ≡ 0`; used for the potential-free problem.
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Well {
    pub center: Vec<f64>,
    pub exponent: f64,
    pub coefficient: f64,
}

impl Well {
    pub fn point(&self) -> Point {
        [
            self.center.first().copied().unwrap_or(0.0),
            self.center.get(1).copied().unwrap_or(0.0),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub form: PotentialForm,
    #[serde(default)]
    pub wells: Vec<Well>,
}

fn dist(a: Point, b: Point, dim: usize) -> f64 {
    (0..dim).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

impl PotentialSpec {
    pub fn zero() -> Self {
        Self {
            form: PotentialForm::Zero,
            wells: Vec::new(),
        }
    }

    /// `coefficient · |x - center|^exponent`.
    pub fn single(center: Point, exponent: f64, coefficient: f64) -> Self {
        Self {
            form: PotentialForm::SingleWell,
            wells: vec![Well {
                center: center.to_vec(),
                exponent,
                coefficient,
            }],
        }
    }

    pub fn product(wells: Vec<Well>) -> Self {
        Self {
            form: PotentialForm::ProductOfWells,
            wells,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self.form {
            PotentialForm::Zero => {
                if !self.wells.is_empty() {
                    return Err(MfgError::Validation("zero potential takes no wells".into()));
                }
            }
            PotentialForm::SingleWell if self.wells.len() != 1 => {
                return Err(MfgError::Validation("single-well potential needs exactly one well".into()));
            }
            PotentialForm::ProductOfWells if self.wells.is_empty() => {
                return Err(MfgError::Validation("product potential needs at least one well".into()));
            }
            _ => {}
        }
        for w in &self.wells {
            if w.center.len() != dim {
                return Err(MfgError::Validation(format!(
                    "well center has {} coordinates, grid has dim {dim}",
                    w.center.len()
                )));
            }
            if !(w.exponent > 0.0) {
                return Err(MfgError::Validation("well exponents must be positive".into()));
            }
            if !(w.coefficient > 0.0) {
                return Err(MfgError::Validation("well coefficients must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: Point, dim: usize) -> f64 {
        match self.form {
            PotentialForm::Zero => 0.0,
            _ => self
                .wells
                .iter()
                .map(|w| w.coefficient * dist(x, w.point(), dim).powf(w.exponent))
                .product(),
        }
    }

    pub fn sample(&self, grid: &GridSpec) -> ScalarField {
        ScalarField::from_fn(*grid, |p| self.eval(p, grid.dim()))
    }

    /// Far-field growth exponent `b` with `V ≳ |x|^b`.
    pub fn growth_exponent(&self) -> f64 {
        self.wells.iter().map(|w| w.exponent).sum()
    }

    /// Local expansion `V(x) ≈ c |x - x_j|^{p_j}` at well `j`: returns `(c, p_j)`.
    /// For products the other factors are frozen at `x_j`.
    pub fn local_expansion(&self, j: usize, dim: usize) -> (f64, f64) {
        let wj = &self.wells[j];
        let others: f64 = self
            .wells
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .map(|(_, w)| w.coefficient * dist(wj.point(), w.point(), dim).powf(w.exponent))
            .product();
        (wj.coefficient * others, wj.exponent)
    }
}

/// Full physical parameter set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfgParams {
    pub hamiltonian: HamiltonianParams,
    pub coupling: CouplingParams,
    pub potential1: PotentialSpec,
    pub potential2: PotentialSpec,
}

impl MfgParams {
    pub fn potential(&self, i: usize) -> &PotentialSpec {
        if i == 0 {
            &self.potential1
        } else {
            &self.potential2
        }
    }

    pub fn with_coupling(&self, coupling: CouplingParams) -> Self {
        Self {
            coupling,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic_1: f64,
    pub kinetic_2: f64,
    pub potential_1: f64,
    pub potential_2: f64,
    pub self_1: f64,
    pub self_2: f64,
    pub cross: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn kinetic(&self, i: usize) -> f64 {
        if i == 0 {
            self.kinetic_1
        } else {
            self.kinetic_2
        }
    }
}

/// Coupling terms regrouped with `(α_i + β)` and the square-difference term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegroupedEnergy {
    pub kinetic: f64,
    pub potential: f64,
    /// `-(N/(N+γ'))[(α₁+β)∫m₁^{2s} + (α₂+β)∫m₂^{2s}]`
    pub shifted_self: f64,
    /// `(Nβ/(N+γ'))∫(m₁^s - m₂^s)²`
    pub square_difference: f64,
    pub total: f64,
}

/// Exponentiation that takes the cheap path for integer and half-integer powers.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Pow {
    Int(i32),
    Half(i32),
    Real(f64),
}

impl Pow {
    pub(crate) fn new(e: f64) -> Self {
        if e == e.round() && e.abs() < 64.0 {
            Pow::Int(e as i32)
        } else if (2.0 * e) == (2.0 * e).round() && e.abs() < 64.0 {
            Pow::Half((e - 0.5).round() as i32)
        } else {
            Pow::Real(e)
        }
    }

    #[inline]
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Pow::Int(k) => x.powi(k),
            Pow::Half(k) => x.sqrt() * x.powi(k),
            Pow::Real(e) => x.powf(e),
        }
    }
}

/// Discrete kinetic cost on raw slices, optionally accumulating its gradient
/// into `grad_m` and `grad_w`.
pub(crate) fn kinetic_raw(
    grid: &GridSpec,
    m: &[f64],
    w: &[Vec<f64>],
    hp: &HamiltonianParams,
    mut grad: Option<(&mut [f64], &mut [Vec<f64>])>,
) -> Result<f64> {
    let gc = hp.gamma_conj();
    let scale = hp.c_l() * grid.cell_volume();
    let m_max = m.iter().cloned().fold(0.0, f64::max);
    let floor = M_FLOOR_REL * m_max;
    let pow_m = Pow::new(1.0 - gc);
    let pow_q = Pow::new(gc / 2.0);
    let pow_dq = Pow::new(gc / 2.0 - 1.0);
    let dim = grid.dim();
    let mut total = 0.0;
    for (c, &mc) in m.iter().enumerate() {
        let mut q = 0.0;
        let mut faces = [(0usize, 0usize); 2];
        for a in 0..dim {
            let (lo, hi) = grid.cell_faces(c, a);
            faces[a] = (lo, hi);
            q += 0.5 * (w[a][lo] * w[a][lo] + w[a][hi] * w[a][hi]);
        }
        if q == 0.0 {
            continue;
        }
        if mc <= floor || mc <= 0.0 {
            if q.sqrt() < FLUX_TOL {
                continue;
            }
            return Err(MfgError::InfeasibleKinetic {
                cell: c,
                m: mc,
                flux: q.sqrt(),
            });
        }
        let mp = pow_m.apply(mc);
        let qp = pow_q.apply(q);
        total += mp * qp;
        if let Some((gm, gw)) = grad.as_mut() {
            gm[c] += scale * (1.0 - gc) * qp * mp / mc;
            let dq = scale * mp * 0.5 * gc * pow_dq.apply(q);
            for a in 0..dim {
                let (lo, hi) = faces[a];
                gw[a][lo] += dq * w[a][lo];
                gw[a][hi] += dq * w[a][hi];
            }
        }
    }
    Ok(scale * total)
}

/// `C_L Σ |w̄/m|^{γ'} m h^N` with the quadratic-mean face combination.
pub fn kinetic_cost(m: &ScalarField, w: &FluxField, hp: &HamiltonianParams) -> Result<f64> {
    kinetic_raw(&m.grid, &m.values, &w.faces, hp, None)
}

/// Kinetic cost together with its partial derivatives in `m` and `w`.
pub fn kinetic_cost_with_grad(
    m: &ScalarField,
    w: &FluxField,
    hp: &HamiltonianParams,
) -> Result<(f64, ScalarField, FluxField)> {
    let mut gm = ScalarField::zeros(m.grid);
    let mut gw = FluxField::zeros(m.grid);
    let k = kinetic_raw(&m.grid, &m.values, &w.faces, hp, Some((&mut gm.values, &mut gw.faces)))?;
    Ok((k, gm, gw))
}

pub fn potential_energy(v: &PotentialSpec, m: &ScalarField) -> f64 {
    let g = &m.grid;
    let s: f64 = m
        .values
        .iter()
        .enumerate()
        .map(|(c, &mc)| v.eval(g.center(c), g.dim()) * mc)
        .sum();
    g.cell_volume() * s
}

/// `∫ m^{1+γ'/N}`.
pub fn power_integral(m: &ScalarField, hp: &HamiltonianParams) -> f64 {
    let p = Pow::new(hp.self_power(m.grid.dim()));
    m.grid.cell_volume() * m.values.iter().map(|&x| p.apply(x.max(0.0))).sum::<f64>()
}

/// `-(N α/(N+γ')) ∫ m^{1+γ'/N}`.
pub fn self_term(m: &ScalarField, alpha: f64, hp: &HamiltonianParams) -> f64 {
    if alpha == 0.0 {
        return 0.0;
    }
    -hp.coupling_factor(m.grid.dim()) * alpha * power_integral(m, hp)
}

/// `∫ (m₁ m₂)^s` with `s = 1/2 + γ'/(2N)`.
pub fn overlap(m1: &ScalarField, m2: &ScalarField, hp: &HamiltonianParams) -> f64 {
    let p = Pow::new(hp.cross_power(m1.grid.dim()));
    let s: f64 = m1
        .values
        .iter()
        .zip(&m2.values)
        .map(|(&a, &b)| p.apply((a * b).max(0.0)))
        .sum();
    m1.grid.cell_volume() * s
}

/// `-(2βN/(N+γ')) ∫ (m₁ m₂)^s`.
pub fn cross_term(m1: &ScalarField, m2: &ScalarField, beta: f64, hp: &HamiltonianParams) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    -2.0 * beta * hp.coupling_factor(m1.grid.dim()) * overlap(m1, m2, hp)
}

/// `∫ (m₁^s - m₂^s)²`.
pub fn square_difference(m1: &ScalarField, m2: &ScalarField, hp: &HamiltonianParams) -> f64 {
    let p = Pow::new(hp.cross_power(m1.grid.dim()));
    let s: f64 = m1
        .values
        .iter()
        .zip(&m2.values)
        .map(|(&a, &b)| (p.apply(a.max(0.0)) - p.apply(b.max(0.0))).powi(2))
        .sum();
    m1.grid.cell_volume() * s
}

/// A two-population state `(m₁, w₁, m₂, w₂)`.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub m: [ScalarField; 2],
    pub w: [FluxField; 2],
}

impl State {
    pub fn grid(&self) -> GridSpec {
        self.m[0].grid
    }
}

pub fn total_energy(state: &State, params: &MfgParams) -> Result<EnergyBreakdown> {
    let hp = &params.hamiltonian;
    let c = &params.coupling;
    let kinetic_1 = kinetic_cost(&state.m[0], &state.w[0], hp)?;
    let kinetic_2 = kinetic_cost(&state.m[1], &state.w[1], hp)?;
    let potential_1 = potential_energy(&params.potential1, &state.m[0]);
    let potential_2 = potential_energy(&params.potential2, &state.m[1]);
    let self_1 = self_term(&state.m[0], c.alpha1, hp);
    let self_2 = self_term(&state.m[1], c.alpha2, hp);
    let cross = cross_term(&state.m[0], &state.m[1], c.beta, hp);
    Ok(EnergyBreakdown {
        kinetic_1,
        kinetic_2,
        potential_1,
        potential_2,
        self_1,
        self_2,
        cross,
        total: kinetic_1 + kinetic_2 + potential_1 + potential_2 + self_1 + self_2 + cross,
    })
}

pub fn regrouped_energy(state: &State, params: &MfgParams) -> Result<RegroupedEnergy> {
    let hp = &params.hamiltonian;
    let c = &params.coupling;
    let dim = state.grid().dim();
    let f = hp.coupling_factor(dim);
    let kinetic = kinetic_cost(&state.m[0], &state.w[0], hp)? + kinetic_cost(&state.m[1], &state.w[1], hp)?;
    let potential = potential_energy(&params.potential1, &state.m[0])
        + potential_energy(&params.potential2, &state.m[1]);
    let shifted_self = -f
        * ((c.alpha1 + c.beta) * power_integral(&state.m[0], hp)
            + (c.alpha2 + c.beta) * power_integral(&state.m[1], hp));
    let square_difference = f * c.beta * square_difference(&state.m[0], &state.m[1], hp);
    Ok(RegroupedEnergy {
        kinetic,
        potential,
        shifted_self,
        square_difference,
        total: kinetic + potential + shifted_self + square_difference,
    })
}

/// Energy of one population with its own `α` and potential.
pub fn single_energy(
    m: &ScalarField,
    w: &FluxField,
    alpha: f64,
    v: &PotentialSpec,
    hp: &HamiltonianParams,
) -> Result<f64> {
    Ok(kinetic_cost(m, w, hp)? + potential_energy(v, m) + self_term(m, alpha, hp))
}

/// `kinetic · mass^{γ'/N} / ((N/(N+γ'))∫m^{1+γ'/N})`; bounded below by `a*`.
pub fn gn_quotient(m: &ScalarField, w: &FluxField, hp: &HamiltonianParams) -> Result<f64> {
    let dim = m.grid.dim();
    let k = kinetic_cost(m, w, hp)?;
    let mass = crate::grid::mass(m);
    Ok(k * mass.powf(hp.gamma_conj() / dim as f64) / (hp.coupling_factor(dim) * power_integral(m, hp)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// β_* = √((a*-α₁)(a*-α₂)); minimizers exist below it.
    pub beta_sub: f64,
    /// β* = (2a* - α₁ - α₂)/2; no minimizer above it.
    pub beta_super: f64,
    /// α*_β = a* - β.
    pub alpha_beta_star: f64,
}

pub fn thresholds(c: &CouplingParams, a_star: f64) -> Thresholds {
    let p = (a_star - c.alpha1) * (a_star - c.alpha2);
    Thresholds {
        beta_sub: if p > 0.0 { p.sqrt() } else { 0.0 },
        beta_super: (2.0 * a_star - c.alpha1 - c.alpha2) / 2.0,
        alpha_beta_star: a_star - c.beta,
    }
}
