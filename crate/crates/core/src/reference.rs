//! The potential-free single-population problem.
//!
//! The Gagliardo–Nirenberg quotient is minimized over unit-mass densities.
//! The quotient is invariant under dilations, so the width is pinned by a
//! soft penalty on `∫m^{1+γ'/N}` at the value the final normalization
//! requires, and `M*` is updated by a short fixed-point loop.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dual::{solve_ergodic_hjb, HjbConfig};
use crate::energy::{kinetic_cost, kinetic_raw, power_integral, HamiltonianParams, Pow};
use crate::error::{MfgError, Result};
use crate::feasible::FeasiblePair;
use crate::grid::{self, FluxField, GridSpec, Point, ScalarField};
use crate::optim::{minimize, LbfgsOptions, Objective};
use crate::param::Codec;

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSolution {
    /// Minimizer with mass `M*`, kinetic cost 1 and `∫m₀^{1+γ'/N} = (N+γ')/N`.
    pub m0: ScalarField,
    pub w0: FluxField,
    pub u0: ScalarField,
    pub m_star: f64,
    pub a_star: f64,
    /// Ergodic constant of the value function solve.
    pub lambda0: f64,
    pub grid: GridSpec,
    pub hp: HamiltonianParams,
}

#[derive(Clone, Debug)]
pub struct ReferenceConfig {
    pub lbfgs: LbfgsOptions,
    /// Weight of the width penalty `ρ (P/P_target - 1)²`.
    pub penalty: f64,
    pub outer_iterations: usize,
    pub hjb: HjbConfig,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsOptions {
                tol_grad: 1e-11,
                tol_energy: 1e-15,
                stall_window: 40,
                max_iter: 20_000,
                ..Default::default()
            },
            penalty: 10.0,
            outer_iterations: 3,
            hjb: HjbConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentResult {
    pub p: f64,
    pub nu_bar: f64,
    pub y_opt: Point,
}

struct Quotient<'a> {
    codec: &'a Codec,
    hp: HamiltonianParams,
    p_target: f64,
    penalty: f64,
    m: Vec<f64>,
    w: Vec<Vec<f64>>,
    gm: Vec<f64>,
    gw: Vec<Vec<f64>>,
}

impl<'a> Quotient<'a> {
    fn new(codec: &'a Codec, hp: HamiltonianParams, p_target: f64, penalty: f64) -> Self {
        let g = codec.grid;
        let faces: Vec<Vec<f64>> = (0..g.dim()).map(|a| vec![0.0; g.face_count(a)]).collect();
        Self {
            codec,
            hp,
            p_target,
            penalty,
            m: vec![0.0; codec.nc],
            w: faces.clone(),
            gm: vec![0.0; codec.nc],
            gw: faces,
        }
    }
}

impl Objective for Quotient<'_> {
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let g = self.codec.grid;
        let s = self.codec.decode(x, &mut self.m, &mut self.w);
        self.gm.iter_mut().for_each(|v| *v = 0.0);
        self.gw.iter_mut().for_each(|f| f.iter_mut().for_each(|v| *v = 0.0));
        let k = kinetic_raw(&g, &self.m, &self.w, &self.hp, Some((&mut self.gm, &mut self.gw)))?;
        let q = self.hp.gamma_conj() / g.dim() as f64;
        let pw = Pow::new(q);
        let hv = g.cell_volume();
        let mut p = 0.0;
        for &mi in &self.m {
            p += pw.apply(mi) * mi;
        }
        p *= hv;
        if !(k > 0.0 && p > 0.0) {
            return Err(MfgError::InvalidParameter("degenerate density in quotient".into()));
        }
        let dev = p / self.p_target - 1.0;
        // the center of mass is pinned at the origin
        let dim = g.dim();
        let mut com = [0.0; 2];
        for (c, &mi) in self.m.iter().enumerate() {
            let x = g.center(c);
            for k in 0..dim {
                com[k] += x[k] * mi * hv;
            }
        }
        let f = k.ln() - p.ln() + self.penalty * (dev * dev + com[0] * com[0] + com[1] * com[1]);
        let cp = -1.0 / p + 2.0 * self.penalty * dev / self.p_target;
        for (c, (gm, &mi)) in self.gm.iter_mut().zip(&self.m).enumerate() {
            let x = g.center(c);
            let shift: f64 = (0..dim).map(|k| 2.0 * self.penalty * com[k] * x[k] * hv).sum();
            *gm = *gm / k + cp * (1.0 + q) * pw.apply(mi) * hv + shift;
        }
        self.gw.iter_mut().for_each(|f| f.iter_mut().for_each(|v| *v /= k));
        let (gm, gw) = (&mut self.gm, &mut self.gw);
        self.codec.pullback(x, s, &self.m, gm, gw, grad);
        Ok(f)
    }

    fn precondition(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.len()];
        self.codec.precondition(g, &mut out);
        out
    }

    fn grad_norm(&self, g: &[f64]) -> f64 {
        let hv = self.codec.grid.cell_volume();
        (g.iter().map(|v| v * v).sum::<f64>() / hv).sqrt()
    }

    fn renormalize(&mut self, x: &mut [f64]) -> bool {
        self.codec.renormalize(x)
    }
}

/// Unit-mass Gaussian with `∫m^{1+q} = p` in `N` dimensions.
fn gaussian_with_power(grid: &GridSpec, q: f64, p: f64) -> ScalarField {
    let n = grid.dim() as f64;
    // ∫ m^{1+q} = (2πσ²)^{-Nq/2} (1+q)^{-N/2}
    let s2 = ((p * (1.0 + q).powf(n / 2.0)).powf(-2.0 / (n * q))) / (2.0 * std::f64::consts::PI);
    let m = ScalarField::from_fn(*grid, |x| {
        let r2: f64 = (0..grid.dim()).map(|k| x[k] * x[k]).sum();
        (-r2 / (2.0 * s2)).exp()
    });
    let total = grid::mass(&m);
    m.scaled(1.0 / total)
}

fn quotient_value(m: &ScalarField, w: &FluxField, hp: &HamiltonianParams) -> Result<f64> {
    crate::energy::gn_quotient(m, w, hp)
}

/// Target `∫m^{1+γ'/N}` of `m₀/M*`.
fn power_target(hp: &HamiltonianParams, dim: usize, m_star: f64) -> f64 {
    let n = dim as f64;
    ((n + hp.gamma_conj()) / n) / m_star.powf(1.0 + hp.gamma_conj() / n)
}

pub fn solve_reference(hp: &HamiltonianParams, grid: &GridSpec, cfg: &ReferenceConfig) -> Result<ReferenceSolution> {
    let dim = grid.dim();
    let gc = hp.gamma_conj();
    if gc <= dim as f64 {
        return Err(MfgError::InvalidParameter(format!(
            "gamma_conj = {gc} must exceed dim = {dim}"
        )));
    }
    let q = gc / dim as f64;
    // first guess of M* from the quotient of a Gaussian of moderate width
    let probe = gaussian_with_power(grid, q, 0.2 / grid.half_width().min(4.0));
    let mut m_star = quotient_value(&probe, &grid::grad(&probe), hp)?.powf(1.0 / q);
    let init = gaussian_with_power(grid, q, power_target(hp, dim, m_star));
    let width = {
        let p = power_target(hp, dim, m_star);
        p.powf(-1.0 / (dim as f64 * q))
    };
    let codec = Codec::new(grid, width);
    let mut x = codec.encode(&init);
    for _ in 0..cfg.outer_iterations {
        let mut obj = Quotient::new(&codec, *hp, power_target(hp, dim, m_star), cfg.penalty);
        let rep = minimize(&mut obj, x, &cfg.lbfgs)?;
        x = rep.x;
        let (m, w) = codec.decode_fields(&x);
        m_star = quotient_value(&m, &w, hp)?.powf(1.0 / q);
    }
    let (m, w) = codec.decode_fields(&x);
    let a_star = quotient_value(&m, &w, hp)?;
    m_star = a_star.powf(1.0 / q);
    let m0 = m.scaled(m_star);
    let w0 = w.scaled(m_star);
    let pw = Pow::new(q);
    let f = ScalarField {
        grid: *grid,
        values: m0.values.iter().map(|&v| -pw.apply(v)).collect(),
    };
    let vp = solve_ergodic_hjb(&f, hp, &cfg.hjb)?;
    Ok(ReferenceSolution {
        m0,
        w0,
        u0: vp.u,
        m_star,
        a_star,
        lambda0: vp.lambda,
        grid: *grid,
        hp: *hp,
    })
}

impl ReferenceSolution {
    /// `(kinetic - ∫m₀^{1+γ'/N}) / M*`, the ergodic constant from the energy identity.
    pub fn lambda_formula(&self) -> Result<f64> {
        let k = kinetic_cost(&self.m0, &self.w0, &self.hp)?;
        Ok((k - power_integral(&self.m0, &self.hp)) / self.m_star)
    }

    pub fn gamma_conj(&self) -> f64 {
        self.hp.gamma_conj()
    }

    /// Half-height width of `m₀` along the first axis.
    pub fn half_height_width(&self) -> f64 {
        half_height_width(&self.m0)
    }

    /// `ν̄_p` of the unit-mass, unit-kinetic profile `M*^{-p/γ'} ν̄_p(m₀/M*)`.
    pub fn nu_bar_unit(&self, p: f64) -> f64 {
        let m = self.m0.scaled(1.0 / self.m_star);
        minimize_moment(&m, p).nu_bar * self.m_star.powf(-p / self.gamma_conj())
    }

    /// The unit-mass, unit-kinetic profile `(t^N/M*) m₀(t(x - x₀))`,
    /// `t = M*^{1/γ'}`, sampled on `grid`.
    pub fn unit_profile_on(&self, grid: &GridSpec, x0: Point) -> ScalarField {
        let t = self.m_star.powf(1.0 / self.gamma_conj());
        self.dilated_density(grid, t, x0)
    }

    fn dilated_density(&self, grid: &GridSpec, t: f64, x0: Point) -> ScalarField {
        let dim = grid.dim();
        let c = t.powi(dim as i32) / self.m_star;
        ScalarField::from_fn(*grid, |x| {
            let mut y = [0.0; 2];
            for k in 0..dim {
                y[k] = t * (x[k] - x0[k]);
            }
            c * self.sample_m0(y)
        })
    }

    /// `m₀` at `y`, continued outside its box by a log-linear radial tail.
    pub fn sample_m0(&self, y: Point) -> f64 {
        let g = &self.grid;
        let h = g.spacing();
        let r_in = g.half_width() - 1.5 * h;
        let norm = (0..g.dim()).fold(0.0f64, |a, k| a.max(y[k].abs()));
        if norm <= r_in {
            return self.m0.sample(y);
        }
        let at = |r: f64| {
            let mut z = [0.0; 2];
            for k in 0..g.dim() {
                z[k] = y[k] * r / norm;
            }
            self.m0.sample(z)
        };
        let (a, b) = (at(r_in), at(r_in - h));
        if !(a > 0.0 && b > a) {
            return a.max(0.0);
        }
        a * (a / b).powf((norm - r_in) / h)
    }
}

/// Width at half maximum along the first axis through the peak.
pub fn half_height_width(m: &ScalarField) -> f64 {
    let g = m.grid;
    let peak = m.argmax();
    let half = 0.5 * m.values[peak];
    let ij = g.cell_ij(peak);
    let line = |i: usize| {
        let mut q = ij;
        q[0] = i;
        m.values[g.cell_index(q)]
    };
    let h = g.spacing();
    let n = g.cells();
    let mut right = g.coord(n - 1);
    for i in ij[0]..n - 1 {
        if line(i + 1) < half {
            let (a, b) = (line(i), line(i + 1));
            right = g.coord(i) + h * (a - half) / (a - b);
            break;
        }
    }
    let mut left = g.coord(0);
    for i in (1..=ij[0]).rev() {
        if line(i - 1) < half {
            let (a, b) = (line(i), line(i - 1));
            left = g.coord(i) - h * (a - half) / (a - b);
            break;
        }
    }
    right - left
}

/// Relative Pohozaev residuals `(r1, r2, r3)` of a potential-free solution
/// with ergodic constant `lambda` and coupling exponent `nu`.
pub fn pohozaev_residuals(
    m: &ScalarField,
    w: &FluxField,
    lambda: f64,
    nu: f64,
    hp: &HamiltonianParams,
) -> Result<(f64, f64, f64)> {
    let g = m.grid;
    let n = g.dim() as f64;
    let gc = hp.gamma_conj();
    let mass = grid::mass(m);
    let pw = Pow::new(nu + 1.0);
    let p = g.cell_volume() * m.values.iter().map(|&v| pw.apply(v.max(0.0))).sum::<f64>();
    let k = kinetic_cost(m, w, hp)?;
    let a = lambda * mass;
    let b = ((nu + 1.0) * gc - n * nu) / ((nu + 1.0) * gc) * p;
    let r1 = (a + b) / a.abs().max(b.abs());
    let r2 = (k - n * nu / ((nu + 1.0) * gc) * p) / k;
    // |∇u| per cell from the cell flux magnitude, w̄ = C_H γ m |∇u|^{γ-1}
    let mut ham = 0.0;
    let mx = m.max();
    for c in 0..g.num_cells() {
        let mc = m.values[c];
        if mc <= crate::energy::M_FLOOR_REL * mx {
            continue;
        }
        let mut q = 0.0;
        for ax in 0..g.dim() {
            let (lo, hi) = g.cell_faces(c, ax);
            q += 0.5 * (w.faces[ax][lo].powi(2) + w.faces[ax][hi].powi(2));
        }
        let gu = (q.sqrt() / (hp.c_h * hp.gamma * mc)).powf(1.0 / (hp.gamma - 1.0));
        ham += mc * gu.powf(hp.gamma);
    }
    ham *= (hp.gamma - 1.0) * hp.c_h * g.cell_volume();
    let r3 = (k - ham) / k;
    Ok((r1, r2, r3))
}

/// `H_{m,p}(y) = ∫ |x + y|^p m(x) dx`.
pub fn moment_functional(m: &ScalarField, p: f64, y: Point) -> f64 {
    let g = m.grid;
    let dim = g.dim();
    let s: f64 = (0..g.num_cells())
        .map(|c| {
            let x = g.center(c);
            let r2: f64 = (0..dim).map(|k| (x[k] + y[k]).powi(2)).sum();
            r2.powf(0.5 * p) * m.values[c]
        })
        .sum();
    g.cell_volume() * s
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimizes `H_{m,p}` over translations by coordinate descent with golden sections.
pub fn minimize_moment(m: &ScalarField, p: f64) -> MomentResult {
    let g = m.grid;
    let l = g.half_width();
    // start from minus the center of mass
    let total = grid::mass(m);
    let mut y = [0.0; 2];
    for k in 0..g.dim() {
        y[k] = -g.cell_volume() * (0..g.num_cells()).map(|c| g.center(c)[k] * m.values[c]).sum::<f64>() / total;
    }
    for _ in 0..50 {
        let prev = y;
        for k in 0..g.dim() {
            let lo = (y[k] - 0.5 * l).max(-l);
            let hi = (y[k] + 0.5 * l).min(l);
            let best = golden_section(
                |t| {
                    let mut z = y;
                    z[k] = t;
                    moment_functional(m, p, z)
                },
                lo,
                hi,
                1e-9,
            );
            y[k] = best;
        }
        if (0..g.dim()).all(|k| (y[k] - prev[k]).abs() < 1e-8) {
            break;
        }
    }
    MomentResult {
        p,
        nu_bar: moment_functional(m, p, y),
        y_opt: y,
    }
}

/// Mass-one rescaled pair `((t^N/M*) m₀(t(x-x₀)), (t^{N+1}/M*) w₀(t(x-x₀)))` on `grid`.
/// The flux is corrected by a gradient so the pair is exactly feasible.
pub fn rescale_reference_on(
    reference: &ReferenceSolution,
    t: f64,
    x0: Point,
    grid: &GridSpec,
) -> Result<FeasiblePair> {
    if !(t > 0.0) {
        return Err(MfgError::InvalidParameter(format!("scale t must be positive, got {t}")));
    }
    let cells = reference.half_height_width() / t / grid.spacing();
    if cells < 8.0 {
        return Err(MfgError::ScaleOutOfRange { cells });
    }
    let dim = grid.dim();
    let mut m = reference.dilated_density(grid, t, x0);
    let total = grid::mass(&m);
    if !(total > 0.0) {
        return Err(MfgError::ScaleOutOfRange { cells: 0.0 });
    }
    m = m.scaled(1.0 / total);
    let cw = t.powi(dim as i32 + 1) / reference.m_star / total;
    let mut w = FluxField::zeros(*grid);
    for a in 0..dim {
        for f in 0..grid.face_count(a) {
            if grid.face_cells(a, f).is_none() {
                continue;
            }
            let x = grid.face_center(a, f);
            let mut y = [0.0; 2];
            for k in 0..dim {
                y[k] = t * (x[k] - x0[k]);
            }
            w.faces[a][f] = cw * reference.w0.sample(a, y);
        }
    }
    Ok(crate::feasible::project_flux(m, &w))
}

pub fn rescale_reference(reference: &ReferenceSolution, t: f64, x0: Point) -> Result<FeasiblePair> {
    rescale_reference_on(reference, t, x0, &reference.grid)
}

/// Cache directory name for a reference problem.
pub fn cache_key(hp: &HamiltonianParams, grid: &GridSpec) -> String {
    format!(
        "ref-g{:.6}-ch{:.6}-d{}-n{}-L{:.6}",
        hp.gamma,
        hp.c_h,
        grid.dim(),
        grid.cells(),
        grid.half_width()
    )
}

/// Default cache root, overridable through `MFG_CACHE_DIR`.
pub fn cache_root() -> PathBuf {
    std::env::var_os("MFG_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("mfg-reference-cache"))
}

pub fn save_reference(reference: &ReferenceSolution, root: &Path) -> Result<PathBuf> {
    let dir = root.join(cache_key(&reference.hp, &reference.grid));
    fs::create_dir_all(&dir)?;
    let mut f = fs::File::create(dir.join("m0.field"))?;
    grid::write_scalar(&mut f, &reference.m0)?;
    let mut f = fs::File::create(dir.join("w0.field"))?;
    grid::write_flux(&mut f, &reference.w0)?;
    let mut f = fs::File::create(dir.join("u0.field"))?;
    grid::write_scalar(&mut f, &reference.u0)?;
    let meta = format!(
        "m_star={:.17e}\na_star={:.17e}\nlambda0={:.17e}\ngamma={:.17e}\nc_h={:.17e}\ndim={}\nn={}\nL={:.17e}\n",
        reference.m_star,
        reference.a_star,
        reference.lambda0,
        reference.hp.gamma,
        reference.hp.c_h,
        reference.grid.dim(),
        reference.grid.cells(),
        reference.grid.half_width()
    );
    fs::write(dir.join("meta.txt"), meta)?;
    Ok(dir)
}

pub fn load_reference(hp: &HamiltonianParams, grid: &GridSpec, root: &Path) -> Result<Option<ReferenceSolution>> {
    let dir = root.join(cache_key(hp, grid));
    let meta_path = dir.join("meta.txt");
    if !meta_path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&meta_path)?;
    let mut kv = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| MfgError::Parse {
            line: i + 1,
            column: 1,
            message: "expected key=value".into(),
        })?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let num = |k: &str| -> Result<f64> {
        kv.get(k)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| MfgError::SchemaMismatch {
                file: meta_path.display().to_string(),
                message: format!("missing or malformed '{k}'"),
            })
    };
    let read_s = |name: &str| -> Result<ScalarField> {
        grid::read_scalar(BufReader::new(fs::File::open(dir.join(name))?))
    };
    let m0 = read_s("m0.field")?;
    let u0 = read_s("u0.field")?;
    let w0 = grid::read_flux(BufReader::new(fs::File::open(dir.join("w0.field"))?))?;
    if m0.grid != *grid || w0.grid != *grid || u0.grid != *grid {
        return Err(MfgError::SchemaMismatch {
            file: dir.display().to_string(),
            message: "cached fields live on a different grid".into(),
        });
    }
    Ok(Some(ReferenceSolution {
        m0,
        w0,
        u0,
        m_star: num("m_star")?,
        a_star: num("a_star")?,
        lambda0: num("lambda0")?,
        grid: *grid,
        hp: *hp,
    }))
}

/// Loads the cached reference or solves and stores it; the flag reports a cache hit.
pub fn solve_reference_cached(
    hp: &HamiltonianParams,
    grid: &GridSpec,
    cfg: &ReferenceConfig,
    root: &Path,
) -> Result<(ReferenceSolution, bool)> {
    if let Some(r) = load_reference(hp, grid, root)? {
        return Ok((r, true));
    }
    let r = solve_reference(hp, grid, cfg)?;
    save_reference(&r, root)?;
    Ok((r, false))
}
