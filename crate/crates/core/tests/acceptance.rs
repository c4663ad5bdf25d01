//! Acceptance suite for the quadratic one-dimensional case. Prints one
//! PASS/FAIL line per criterion and exits nonzero if any criterion fails.
//!
//! Reference values come from a shooting solution of the profile equation
//! `ψ'' = ψ - ψ⁵` computed here, not from the library.

use std::process::ExitCode;
use std::time::Instant;

use mfg_core::asymptotics::{attractive_sweep, repulsive_sweep, BlowupRecord, RepulsiveSchedule};
use mfg_core::dual::decay_fit;
use mfg_core::energy::{gn_quotient, kinetic_cost, CouplingParams, HamiltonianParams, MfgParams, PotentialSpec};
use mfg_core::feasible::random_feasible;
use mfg_core::grid::{GridSpec, ScalarField};
use mfg_core::minimizer::{
    classify_existence, fictitious_play, initial_pair, multistart_descend, ClassifyConfig, ExistenceVerdict,
    FictitiousPlayConfig, MinimizerResult, SolverConfig,
};
use mfg_core::reference::{pohozaev_residuals, solve_reference, ReferenceConfig, ReferenceSolution};
use rayon::prelude::*;

const GC: f64 = 2.0;

fn hp() -> HamiltonianParams {
    HamiltonianParams::new(2.0, 1.0).unwrap()
}

fn well(c: f64) -> PotentialSpec {
    PotentialSpec::single([c, 0.0], 2.0, 1.0)
}

fn params(coupling: CouplingParams, v1: PotentialSpec, v2: PotentialSpec) -> MfgParams {
    MfgParams { hamiltonian: hp(), coupling, potential1: v1, potential2: v2 }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Ground state of `ψ'' = ψ - ψ⁵` on `y ≥ 0`, tabulated with its derivative.
struct Shooting {
    step: f64,
    psi: Vec<f64>,
    dpsi: Vec<f64>,
}

fn rk4(b: f64, step: f64, steps: usize, mut visit: impl FnMut(f64, f64) -> bool) {
    let f = |p: f64, q: f64| (q, p - p.powi(5));
    let (mut p, mut q) = (b, 0.0);
    for _ in 0..steps {
        if !visit(p, q) {
            return;
        }
        let (k1p, k1q) = f(p, q);
        let (k2p, k2q) = f(p + 0.5 * step * k1p, q + 0.5 * step * k1q);
        let (k3p, k3q) = f(p + 0.5 * step * k2p, q + 0.5 * step * k2q);
        let (k4p, k4q) = f(p + step * k3p, q + step * k3q);
        p += step / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        q += step / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
    }
    visit(p, q);
}

impl Shooting {
    fn solve() -> Self {
        let step = 1e-3;
        let steps = 14_000;
        // too large a start crosses zero; too small turns back up
        let (mut lo, mut hi) = (1.0, 1.6);
        while hi - lo > 1e-15 {
            let b = 0.5 * (lo + hi);
            let mut overshoot = None;
            rk4(b, step, steps, |p, q| {
                if p < 0.0 {
                    overshoot = Some(true);
                } else if q > 0.0 {
                    overshoot = Some(false);
                }
                overshoot.is_none()
            });
            match overshoot {
                Some(true) => hi = b,
                Some(false) => lo = b,
                None => break,
            }
        }
        let b = 0.5 * (lo + hi);
        // the separatrix is unstable, so keep only the part that still decays
        let mut psi = Vec::new();
        let mut dpsi = Vec::new();
        rk4(b, step, 11_000, |p, q| {
            psi.push(p);
            dpsi.push(q);
            true
        });
        Self { step, psi, dpsi }
    }

    fn at(&self, y: f64) -> f64 {
        let y = y.abs();
        let last = self.psi.len() - 1;
        let t = y / self.step;
        if t >= last as f64 {
            return self.psi[last] * (-(y - last as f64 * self.step)).exp();
        }
        let i = t as usize;
        let s = t - i as f64;
        let h = self.step;
        let (p0, p1, d0, d1) = (self.psi[i], self.psi[i + 1], self.dpsi[i], self.dpsi[i + 1]);
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * h * d1
    }

    /// `2∫₀^∞ g(ψ, ψ', y) dy` by Simpson's rule on the table.
    fn integral(&self, g: impl Fn(f64, f64, f64) -> f64) -> f64 {
        let n = (self.psi.len() - 1) & !1;
        let mut s = 0.0;
        for i in 0..=n {
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(self.psi[i], self.dpsi[i], i as f64 * self.step);
        }
        2.0 * s * self.step / 3.0
    }
}

/// Constants of the quadratic one-dimensional reference problem.
struct Oracle {
    shot: Shooting,
    m_star: f64,
    a_star: f64,
    k: f64,
    /// Second moment of the unit-mass, unit-kinetic profile.
    nu_bar2: f64,
}

impl Oracle {
    fn new() -> Self {
        let shot = Shooting::solve();
        let m_star = shot.integral(|p, _, _| p * p);
        let k = shot.integral(|_, q, _| q * q).powf(-0.5);
        // kinetic 1, mass M*, and ∫m₀³ = k² ∫ψ⁶
        let a_star = m_star.powf(GC) / (k * k * shot.integral(|p, _, _| p.powi(6)) / 3.0);
        let var = shot.integral(|p, _, y| y * y * p * p) / m_star / (k * k);
        Self { shot, m_star, a_star, k, nu_bar2: var / m_star }
    }

    fn m0(&self, x: f64) -> f64 {
        self.k * self.shot.at(self.k * x).powi(2)
    }

    /// Unit-mass, unit-kinetic profile.
    fn unit(&self, y: f64) -> f64 {
        let t = self.m_star.sqrt();
        t * self.m0(t * y) / self.m_star
    }

    fn eps_attractive(&self, delta: f64) -> f64 {
        let (p0, mu) = (2.0, 2.0);
        (2.0 * GC * delta / (p0 * mu * self.nu_bar2 * self.a_star)).powf(1.0 / (GC + p0))
    }

    /// Single-population lemma and theorem readings for `V = |x - x_i|²`.
    fn eps_repulsive(&self, delta: f64) -> (f64, f64) {
        let (b, q) = (1.0, 2.0);
        let lemma = (GC * delta / (self.a_star * b * self.nu_bar2 * q)).powf(1.0 / (GC + q));
        (lemma, lemma.powf(1.0 / GC))
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn(&Ctx) -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Ctx {
    oracle: Oracle,
    ref512: ReferenceSolution,
    ref1024: ReferenceSolution,
    attractive: Vec<BlowupRecord>,
    repulsive: Vec<BlowupRecord>,
    repulsive_grid: GridSpec,
    interior: Vec<(CouplingParams, MinimizerResult)>,
}

fn reference(n: usize) -> ReferenceSolution {
    solve_reference(&hp(), &GridSpec::new(1, 12.0, n).unwrap(), &ReferenceConfig::default()).unwrap()
}

fn usable(records: &[BlowupRecord]) -> Vec<&BlowupRecord> {
    records.iter().filter(|r| r.usable()).collect()
}

fn gn_inequality(c: &Ctx) -> Outcome {
    let r = &c.ref512;
    let worst = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let p = random_feasible(seed, &r.grid, 0.002 * (1 + seed % 10) as f64);
            (r.a_star - gn_quotient(&p.m, &p.w, &r.hp).unwrap()) / r.a_star
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    outcome(worst < 1e-6, format!("largest relative violation over 200 pairs {worst:.3e}"))
}

/// `λM + (2/3)∫m³`, `K - (1/3)∫m³` relative, and the library's third residual.
fn pohozaev(r: &ReferenceSolution) -> [f64; 3] {
    let h = r.grid.spacing();
    let mass: f64 = h * r.m0.values.iter().sum::<f64>();
    let p: f64 = h * r.m0.values.iter().map(|m| m.powi(3)).sum::<f64>();
    let a = r.lambda0 * mass;
    let b = 2.0 / 3.0 * p;
    let k = kinetic_cost(&r.m0, &r.w0, &r.hp).unwrap();
    let (_, _, r3) = pohozaev_residuals(&r.m0, &r.w0, r.lambda0, 2.0, &r.hp).unwrap();
    [(a + b) / a.abs().max(b.abs()), (k - p / 3.0) / k, r3]
}

fn pohozaev_identities(c: &Ctx) -> Outcome {
    let coarse = pohozaev(&c.ref512);
    let fine = pohozaev(&c.ref1024);
    let small = coarse.iter().all(|r| r.abs() < 1e-3);
    // residuals already at round-off cannot decrease further
    let decreasing = coarse.iter().zip(&fine).all(|(a, b)| b.abs() < a.abs() || b.abs().max(a.abs()) < 1e-12);
    outcome(
        small && decreasing && fine.iter().all(|r| r.abs() < 1e-3),
        format!(
            "n=512 ({:.2e}, {:.2e}, {:.2e}), n=1024 ({:.2e}, {:.2e}, {:.2e})",
            coarse[0], coarse[1], coarse[2], fine[0], fine[1], fine[2]
        ),
    )
}

fn shooting_oracle(c: &Ctx) -> Outcome {
    let r = &c.ref1024;
    let o = &c.oracle;
    let h = r.grid.spacing();
    let l1: f64 = (0..r.grid.num_cells()).map(|i| (r.m0.values[i] - o.m0(r.grid.center(i)[0])).abs()).sum::<f64>() * h;
    let (dm, da) = (rel(r.m_star, o.m_star), rel(r.a_star, o.a_star));
    outcome(
        l1 < 1e-3 && dm < 5e-3 && da < 5e-3,
        format!(
            "L1 {l1:.3e}; M* {:.6} vs {:.6}; a* {:.6} vs {:.6}",
            r.m_star, o.m_star, r.a_star, o.a_star
        ),
    )
}

#[derive(Debug, PartialEq)]
enum Region {
    Exists,
    None,
}

/// Equal self-couplings `α`: minimizers exist iff `α < a*` and `β < a* - α`.
fn region(alpha: f64, beta: f64, a: f64) -> (Region, f64) {
    let dist = (alpha - a).abs().min((alpha + beta - a).abs() / 2f64.sqrt());
    let r = if alpha < a && beta < a - alpha { Region::Exists } else { Region::None };
    (r, dist)
}

fn phase_diagram(c: &Ctx) -> Outcome {
    let r = &c.ref1024;
    let a = r.a_star;
    let grid = GridSpec::new(1, 4.0, 256).unwrap();
    let alphas = [0.1, 0.3, 0.5, 0.7, 0.9, 1.1, 1.3];
    let betas = [-0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6];
    let points: Vec<(f64, f64)> = alphas.iter().flat_map(|&x| betas.iter().map(move |&y| (x * a, y * a))).collect();
    let cfg = ClassifyConfig::default();
    let results: Vec<(bool, bool, String)> = points
        .par_iter()
        .map(|&(alpha, beta)| {
            let coupling = CouplingParams { alpha1: alpha, alpha2: alpha, beta };
            let verdict = classify_existence(&params(coupling, well(0.0), well(0.0)), r, &grid, &cfg);
            let (expected, dist) = region(alpha, beta, a);
            let exists = matches!(verdict, ExistenceVerdict::Exists(_));
            let ok = exists == (expected == Region::Exists);
            (dist > 0.05 * a, ok, format!("({:.2}, {:.2}) {}", alpha / a, beta / a, verdict.label()))
        })
        .collect();
    let counted: Vec<_> = results.iter().filter(|r| r.0).collect();
    let bad: Vec<&str> = counted.iter().filter(|r| !r.1).map(|r| r.2.as_str()).collect();
    outcome(
        bad.is_empty() && !counted.is_empty(),
        format!("{}/{} points agree{}", counted.len() - bad.len(), counted.len(), if bad.is_empty() { String::new() } else { format!("; wrong: {}", bad.join(", ")) }),
    )
}

/// Least-squares `log y = s log x + log c`; returns `(s, c)`.
fn power_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let s = sxy / sxx;
    (s, (my - s * mx).exp())
}

fn attractive_rate(c: &Ctx) -> Outcome {
    let pts = usable(&c.attractive);
    if pts.len() < 4 {
        return outcome(false, format!("only {} usable points", pts.len()));
    }
    let d: Vec<f64> = pts.iter().map(|r| r.delta[0]).collect();
    let span = (d[0] / d[d.len() - 1]).log10();
    let pre = c.oracle.eps_attractive(1.0);
    let mut ok = span >= 1.5;
    let mut detail = format!("{} points over {span:.2} decades", pts.len());
    for i in 0..2 {
        let e: Vec<f64> = pts.iter().map(|r| r.eps_measured[i]).collect();
        let (s, p) = power_fit(&d, &e);
        ok &= rel(s, 0.25) < 0.1 && rel(p, pre) < 0.2;
        detail += &format!("; eps{} slope {s:.4} prefactor {p:.4}", i + 1);
    }
    outcome(ok, detail + &format!(" (predicted 0.25, {pre:.4})"))
}

fn lambda_scaling(c: &Ctx) -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, records) in [("attractive", &c.attractive), ("repulsive", &c.repulsive)] {
        match usable(records).last() {
            Some(r) => {
                ok &= r.lambda_eps_gamma.iter().all(|v| rel(*v, -GC) < 0.05);
                detail.push(format!("{name} ({:.4}, {:.4})", r.lambda_eps_gamma[0], r.lambda_eps_gamma[1]));
            }
            None => {
                ok = false;
                detail.push(format!("{name} has no usable point"));
            }
        }
    }
    outcome(ok, format!("lambda eps^gamma' vs -2: {}", detail.join(", ")))
}

fn symmetrization(c: &Ctx) -> Outcome {
    let pts = usable(&c.attractive);
    if pts.is_empty() {
        return outcome(false, "no usable point");
    }
    let sq: Vec<f64> = pts.iter().map(|r| r.sq_diff).collect();
    let kr: Vec<f64> = pts.iter().map(|r| (r.kinetic_ratio - 1.0).abs()).collect();
    let mono = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let (s, k) = (sq[sq.len() - 1], kr[kr.len() - 1]);
    outcome(
        mono(&sq) && mono(&kr) && s < 0.05 && k < 0.05,
        format!("square difference {:.2e} -> {s:.2e}, kinetic ratio offset {:.2e} -> {k:.2e}", sq[0], kr[0]),
    )
}

/// `∫|m(x) - Q((x - c)/ε)/ε| dx` with `c` the center of mass of `m`.
fn profile_l1(m: &ScalarField, eps: f64, o: &Oracle) -> f64 {
    let g = m.grid;
    let h = g.spacing();
    let total: f64 = m.values.iter().sum::<f64>();
    let c = (0..g.num_cells()).map(|i| g.center(i)[0] * m.values[i]).sum::<f64>() / total;
    (0..g.num_cells()).map(|i| (m.values[i] - o.unit((g.center(i)[0] - c) / eps) / eps).abs()).sum::<f64>() * h
}

fn repulsive_separation(c: &Ctx) -> Outcome {
    let Some(r) = usable(&c.repulsive).last().copied() else { return outcome(false, "no usable point") };
    let Some(state) = &r.state else { return outcome(false, "no state recorded") };
    let h = c.repulsive_grid.spacing();
    let off = [(r.x_conc[0][0] + 1.0).abs(), (r.x_conc[1][0] - 1.0).abs()];
    let l1 = [0, 1].map(|i| profile_l1(&state.m[i], r.eps_measured[i], &c.oracle));
    outcome(
        r.overlap < 1e-4 && off.iter().all(|d| *d < 2.0 * h) && l1.iter().all(|d| *d < 0.05),
        format!(
            "overlap {:.2e}; offsets {:.2e}, {:.2e} (2h {:.2e}); profile L1 {:.2e}, {:.2e}",
            r.overlap,
            off[0],
            off[1],
            2.0 * h,
            l1[0],
            l1[1]
        ),
    )
}

fn rate_adjudication(c: &Ctx) -> Outcome {
    let pts = usable(&c.repulsive);
    if pts.is_empty() {
        return outcome(false, "no usable point");
    }
    let (mut lemma, mut theorem) = (0.0f64, 0.0f64);
    for r in &pts {
        for i in 0..2 {
            let (l, t) = c.oracle.eps_repulsive(r.delta[i]);
            lemma = lemma.max(rel(r.eps_measured[i], l));
            theorem = theorem.max(rel(r.eps_measured[i], t));
        }
    }
    let verdict = match (lemma < 0.15, theorem < 0.15) {
        (true, false) => "eps = (gamma'(a*-alpha)/(a* b nu q))^(1/(gamma'+q)) matches",
        (false, true) => "the same expression to the power 1/gamma' matches",
        (true, true) => "both readings match",
        (false, false) => "neither reading matches",
    };
    outcome(
        (lemma < 0.15) != (theorem < 0.15),
        format!("{verdict}; worst deviation {lemma:.3} vs {theorem:.3} over {} points", pts.len()),
    )
}

fn decay(c: &Ctx) -> Outcome {
    let d = decay_fit(&c.ref1024.m0).unwrap();
    let mut ok = d.r2 > 0.99 && (d.delta0 - 1.0).abs() <= 0.05;
    let mut detail = format!(
        "reference kappa {:.4} (exact {:.4}) delta0 {:.3} r2 {:.5}",
        d.kappa,
        2.0 * c.oracle.k,
        d.delta0,
        d.r2
    );
    let mut worst = f64::INFINITY;
    for (_, res) in &c.interior {
        for s in &res.state {
            match decay_fit(&s.m) {
                Ok(f) => {
                    ok &= f.r2 > 0.95 && f.delta0 > 0.0 && f.delta0 <= 1.0;
                    worst = worst.min(f.r2);
                }
                Err(e) => {
                    ok = false;
                    detail += &format!("; {e}");
                }
            }
        }
    }
    detail += &format!("; coupled states lowest r2 {worst:.4}");
    outcome(ok, detail)
}

fn cross_validation(c: &Ctx) -> Outcome {
    let grid = c.interior[0].1.state[0].grid();
    let worst = c
        .interior
        .par_iter()
        .map(|(coupling, d)| {
            let p = params(*coupling, well(0.0), well(0.0));
            let init = initial_pair(&p, &c.ref512, &grid, 11).unwrap();
            match fictitious_play(&p, &init, &FictitiousPlayConfig::default()) {
                Ok(f) => rel(f.energy(), d.energy()),
                Err(_) => f64::INFINITY,
            }
        })
        .reduce(|| 0.0, f64::max);
    outcome(worst < 1e-3, format!("largest relative energy gap over {} configurations {worst:.2e}", c.interior.len()))
}

fn setup() -> Ctx {
    let (ref512, ref1024) = rayon::join(|| reference(512), || reference(1024));
    let oracle = Oracle::new();
    let a = ref1024.a_star;
    let cfg = SolverConfig::default();

    let attractive = {
        let grid = GridSpec::new(1, 4.0, 1024).unwrap();
        let base = params(CouplingParams { beta: 0.3 * a, ..Default::default() }, well(0.0), well(0.0));
        let deltas: Vec<f64> = (0..6).map(|k| 0.1 * a / 2f64.powi(k)).collect();
        attractive_sweep(&base, &ref1024, &grid, &deltas, 0.5, &cfg).unwrap()
    };

    let repulsive_grid = GridSpec::new(1, 3.0, 512).unwrap();
    let repulsive = {
        let base = params(CouplingParams { beta: -0.5, ..Default::default() }, well(-1.0), well(1.0));
        let deltas: Vec<f64> = (0..6).map(|k| 0.1 * a / 2f64.powi(k)).collect();
        repulsive_sweep(&base, &ref1024, &repulsive_grid, &deltas, RepulsiveSchedule::default(), &cfg).unwrap()
    };

    let grid = GridSpec::new(1, 4.0, 256).unwrap();
    let a512 = ref512.a_star;
    let interior = [(0.3, 0.3, 0.1), (0.6, 0.4, -0.2), (0.5, 0.3, 0.2), (0.2, 0.7, -0.5), (0.8, 0.1, 0.0)]
        .par_iter()
        .map(|&(a1, a2, b)| {
            let coupling = CouplingParams { alpha1: a1 * a512, alpha2: a2 * a512, beta: b * a512 };
            let p = params(coupling, well(0.0), well(0.0));
            (coupling, multistart_descend(&p, &ref512, &grid, &cfg).unwrap())
        })
        .collect();

    Ctx { oracle, ref512, ref1024, attractive, repulsive, repulsive_grid, interior }
}

fn main() -> ExitCode {
    // libtest flags are passed through by `cargo test`; only a name filter is honoured
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    if filter.as_deref().is_some_and(|f| !"acceptance".contains(f)) {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let ctx = setup();
    println!(
        "setup: references, sweeps and interior solves in {:.1} s; shooting M* {:.6} a* {:.6} nu_bar_2 {:.6}",
        start.elapsed().as_secs_f64(),
        ctx.oracle.m_star,
        ctx.oracle.a_star,
        ctx.oracle.nu_bar2
    );
    let criteria: [Criterion; 11] = [
        ("gn_inequality", gn_inequality),
        ("pohozaev_identities", pohozaev_identities),
        ("shooting_oracle", shooting_oracle),
        ("phase_diagram", phase_diagram),
        ("attractive_rate", attractive_rate),
        ("lambda_scaling", lambda_scaling),
        ("symmetrization", symmetrization),
        ("repulsive_separation", repulsive_separation),
        ("rate_adjudication", rate_adjudication),
        ("decay", decay),
        ("cross_validation", cross_validation),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run(&ctx);
        failed += usize::from(!o.pass);
        println!(
            "{} {:>2} {name}: {} ({:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            k + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed in {:.1} s", criteria.len() - failed, criteria.len(), start.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
