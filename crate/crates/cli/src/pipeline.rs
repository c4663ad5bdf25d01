//! One function per subcommand: solve, write files, assemble the report.

use std::path::{Path, PathBuf};

use mfg_core::asymptotics::{
    attractive_sweep, energy_upper_bound_check, fit_records, phase_diagram, predicted_eps_attractive,
    predicted_eps_repulsive, repulsive_sweep, rescaled_profile, select_flattest, theorem_region, verdict_agrees,
    BlowupRecord, RepulsiveSchedule,
};
use mfg_core::dual::decay_fit;
use mfg_core::energy::{gn_quotient, HamiltonianParams, MfgParams};
use mfg_core::feasible::{project, random_feasible};
use mfg_core::grid::{self, FluxField, GridSpec, ScalarField};
use mfg_core::minimizer::{
    continuation_solve, fictitious_play, linear_schedule, potential_minima, ClassifyConfig, FictitiousPlayConfig,
    MinimizerResult,
};
use mfg_core::reference::{
    cache_key, cache_root, pohozaev_residuals, solve_reference_cached, ReferenceConfig, ReferenceSolution,
};
use mfg_core::{MfgError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{config_hash, load_config, Couplings, Experiment, RunConfig};
use crate::output::{
    emit_plot, point_cell, render_report, unix_now, versions, write_manifest, AttractiveRow, CheckLine, CsvKind,
    OutputDir, PhaseRow, ProfileRow, RateAnnotation, RepulsiveRow, RunManifest, Status,
};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum Failure {
    Validation(MfgError),
    Solver(MfgError),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Solver(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Validation(e) => write!(f, "invalid configuration: {e}"),
            Self::Solver(e) => write!(f, "solver failure: {e}"),
        }
    }
}

fn classify(e: MfgError) -> Failure {
    match e {
        MfgError::Validation(_) | MfgError::Parse { .. } | MfgError::InvalidParameter(_) | MfgError::InvalidGrid(_) => {
            Failure::Validation(e)
        }
        e => Failure::Solver(e),
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub checks: Vec<CheckLine>,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != Status::Fail)
    }
}

struct Ctx {
    cfg: RunConfig,
    hp: HamiltonianParams,
    grid: GridSpec,
    out: OutputDir,
    checks: Vec<CheckLine>,
    warnings: Vec<String>,
    cache_key: Option<String>,
    cache_hit: Option<bool>,
}

impl Ctx {
    fn reference(&mut self) -> Result<ReferenceSolution> {
        let rg = self.cfg.reference_grid()?;
        let (r, hit) = solve_reference_cached(&self.hp, &rg, &ReferenceConfig::default(), &cache_root())?;
        self.cache_key = Some(cache_key(&self.hp, &rg));
        self.cache_hit = Some(hit);
        Ok(r)
    }

    fn params(&self) -> MfgParams {
        MfgParams {
            hamiltonian: self.hp,
            coupling: Default::default(),
            potential1: self.cfg.potentials[0].clone(),
            potential2: self.cfg.potentials[1].clone(),
        }
    }

    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(CheckLine::new(name, pass, detail));
    }

    fn plot(&mut self, csv: &Path, kind: CsvKind, rate: Option<RateAnnotation>) -> Result<()> {
        let (_, warn) = emit_plot(&mut self.out, csv, kind, rate)?;
        self.warnings.extend(warn);
        Ok(())
    }
}

/// Runs `command` with the configuration in `opts.config`.
pub fn run(command: Experiment, opts: &RunOptions) -> std::result::Result<RunOutcome, Failure> {
    let started = unix_now();
    let (mut cfg, text) = load_config(&opts.config).map_err(classify)?;
    if !matches!(command, Experiment::Reference | Experiment::Validate) && cfg.experiment != command {
        return Err(Failure::Validation(MfgError::Validation(format!(
            "config is for experiment '{}' but the command is '{}'",
            cfg.experiment.name(),
            command.name()
        ))));
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.solver.seed = cfg.seed;
    let hash = config_hash(&text).map_err(classify)?;
    let out_dir = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let out = OutputDir::create(&out_dir).map_err(Failure::Solver)?;
    let mut ctx = Ctx {
        hp: cfg.hamiltonian().map_err(classify)?,
        grid: cfg.grid().map_err(classify)?,
        cfg,
        out,
        checks: Vec::new(),
        warnings: Vec::new(),
        cache_key: None,
        cache_hit: None,
    };
    let result = match command {
        Experiment::Reference => run_reference(&mut ctx),
        Experiment::Solve => run_solve(&mut ctx),
        Experiment::PhaseDiagram => run_phase(&mut ctx),
        Experiment::SweepAttractive => run_attractive(&mut ctx),
        Experiment::SweepRepulsive => run_repulsive(&mut ctx),
        Experiment::Validate => run_validate(&mut ctx),
    };
    result.map_err(classify)?;
    let report = render_report(command.name(), &ctx.checks);
    ctx.out.write_bytes("report.txt", report.as_bytes()).map_err(Failure::Solver)?;
    let manifest = RunManifest {
        command: command.name().into(),
        config_path: opts.config.display().to_string(),
        config_hash: hash,
        versions: versions(),
        started_unix: started,
        finished_unix: unix_now(),
        seed: ctx.cfg.seed,
        threads: opts.threads,
        reference_cache_key: ctx.cache_key.clone(),
        reference_cache_hit: ctx.cache_hit,
        outputs: Vec::new(),
    };
    write_manifest(&mut ctx.out, manifest).map_err(Failure::Solver)?;
    Ok(RunOutcome { out_dir, checks: ctx.checks, warnings: ctx.warnings })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn reference_checks(ctx: &mut Ctx, r: &ReferenceSolution) -> Result<()> {
    let dim = r.grid.dim() as f64;
    let nu = r.gamma_conj() / dim;
    let (r1, r2, r3) = pohozaev_residuals(&r.m0, &r.w0, r.lambda0, nu, &r.hp)?;
    let worst = r1.abs().max(r2.abs()).max(r3.abs());
    ctx.check("pohozaev", worst < 1e-3, format!("r1 {r1:.3e} r2 {r2:.3e} r3 {r3:.3e}"));
    let lf = r.lambda_formula()?;
    ctx.check(
        "lambda0",
        rel(r.lambda0, lf) < 1e-3,
        format!("HJB {:.8} vs energy identity {lf:.8}", r.lambda0),
    );
    let scaled = r.lambda0 * r.m_star * dim / r.gamma_conj();
    ctx.check("lambda0_scaling", (scaled + 1.0).abs() < 1e-3, format!("lambda0 M* N/gamma' = {scaled:.6}"));
    match decay_fit(&r.m0) {
        Ok(d) => ctx.check(
            "reference_decay",
            d.r2 > 0.99 && d.delta0 > 0.0 && d.delta0 <= 1.0,
            format!("kappa {:.4} delta0 {:.3} r2 {:.5}", d.kappa, d.delta0, d.r2),
        ),
        Err(e) => ctx.check("reference_decay", false, e.to_string()),
    }
    Ok(())
}

fn run_reference(ctx: &mut Ctx) -> Result<()> {
    let r = ctx.reference()?;
    ctx.out.write_scalar("reference_m0.field", &r.m0)?;
    ctx.out.write_flux("reference_w0.field", &r.w0)?;
    ctx.out.write_scalar("reference_u0.field", &r.u0)?;
    ctx.checks.push(CheckLine::skip(
        "constants",
        format!("M* {:.8} a* {:.8} lambda0 {:.8} cache hit {}", r.m_star, r.a_star, r.lambda0, ctx.cache_hit == Some(true)),
    ));
    reference_checks(ctx, &r)
}

#[derive(Serialize)]
struct SolveRow {
    alpha1: f64,
    alpha2: f64,
    beta: f64,
    energy: f64,
    kinetic1: f64,
    kinetic2: f64,
    eps1: f64,
    eps2: f64,
    lambda1: f64,
    lambda2: f64,
    x1: String,
    x2: String,
    converged: bool,
    iterations: usize,
    grad_norm: f64,
    fp_residual: f64,
}

fn write_state(ctx: &mut Ctx, r: &MinimizerResult, prefix: &str) -> Result<()> {
    for (i, s) in r.state.iter().enumerate() {
        ctx.out.write_scalar(&format!("{prefix}m{}.field", i + 1), &s.m)?;
        ctx.out.write_flux(&format!("{prefix}w{}.field", i + 1), &s.w)?;
    }
    Ok(())
}

fn run_solve(ctx: &mut Ctx) -> Result<()> {
    let r = ctx.reference()?;
    let coupling = ctx.cfg.couplings.as_ref().and_then(|c| c.point(r.a_star)).expect("validated");
    let params = MfgParams { coupling, ..ctx.params() };
    let mut solver = ctx.cfg.solver.clone();
    if solver.continuation.is_empty() {
        solver.continuation = linear_schedule(&coupling, 3);
    }
    let res = continuation_solve(&params, &r, &ctx.grid, &solver)?;
    let dim = ctx.grid.dim();
    let row = SolveRow {
        alpha1: coupling.alpha1,
        alpha2: coupling.alpha2,
        beta: coupling.beta,
        energy: res.energy(),
        kinetic1: res.breakdown.kinetic_1,
        kinetic2: res.breakdown.kinetic_2,
        eps1: res.eps[0],
        eps2: res.eps[1],
        lambda1: res.lambda[0],
        lambda2: res.lambda[1],
        x1: point_cell(res.x_conc[0], dim),
        x2: point_cell(res.x_conc[1], dim),
        converged: res.converged,
        iterations: res.iterations,
        grad_norm: res.residuals.grad_norm,
        fp_residual: res.residuals.fp[0].max(res.residuals.fp[1]),
    };
    ctx.out.write_csv("solve.csv", &[row])?;
    write_state(ctx, &res, "")?;
    ctx.check("converged", res.converged, format!("{} iterations, grad {:.2e}", res.iterations, res.residuals.grad_norm));
    let fp = res.residuals.fp[0].max(res.residuals.fp[1]);
    let mass = res.residuals.mass_error[0].max(res.residuals.mass_error[1]);
    ctx.check("feasible", fp < 1e-8 && mass < 1e-10, format!("fp {fp:.2e} mass {mass:.2e}"));
    match fictitious_play(&params, &res.state, &FictitiousPlayConfig::default()) {
        Ok(f) => {
            let d = rel(f.energy(), res.energy());
            ctx.check("cross_validation", d < 1e-3, format!("descend {:.10} fictitious play {:.10} rel {d:.2e}", res.energy(), f.energy()));
        }
        Err(e) => ctx.check("cross_validation", false, e.to_string()),
    }
    for (i, s) in res.state.iter().enumerate() {
        let name = format!("decay_m{}", i + 1);
        match decay_fit(&s.m) {
            Ok(d) => ctx.check(
                &name,
                d.r2 > 0.95 && d.delta0 > 0.0 && d.delta0 <= 1.0,
                format!("kappa {:.4} delta0 {:.3} r2 {:.5}", d.kappa, d.delta0, d.r2),
            ),
            Err(e) => ctx.checks.push(CheckLine::skip(&name, e.to_string())),
        }
    }
    Ok(())
}

fn run_phase(ctx: &mut Ctx) -> Result<()> {
    let r = ctx.reference()?;
    let Some(Couplings::Grid { units, alpha, beta }) = ctx.cfg.couplings.clone() else { unreachable!("validated") };
    let s = units.scale(r.a_star);
    let alphas: Vec<(f64, f64)> = alpha.iter().map(|a| (a.pair().0 * s, a.pair().1 * s)).collect();
    let betas: Vec<f64> = beta.iter().map(|b| b * s).collect();
    let cfg = ClassifyConfig { solver: ctx.cfg.solver.clone(), ..Default::default() };
    let pts = phase_diagram(&ctx.params(), &r, &ctx.grid, &alphas, &betas, &cfg);
    let rows: Vec<PhaseRow> = pts
        .iter()
        .map(|p| PhaseRow {
            alpha1: p.coupling.alpha1,
            alpha2: p.coupling.alpha2,
            beta: p.coupling.beta,
            verdict: p.verdict.label().into(),
        })
        .collect();
    let path = ctx.out.write_csv("phase_diagram.csv", &rows)?;
    ctx.plot(&path, CsvKind::Phase, None)?;
    let (mut total, mut agree) = (0, 0);
    for p in &pts {
        let (region, d) = theorem_region(&p.coupling, r.a_star);
        if d > 0.05 * r.a_star {
            total += 1;
            if verdict_agrees(region, &p.verdict) {
                agree += 1;
            } else {
                ctx.warnings.push(format!(
                    "({:.4}, {:.4}, {:.4}): expected {region:?}, got {}",
                    p.coupling.alpha1,
                    p.coupling.alpha2,
                    p.coupling.beta,
                    p.verdict.label()
                ));
            }
        }
    }
    ctx.check("phase_agreement", agree == total, format!("{agree}/{total} points away from the critical curves agree"));
    Ok(())
}

fn profile_rows(rec: &BlowupRecord, r: &ReferenceSolution) -> Option<Vec<ProfileRow>> {
    let state = rec.state.as_ref()?;
    if r.grid.dim() != 1 {
        return None;
    }
    let unit = r.unit_profile_on(&r.grid, [0.0; 2]);
    let p = [0, 1].map(|i| rescaled_profile(&state.m[i], rec.eps_measured[i], &r.grid));
    Some(
        (0..r.grid.num_cells())
            .map(|c| ProfileRow { x: r.grid.center(c)[0], m1: p[0].values[c], m2: p[1].values[c], reference: unit.values[c] })
            .collect(),
    )
}

fn smallest_usable(records: &[BlowupRecord]) -> Option<&BlowupRecord> {
    records.iter().rev().find(|r| r.usable())
}

fn failures(ctx: &mut Ctx, records: &[BlowupRecord]) {
    let usable = records.iter().filter(|r| r.usable()).count();
    for (k, rec) in records.iter().enumerate() {
        if let Some(e) = &rec.error {
            ctx.warnings.push(format!("point {k} (delta {:?}) failed: {e}", rec.delta));
        } else if rec.flagged {
            ctx.warnings.push(format!("point {k} (delta {:?}) under-resolved", rec.delta));
        }
    }
    ctx.checks.push(CheckLine::skip("points", format!("{usable} of {} usable", records.len())));
}

fn lambda_check(ctx: &mut Ctx, rec: &BlowupRecord) {
    let target = -ctx.hp.gamma_conj() / ctx.grid.dim() as f64;
    let worst = rec.lambda_eps_gamma.iter().map(|v| rel(*v, target)).fold(0.0, f64::max);
    ctx.check(
        "lambda_scaling",
        worst < 0.05,
        format!("lambda eps^gamma' = {:.4}, {:.4} vs {target}", rec.lambda_eps_gamma[0], rec.lambda_eps_gamma[1]),
    );
}

fn dump_smallest(ctx: &mut Ctx, records: &[BlowupRecord], r: &ReferenceSolution, name: &str) -> Result<()> {
    let Some(rec) = smallest_usable(records) else { return Ok(()) };
    if let Some(rows) = profile_rows(rec, r) {
        let path = ctx.out.write_csv(name, &rows)?;
        ctx.plot(&path, CsvKind::Profile, None)?;
    }
    if let Some(state) = &rec.state {
        let stem = name.trim_end_matches(".csv");
        for i in 0..2 {
            ctx.out.write_scalar(&format!("{stem}_m{}.field", i + 1), &state.m[i])?;
        }
    }
    Ok(())
}

fn run_attractive(ctx: &mut Ctx) -> Result<()> {
    let r = ctx.reference()?;
    let Some(Couplings::AttractiveSweep { units, beta, deltas, asymmetry }) = ctx.cfg.couplings.clone() else {
        unreachable!("validated")
    };
    let s = units.scale(r.a_star);
    let beta = beta * s;
    let deltas: Vec<f64> = deltas.iter().map(|d| d * s).collect();
    for d in &deltas {
        let low = r.a_star - beta - d * (1.0 + asymmetry);
        if !(low > 0.0) {
            return Err(MfgError::Validation(format!("alpha1 must be positive, delta {d} gives {low}")));
        }
    }
    let base = MfgParams { coupling: mfg_core::energy::CouplingParams { beta, ..Default::default() }, ..ctx.params() };
    let sel = select_flattest(&base.potential1, &base.potential2, ctx.grid.dim())?;
    let records = attractive_sweep(&base, &r, &ctx.grid, &deltas, asymmetry, &ctx.cfg.solver)?;
    let dim = ctx.grid.dim();
    let rows: Vec<AttractiveRow> = records
        .iter()
        .map(|rec| AttractiveRow {
            delta: rec.delta[0],
            eps_measured: rec.eps_measured[0],
            eps_predicted: rec.eps_predicted[0],
            lambda1_eps_g: rec.lambda_eps_gamma[0],
            lambda2_eps_g: rec.lambda_eps_gamma[1],
            sq_diff: rec.sq_diff,
            overlap: rec.overlap,
            x1: point_cell(rec.x_conc[0], dim),
            x2: point_cell(rec.x_conc[1], dim),
            converged: rec.converged && rec.error.is_none(),
        })
        .collect();
    let path = ctx.out.write_csv("blowup_attractive.csv", &rows)?;
    failures(ctx, &records);
    let gc = r.gamma_conj();
    let slope = 1.0 / (gc + sel.p0);
    let prefactor = predicted_eps_attractive(1.0, &r, &sel);
    let fit = fit_records(&records, 0);
    match &fit {
        Ok(f) => {
            ctx.check("rate_slope", rel(f.slope, slope) < 0.1, format!("fitted {:.4} +- {:.4}, predicted {slope:.4}", f.slope, f.slope_band));
            ctx.check("rate_prefactor", rel(f.prefactor, prefactor) < 0.2, format!("fitted {:.4}, predicted {prefactor:.4}", f.prefactor));
        }
        Err(e) => ctx.checks.push(CheckLine::skip("rate", e.to_string())),
    }
    let annotation = fit.ok().map(|f| RateAnnotation {
        fitted_slope: f.slope,
        fitted_prefactor: f.prefactor,
        predicted_slope: slope,
        predicted_prefactor: prefactor,
    });
    ctx.plot(&path, CsvKind::Attractive, annotation)?;
    let usable: Vec<&BlowupRecord> = records.iter().filter(|r| r.usable()).collect();
    if let Some(last) = usable.last() {
        lambda_check(ctx, last);
        let sq: Vec<f64> = usable.iter().map(|r| r.sq_diff).collect();
        let kr: Vec<f64> = usable.iter().map(|r| (r.kinetic_ratio - 1.0).abs()).collect();
        let mono = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
        ctx.check(
            "symmetrization",
            mono(&sq) && mono(&kr) && sq[sq.len() - 1] < 0.05 && kr[kr.len() - 1] < 0.05,
            format!("square difference {:.3e}, kinetic ratio offset {:.3e} at the smallest delta", sq[sq.len() - 1], kr[kr.len() - 1]),
        );
        let mut worst = String::from("all points within the bound");
        let mut ok = true;
        for rec in &usable {
            let b = energy_upper_bound_check(rec.energy, rec.delta[0], &sel, &r, 0.1 * r.a_star);
            if !b.pass {
                ok = false;
                worst = format!("delta {:.4e}: energy {:.4e} bound {:.4e}", rec.delta[0], b.energy, b.bound);
            }
        }
        ctx.check("energy_bound", ok, worst);
    }
    dump_smallest(ctx, &records, &r, "profile_attractive.csv")
}

fn run_repulsive(ctx: &mut Ctx) -> Result<()> {
    let r = ctx.reference()?;
    let Some(Couplings::RepulsiveSweep { units, beta, deltas, schedule_s }) = ctx.cfg.couplings.clone() else {
        unreachable!("validated")
    };
    let s = units.scale(r.a_star);
    let base = MfgParams { coupling: mfg_core::energy::CouplingParams { beta: beta * s, ..Default::default() }, ..ctx.params() };
    let deltas: Vec<f64> = deltas.iter().map(|d| d * s).collect();
    let records = repulsive_sweep(&base, &r, &ctx.grid, &deltas, RepulsiveSchedule::Power { s: schedule_s }, &ctx.cfg.solver)?;
    let dim = ctx.grid.dim();
    let rows: Vec<RepulsiveRow> = records
        .iter()
        .map(|rec| {
            let alt = rec.eps_predicted_alt.unwrap_or([f64::NAN; 2]);
            RepulsiveRow {
                delta1: rec.delta[0],
                delta2: rec.delta[1],
                eps1_measured: rec.eps_measured[0],
                eps2_measured: rec.eps_measured[1],
                eps1_lemma: rec.eps_predicted[0],
                eps2_lemma: rec.eps_predicted[1],
                eps1_theorem: alt[0],
                eps2_theorem: alt[1],
                lambda1_eps_g: rec.lambda_eps_gamma[0],
                lambda2_eps_g: rec.lambda_eps_gamma[1],
                overlap: rec.overlap,
                x1: point_cell(rec.x_conc[0], dim),
                x2: point_cell(rec.x_conc[1], dim),
                converged: rec.converged && rec.error.is_none(),
            }
        })
        .collect();
    let path = ctx.out.write_csv("blowup_repulsive.csv", &rows)?;
    failures(ctx, &records);
    let gc = r.gamma_conj();
    let wells = [potential_minima(&base.potential1)[0], potential_minima(&base.potential2)[0]];
    let (b1, q1) = base.potential1.local_expansion(0, dim);
    let annotation = fit_records(&records, 0).ok().map(|f| RateAnnotation {
        fitted_slope: f.slope,
        fitted_prefactor: f.prefactor,
        predicted_slope: 1.0 / (gc + q1),
        predicted_prefactor: predicted_eps_repulsive(r.a_star - 1.0, &r, (b1, q1)).0,
    });
    ctx.plot(&path, CsvKind::Repulsive, annotation)?;
    let usable: Vec<&BlowupRecord> = records.iter().filter(|r| r.usable()).collect();
    if let Some(last) = usable.last() {
        lambda_check(ctx, last);
        ctx.check("overlap", last.overlap < 1e-4, format!("{:.3e} at the smallest delta", last.overlap));
        let h = ctx.grid.spacing();
        let off = [0, 1].map(|i| ctx.grid.dist(last.x_conc[i], wells[i]));
        ctx.check("concentration_points", off.iter().all(|d| *d < 2.0 * h), format!("distances {:.3e}, {:.3e}; 2h = {:.3e}", off[0], off[1], 2.0 * h));
        ctx.check(
            "profiles",
            last.profile_l1.iter().all(|d| *d < 0.05),
            format!("L1 distances {:.3e}, {:.3e}", last.profile_l1[0], last.profile_l1[1]),
        );
        let worst = |pred: &dyn Fn(&BlowupRecord) -> [f64; 2]| {
            usable
                .iter()
                .flat_map(|rec| {
                    let p = pred(rec);
                    [rel(rec.eps_measured[0], p[0]), rel(rec.eps_measured[1], p[1])]
                })
                .fold(0.0, f64::max)
        };
        let lemma = worst(&|rec| rec.eps_predicted);
        let theorem = worst(&|rec| rec.eps_predicted_alt.unwrap_or([f64::NAN; 2]));
        let verdict = match (lemma < 0.15, theorem < 0.15) {
            (true, false) => "single-population lemma reading matches",
            (false, true) => "theorem reading matches",
            (true, true) => "both readings match",
            (false, false) => "neither reading matches",
        };
        ctx.check(
            "rate_adjudication",
            (lemma < 0.15) != (theorem < 0.15),
            format!("{verdict}: worst deviation lemma {lemma:.3}, theorem {theorem:.3}"),
        );
    }
    dump_smallest(ctx, &records, &r, "profile_repulsive.csv")
}

fn run_validate(ctx: &mut Ctx) -> Result<()> {
    let r = ctx.reference()?;
    reference_checks(ctx, &r)?;
    let mut worst: f64 = f64::INFINITY;
    for seed in 0..200u64 {
        let smooth = 0.002 * (1 + seed % 10) as f64;
        let p = random_feasible(ctx.cfg.seed.wrapping_add(seed), &r.grid, smooth);
        let q = gn_quotient(&p.m, &p.w, &r.hp)?;
        worst = worst.min(q / r.a_star - 1.0);
    }
    ctx.check("gn_inequality", worst > -1e-6, format!("min quotient/a* - 1 over 200 pairs = {worst:.3e}"));
    let g = ctx.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.seed);
    let mut u = ScalarField::zeros(g);
    u.values.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let mut w = FluxField::zeros(g);
    w.faces.iter_mut().flatten().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    w.zero_boundary();
    let gu = grid::grad(&u);
    let lhs: f64 = gu.flat().iter().zip(w.flat()).map(|(a, b)| a * b).sum();
    let rhs: f64 = -u.values.iter().zip(&grid::div(&w).values).map(|(a, b)| a * b).sum::<f64>();
    let adj = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
    ctx.check("adjointness", adj < 1e-12, format!("relative mismatch {adj:.2e}"));
    let m = ScalarField::from_fn(g, |x| 1.0 + 0.5 * (x[0] * 1.3).sin());
    let m = m.scaled(1.0 / grid::mass(&m));
    let p1 = project(&m, &w)?;
    let p2 = project(&p1.m, &p1.w)?;
    let dm = p1.m.values.iter().zip(&p2.m.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let dw = p1.w.flat().iter().zip(p2.w.flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = p1.w.flat().iter().map(|v| v.abs()).fold(1.0, f64::max);
    ctx.check("projection_idempotent", dm.max(dw) < 1e-9 * scale, format!("max change {:.2e}", dm.max(dw)));
    Ok(())
}
