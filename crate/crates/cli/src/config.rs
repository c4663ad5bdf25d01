//! Strict JSON run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mfg_core::energy::{CouplingParams, HamiltonianParams, PotentialSpec};
use mfg_core::grid::GridSpec;
use mfg_core::minimizer::SolverConfig;
use mfg_core::{MfgError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Reference,
    Solve,
    PhaseDiagram,
    SweepAttractive,
    SweepRepulsive,
    Validate,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Reference => "reference",
            Self::Solve => "solve",
            Self::PhaseDiagram => "phase-diagram",
            Self::SweepAttractive => "sweep-attractive",
            Self::SweepRepulsive => "sweep-repulsive",
            Self::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub half_width: f64,
    pub cells: usize,
}

impl GridConfig {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.half_width, self.cells)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianConfig {
    pub gamma: f64,
    pub c_h: f64,
}

/// Unit of every coupling value in a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Units {
    Absolute,
    /// Multiples of the best constant `a*`.
    AStar,
}

impl Units {
    pub fn scale(self, a_star: f64) -> f64 {
        match self {
            Self::Absolute => 1.0,
            Self::AStar => a_star,
        }
    }
}

/// `α` entry of a phase grid: one value for both populations or a pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaEntry {
    Same(f64),
    Pair([f64; 2]),
}

impl AlphaEntry {
    pub fn pair(self) -> (f64, f64) {
        match self {
            Self::Same(a) => (a, a),
            Self::Pair([a, b]) => (a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Couplings {
    Point {
        units: Units,
        alpha1: f64,
        alpha2: f64,
        beta: f64,
    },
    Grid {
        units: Units,
        alpha: Vec<AlphaEntry>,
        beta: Vec<f64>,
    },
    AttractiveSweep {
        units: Units,
        beta: f64,
        deltas: Vec<f64>,
        asymmetry: f64,
    },
    RepulsiveSweep {
        units: Units,
        beta: f64,
        deltas: Vec<f64>,
        schedule_s: f64,
    },
}

impl Couplings {
    fn kind(&self) -> &'static str {
        match self {
            Self::Point { .. } => "point",
            Self::Grid { .. } => "grid",
            Self::AttractiveSweep { .. } => "attractive-sweep",
            Self::RepulsiveSweep { .. } => "repulsive-sweep",
        }
    }

    /// The single coupling of a `point` block in absolute units.
    pub fn point(&self, a_star: f64) -> Option<CouplingParams> {
        match *self {
            Self::Point { units, alpha1, alpha2, beta } => {
                let s = units.scale(a_star);
                Some(CouplingParams { alpha1: alpha1 * s, alpha2: alpha2 * s, beta: beta * s })
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub grid: GridConfig,
    /// Grid of the potential-free reference problem; `reference` and `validate`
    /// use `grid` itself, the others default to three times
    /// the box at four times the cells in 1D and twice both in 2D.
    #[serde(default)]
    pub reference_grid: Option<GridConfig>,
    pub hamiltonian: HamiltonianConfig,
    #[serde(default)]
    pub couplings: Option<Couplings>,
    pub potentials: [PotentialSpec; 2],
    #[serde(default)]
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn invalid(msg: impl Into<String>) -> MfgError {
    MfgError::Validation(msg.into())
}

impl RunConfig {
    pub fn hamiltonian(&self) -> Result<HamiltonianParams> {
        HamiltonianParams::new(self.hamiltonian.gamma, self.hamiltonian.c_h).map_err(|e| invalid(e.to_string()))
    }

    pub fn grid(&self) -> Result<GridSpec> {
        self.grid.spec().map_err(|e| invalid(e.to_string()))
    }

    pub fn reference_grid(&self) -> Result<GridSpec> {
        if let Some(g) = self.reference_grid {
            return g.spec().map_err(|e| invalid(e.to_string()));
        }
        if matches!(self.experiment, Experiment::Reference | Experiment::Validate) {
            return self.grid();
        }
        let g = self.grid()?;
        let (w, n) = if g.dim() == 1 { (3.0, 4) } else { (2.0, 2) };
        GridSpec::new(g.dim(), w * g.half_width(), n * g.cells())
    }

    pub fn validate(&self) -> Result<()> {
        let hp = self.hamiltonian()?;
        let grid = self.grid()?;
        let dim = grid.dim();
        if !(hp.gamma_conj() > dim as f64) {
            return Err(invalid(format!(
                "gamma_conj must exceed dim (gamma' = {}, dim = {dim})",
                hp.gamma_conj()
            )));
        }
        for g in [Some(self.grid), self.reference_grid].into_iter().flatten() {
            if !g.cells.is_power_of_two() {
                return Err(invalid(format!("cells must be a power of two, got {}", g.cells)));
            }
            if g.dim != dim {
                return Err(invalid("reference_grid must have the same dim as grid"));
            }
        }
        for (i, v) in self.potentials.iter().enumerate() {
            v.validate(dim).map_err(|e| invalid(format!("potentials[{i}]: {e}")))?;
        }
        self.solver.validate().map_err(|e| invalid(e.to_string()))?;
        let needs = match self.experiment {
            Experiment::Reference | Experiment::Validate => None,
            Experiment::Solve => Some("point"),
            Experiment::PhaseDiagram => Some("grid"),
            Experiment::SweepAttractive => Some("attractive-sweep"),
            Experiment::SweepRepulsive => Some("repulsive-sweep"),
        };
        match (needs, &self.couplings) {
            (Some(kind), None) => {
                return Err(invalid(format!("experiment {} needs a '{kind}' couplings block", self.experiment.name())))
            }
            (Some(kind), Some(c)) if c.kind() != kind => {
                return Err(invalid(format!(
                    "experiment {} needs couplings of kind '{kind}', got '{}'",
                    self.experiment.name(),
                    c.kind()
                )))
            }
            _ => {}
        }
        if let Some(c) = &self.couplings {
            validate_couplings(c)?;
        }
        Ok(())
    }
}

fn validate_couplings(c: &Couplings) -> Result<()> {
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(invalid(format!("{name} must be positive, got {v}")))
        }
    };
    match c {
        Couplings::Point { alpha1, alpha2, beta, .. } => {
            positive("alpha1", *alpha1)?;
            positive("alpha2", *alpha2)?;
            if !beta.is_finite() {
                return Err(invalid("beta must be finite"));
            }
        }
        Couplings::Grid { alpha, beta, .. } => {
            if alpha.is_empty() || beta.is_empty() {
                return Err(invalid("phase grid needs at least one alpha and one beta"));
            }
            for a in alpha {
                let (a1, a2) = a.pair();
                positive("alpha1", a1)?;
                positive("alpha2", a2)?;
            }
        }
        Couplings::AttractiveSweep { beta, deltas, asymmetry, .. } => {
            positive("beta", *beta)?;
            if !(0.0..1.0).contains(asymmetry) {
                return Err(invalid("asymmetry must lie in [0, 1)"));
            }
            check_deltas(deltas)?;
        }
        Couplings::RepulsiveSweep { beta, deltas, schedule_s, .. } => {
            if !(*beta < 0.0) {
                return Err(invalid(format!("repulsive sweep needs beta < 0, got {beta}")));
            }
            positive("schedule_s", *schedule_s)?;
            check_deltas(deltas)?;
        }
    }
    Ok(())
}

fn check_deltas(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(invalid("deltas must be a non-empty list of positive numbers"));
    }
    Ok(())
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| MfgError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path)?;
    let cfg = parse_config(&text)?;
    Ok((cfg, text))
}

/// SHA-256 of the document re-serialized with sorted keys and no whitespace.
pub fn config_hash(text: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| MfgError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let canonical = serde_json::to_string(&value).expect("a parsed JSON value serializes");
    Ok(hex(&Sha256::digest(canonical.as_bytes())))
}

pub fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(2 * bytes.len());
    for b in bytes {
        write!(s, "{b:02x}").expect("writing to a String cannot fail");
    }
    s
}
