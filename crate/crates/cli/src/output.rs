//! Output directory, CSV schemas, plot scripts, report and manifest.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use mfg_core::grid::{write_flux, write_scalar, FluxField, Point, ScalarField};
use mfg_core::{MfgError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Every file of a run goes through this writer, which keeps the inventory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        let mut f = fs::File::create(&path)?;
        f.write_all(bytes)?;
        self.files.retain(|e| e.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex(&Sha256::digest(bytes)),
        });
        Ok(path)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| MfgError::Io(e.into_error()))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_scalar(&mut self, name: &str, field: &ScalarField) -> Result<PathBuf> {
        let mut buf = Vec::new();
        write_scalar(&mut buf, field)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_flux(&mut self, name: &str, field: &FluxField) -> Result<PathBuf> {
        let mut buf = Vec::new();
        write_flux(&mut buf, field)?;
        self.write_bytes(name, &buf)
    }
}

fn csv_error(e: csv::Error) -> MfgError {
    MfgError::Io(std::io::Error::other(e.to_string()))
}

/// Point coordinates as a single CSV cell: `x` in 1D, `x:y` in 2D.
pub fn point_cell(p: Point, dim: usize) -> String {
    if dim == 1 {
        format!("{}", p[0])
    } else {
        format!("{}:{}", p[0], p[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractiveRow {
    pub delta: f64,
    pub eps_measured: f64,
    pub eps_predicted: f64,
    pub lambda1_eps_g: f64,
    pub lambda2_eps_g: f64,
    pub sq_diff: f64,
    pub overlap: f64,
    pub x1: String,
    pub x2: String,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepulsiveRow {
    pub delta1: f64,
    pub delta2: f64,
    pub eps1_measured: f64,
    pub eps2_measured: f64,
    pub eps1_lemma: f64,
    pub eps2_lemma: f64,
    pub eps1_theorem: f64,
    pub eps2_theorem: f64,
    pub lambda1_eps_g: f64,
    pub lambda2_eps_g: f64,
    pub overlap: f64,
    pub x1: String,
    pub x2: String,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
    pub verdict: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub x: f64,
    pub m1: f64,
    pub m2: f64,
    pub reference: f64,
}

pub const ATTRACTIVE_HEADER: &[&str] = &[
    "delta", "eps_measured", "eps_predicted", "lambda1_eps_g", "lambda2_eps_g", "sq_diff", "overlap", "x1", "x2",
    "converged",
];
pub const REPULSIVE_HEADER: &[&str] = &[
    "delta1", "delta2", "eps1_measured", "eps2_measured", "eps1_lemma", "eps2_lemma", "eps1_theorem", "eps2_theorem",
    "lambda1_eps_g", "lambda2_eps_g", "overlap", "x1", "x2", "converged",
];
pub const PHASE_HEADER: &[&str] = &["alpha1", "alpha2", "beta", "verdict"];
pub const PROFILE_HEADER: &[&str] = &["x", "m1", "m2", "reference"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsvKind {
    Attractive,
    Repulsive,
    Phase,
    Profile,
}

impl CsvKind {
    fn header(self) -> &'static [&'static str] {
        match self {
            Self::Attractive => ATTRACTIVE_HEADER,
            Self::Repulsive => REPULSIVE_HEADER,
            Self::Phase => PHASE_HEADER,
            Self::Profile => PROFILE_HEADER,
        }
    }
}

/// Reads a CSV and checks its header; returns the number of data rows.
pub fn check_csv(path: &Path, kind: CsvKind) -> Result<usize> {
    let name = path.display().to_string();
    let mismatch = |message: String| MfgError::SchemaMismatch { file: name.clone(), message };
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    let header: Vec<String> = match r.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) => return Err(mismatch(e.to_string())),
    };
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Ok(0);
    }
    if header != kind.header() {
        return Err(mismatch(format!("expected columns {:?}, found {header:?}", kind.header())));
    }
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| mismatch(e.to_string()))?;
        if rec.len() != header.len() {
            return Err(mismatch(format!("row {} has {} fields", n + 1, rec.len())));
        }
        n += 1;
    }
    Ok(n)
}

/// Annotation data for the rate plot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateAnnotation {
    pub fitted_slope: f64,
    pub fitted_prefactor: f64,
    pub predicted_slope: f64,
    pub predicted_prefactor: f64,
}

fn quote(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Writes a gnuplot script for a CSV; an empty CSV yields no file and a warning.
pub fn emit_plot(
    out: &mut OutputDir,
    csv_path: &Path,
    kind: CsvKind,
    rate: Option<RateAnnotation>,
) -> Result<(Option<PathBuf>, Option<String>)> {
    let rows = check_csv(csv_path, kind)?;
    let data = quote(csv_path);
    if rows == 0 {
        return Ok((None, Some(format!("{data} is empty; no plot written"))));
    }
    let stem = data.trim_end_matches(".csv");
    let mut s = String::from("set datafile separator ','\nset key top left\n");
    s.push_str(&format!("set terminal pngcairo size 800,600\nset output '{stem}.png'\n"));
    match kind {
        CsvKind::Attractive | CsvKind::Repulsive => {
            let (xcol, ycol, pcol) = if kind == CsvKind::Attractive { (1, 2, 3) } else { (2, 4, 6) };
            s.push_str("set logscale xy\nset xlabel 'delta'\nset ylabel 'eps'\n");
            let mut extra = String::new();
            if let Some(r) = rate {
                s.push_str(&format!(
                    "set label 1 sprintf('fitted slope %.4f, predicted %.4f', {}, {}) at graph 0.05, graph 0.9\n",
                    r.fitted_slope, r.predicted_slope
                ));
                s.push_str(&format!(
                    "fit_line(x) = {} * x**{}\npred_line(x) = {} * x**{}\n",
                    r.fitted_prefactor, r.fitted_slope, r.predicted_prefactor, r.predicted_slope
                ));
                extra = ", fit_line(x) title 'fit' dt 2, pred_line(x) title 'predicted' dt 3".into();
            }
            s.push_str(&format!(
                "plot '{data}' skip 1 using {xcol}:{ycol} with points pt 7 title 'measured', \
                 '' skip 1 using {xcol}:{pcol} with lines title 'prediction column'{extra}\n"
            ));
        }
        CsvKind::Phase => {
            s.push_str("set xlabel 'alpha1'\nset ylabel 'beta'\nset palette defined (0 'red', 1 'gray', 2 'orange', 3 'blue')\n");
            s.push_str("set cbrange [0:3]\nset cbtics ('UnboundedBelow' 0, 'Undetermined' 1, 'BoundaryNoMinimizer' 2, 'Exists' 3)\n");
            s.push_str("code(v) = v eq 'Exists' ? 3 : v eq 'BoundaryNoMinimizer' ? 2 : v eq 'Undetermined' ? 1 : 0\n");
            s.push_str(&format!(
                "plot '{data}' skip 1 using 1:3:(code(strcol(4))) with points pt 5 ps 3 palette notitle\n"
            ));
        }
        CsvKind::Profile => {
            s.push_str("set xlabel 'x'\nset ylabel 'rescaled density'\n");
            s.push_str(&format!(
                "plot '{data}' skip 1 using 1:2 with lines title 'm1', '' skip 1 using 1:3 with lines title 'm2', \
                 '' skip 1 using 1:4 with lines dt 2 title 'reference'\n"
            ));
        }
    }
    let path = out.write_bytes(&format!("{stem}.gp"), s.as_bytes())?;
    Ok((Some(path), None))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl CheckLine {
    pub fn new(name: &str, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            detail: detail.into(),
        }
    }

    pub fn skip(name: &str, detail: impl Into<String>) -> Self {
        Self { name: name.into(), status: Status::Skip, detail: detail.into() }
    }
}

pub fn render_report(title: &str, lines: &[CheckLine]) -> String {
    let mut s = format!("# {title}\n");
    for l in lines {
        let tag = match l.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        };
        s.push_str(&format!("{tag} {}: {}\n", l.name, l.detail));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub config_hash: String,
    pub versions: Vec<(String, String)>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub seed: u64,
    pub threads: Option<usize>,
    pub reference_cache_key: Option<String>,
    pub reference_cache_hit: Option<bool>,
    pub outputs: Vec<FileEntry>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn versions() -> Vec<(String, String)> {
    vec![
        ("mfg-cli".into(), env!("CARGO_PKG_VERSION").into()),
        ("mfg-core".into(), mfg_core::VERSION.into()),
    ]
}

/// Writes `manifest.json` listing every file emitted before it.
pub fn write_manifest(out: &mut OutputDir, mut manifest: RunManifest) -> Result<PathBuf> {
    manifest.outputs = out.files().to_vec();
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    out.write_bytes("manifest.json", text.as_bytes())
}
