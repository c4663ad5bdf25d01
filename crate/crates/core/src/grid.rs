//! Uniform tensor grids on a truncated box `[-L, L]^N`.
//!
//! Scalars (densities, value functions, potentials) live at cell centers.
//! Fluxes live on the faces normal to each axis (marker-and-cell layout),
//! with the outer boundary faces pinned to zero. With that layout the
//! discrete divergence is the exact negative adjoint of the discrete
//! gradient under the `h^N`-weighted inner products.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

/// A point in the plane; the second coordinate is ignored on 1D grids.
pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    half_width: f64,
    cells: usize,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: f64, cells: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(MfgError::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(MfgError::InvalidGrid(format!(
                "half_width must be positive, got {half_width}"
            )));
        }
        if cells < 16 {
            return Err(MfgError::InvalidGrid(format!(
                "need at least 16 cells per axis, got {cells}"
            )));
        }
        Ok(Self {
            dim,
            half_width,
            cells,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Cells per axis.
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    /// Total number of cells, `n^dim`.
    pub fn num_cells(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    /// `h^dim`, the midpoint-rule weight.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Same box, `factor` times as many cells per axis.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            cells: self.cells * factor,
            ..*self
        }
    }

    pub fn with_half_width(&self, half_width: f64) -> Self {
        Self { half_width, ..*self }
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    /// Multi-index of a flat cell index (`[i, 0]` on 1D grids).
    pub fn cell_ij(&self, cell: usize) -> [usize; 2] {
        if self.dim == 1 {
            [cell, 0]
        } else {
            [cell / self.cells, cell % self.cells]
        }
    }

    pub fn cell_index(&self, ij: [usize; 2]) -> usize {
        if self.dim == 1 {
            ij[0]
        } else {
            ij[0] * self.cells + ij[1]
        }
    }

    pub fn center(&self, cell: usize) -> Point {
        let [i, j] = self.cell_ij(cell);
        if self.dim == 1 {
            [self.coord(i), 0.0]
        } else {
            [self.coord(i), self.coord(j)]
        }
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.num_cells()).map(|c| self.center(c)).collect()
    }

    pub fn dist(&self, a: Point, b: Point) -> f64 {
        let mut s = 0.0;
        for k in 0..self.dim {
            s += (a[k] - b[k]).powi(2);
        }
        s.sqrt()
    }

    /// Number of faces normal to `axis`: `(n+1) n^(dim-1)`.
    pub fn face_count(&self, _axis: usize) -> usize {
        (self.cells + 1) * self.cells.pow(self.dim as u32 - 1)
    }

    /// Flat index of the face normal to `axis` with normal index `f`
    /// (0..=n) and transverse cell index `t`.
    pub fn face_index(&self, axis: usize, f: usize, t: usize) -> usize {
        match (self.dim, axis) {
            (1, _) => f,
            (_, 0) => f * self.cells + t,
            _ => t * (self.cells + 1) + f,
        }
    }

    /// Inverse of [`face_index`](Self::face_index): `(normal, transverse)`.
    pub fn face_ft(&self, axis: usize, face: usize) -> (usize, usize) {
        match (self.dim, axis) {
            (1, _) => (face, 0),
            (_, 0) => (face / self.cells, face % self.cells),
            _ => (face % (self.cells + 1), face / (self.cells + 1)),
        }
    }

    /// Lower and upper faces of `cell` normal to `axis`.
    pub fn cell_faces(&self, cell: usize, axis: usize) -> (usize, usize) {
        let [i, j] = self.cell_ij(cell);
        let (f, t) = if axis == 0 { (i, j) } else { (j, i) };
        (self.face_index(axis, f, t), self.face_index(axis, f + 1, t))
    }

    /// Cells on either side of an interior face; `None` on the boundary.
    pub fn face_cells(&self, axis: usize, face: usize) -> Option<(usize, usize)> {
        let (f, t) = self.face_ft(axis, face);
        if f == 0 || f == self.cells {
            return None;
        }
        let (lo, hi) = if axis == 0 { ([f - 1, t], [f, t]) } else { ([t, f - 1], [t, f]) };
        Some((self.cell_index(lo), self.cell_index(hi)))
    }

    pub fn face_center(&self, axis: usize, face: usize) -> Point {
        let (f, t) = self.face_ft(axis, face);
        let normal = -self.half_width + f as f64 * self.spacing();
        if self.dim == 1 {
            [normal, 0.0]
        } else if axis == 0 {
            [normal, self.coord(t)]
        } else {
            [self.coord(t), normal]
        }
    }

    /// Cell whose center is nearest to `p` (clamped to the box).
    pub fn nearest_cell(&self, p: Point) -> usize {
        let h = self.spacing();
        let idx = |x: f64| {
            let k = ((x + self.half_width) / h - 0.5).round();
            k.clamp(0.0, (self.cells - 1) as f64) as usize
        };
        if self.dim == 1 {
            idx(p[0])
        } else {
            self.cell_index([idx(p[0]), idx(p[1])])
        }
    }
}

/// Cell-centered samples of a scalar function.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_cells() {
            return Err(MfgError::ShapeMismatch(format!(
                "expected {} cell values, got {}",
                grid.num_cells(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.num_cells()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(Point) -> f64) -> Self {
        let values = (0..grid.num_cells()).map(|c| f(grid.center(c))).collect();
        Self { grid, values }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Index of the maximum; ties go to the smallest flat index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = k;
            }
        }
        best
    }

    /// Index of the minimum; ties go to the smallest flat index.
    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = k;
            }
        }
        best
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Multilinear interpolation at `p`; zero outside the hull of centers.
    pub fn sample(&self, p: Point) -> f64 {
        let g = &self.grid;
        let h = g.spacing();
        let n = g.cells();
        let locate = |x: f64| -> Option<(usize, f64)> {
            let s = (x + g.half_width()) / h - 0.5;
            if s < 0.0 || s > (n - 1) as f64 {
                return None;
            }
            let k = (s.floor() as usize).min(n - 2);
            Some((k, s - k as f64))
        };
        if g.dim() == 1 {
            match locate(p[0]) {
                Some((k, t)) => (1.0 - t) * self.values[k] + t * self.values[k + 1],
                None => 0.0,
            }
        } else {
            match (locate(p[0]), locate(p[1])) {
                (Some((i, s)), Some((j, t))) => {
                    let v = |a: usize, b: usize| self.values[g.cell_index([a, b])];
                    (1.0 - s) * ((1.0 - t) * v(i, j) + t * v(i, j + 1))
                        + s * ((1.0 - t) * v(i + 1, j) + t * v(i + 1, j + 1))
                }
                _ => 0.0,
            }
        }
    }
}

/// Face-centered flux, one array per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FluxField {
    pub grid: GridSpec,
    pub faces: Vec<Vec<f64>>,
}

impl FluxField {
    pub fn zeros(grid: GridSpec) -> Self {
        let faces = (0..grid.dim())
            .map(|a| vec![0.0; grid.face_count(a)])
            .collect();
        Self { grid, faces }
    }

    pub fn new(grid: GridSpec, faces: Vec<Vec<f64>>) -> Result<Self> {
        if faces.len() != grid.dim()
            || faces
                .iter()
                .enumerate()
                .any(|(a, f)| f.len() != grid.face_count(a))
        {
            return Err(MfgError::ShapeMismatch(
                "face arrays inconsistent with staggering".into(),
            ));
        }
        let mut w = Self { grid, faces };
        w.zero_boundary();
        Ok(w)
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(usize, Point) -> f64) -> Self {
        let mut w = Self::zeros(grid);
        for a in 0..grid.dim() {
            for k in 0..grid.face_count(a) {
                if grid.face_cells(a, k).is_some() {
                    w.faces[a][k] = f(a, grid.face_center(a, k));
                }
            }
        }
        w
    }

    pub fn zero_boundary(&mut self) {
        let g = self.grid;
        for a in 0..g.dim() {
            for k in 0..g.face_count(a) {
                if g.face_cells(a, k).is_none() {
                    self.faces[a][k] = 0.0;
                }
            }
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            faces: self
                .faces
                .iter()
                .map(|f| f.iter().map(|v| c * v).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &FluxField) -> Self {
        Self {
            grid: self.grid,
            faces: self
                .faces
                .iter()
                .zip(&other.faces)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect(),
        }
    }

    /// Flat view of every face value, axis-major.
    pub fn flat(&self) -> Vec<f64> {
        self.faces.iter().flatten().cloned().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.faces.iter().flatten().all(|v| v.is_finite())
    }

    /// Interpolates the face arrays of each axis at `p` (zero outside).
    pub fn sample(&self, axis: usize, p: Point) -> f64 {
        let g = &self.grid;
        let h = g.spacing();
        let n = g.cells();
        // normal direction: faces at -L + f h, f = 0..=n
        let locate_normal = |x: f64| -> Option<(usize, f64)> {
            let s = (x + g.half_width()) / h;
            if s < 0.0 || s > n as f64 {
                return None;
            }
            let k = (s.floor() as usize).min(n - 1);
            Some((k, s - k as f64))
        };
        let locate_center = |x: f64| -> Option<(usize, f64)> {
            let s = (x + g.half_width()) / h - 0.5;
            if s < 0.0 || s > (n - 1) as f64 {
                return None;
            }
            let k = (s.floor() as usize).min(n - 2);
            Some((k, s - k as f64))
        };
        let vals = &self.faces[axis];
        if g.dim() == 1 {
            return match locate_normal(p[0]) {
                Some((k, t)) => (1.0 - t) * vals[k] + t * vals[k + 1],
                None => 0.0,
            };
        }
        let (pn, pt) = if axis == 0 { (p[0], p[1]) } else { (p[1], p[0]) };
        match (locate_normal(pn), locate_center(pt)) {
            (Some((f, s)), Some((t0, t))) => {
                let v = |ff: usize, tt: usize| vals[g.face_index(axis, ff, tt)];
                (1.0 - s) * ((1.0 - t) * v(f, t0) + t * v(f, t0 + 1))
                    + s * ((1.0 - t) * v(f + 1, t0) + t * v(f + 1, t0 + 1))
            }
            _ => 0.0,
        }
    }
}

/// Midpoint-rule integral `h^N Σ values`.
pub fn mass(field: &ScalarField) -> f64 {
    field.grid.cell_volume() * field.values.iter().sum::<f64>()
}

/// `h^N Σ a b` over cells.
pub fn cell_inner(a: &ScalarField, b: &ScalarField) -> f64 {
    a.grid.cell_volume() * a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum::<f64>()
}

/// `h^N Σ w v` over all faces.
pub fn face_inner(w: &FluxField, v: &FluxField) -> f64 {
    let s: f64 = w
        .faces
        .iter()
        .zip(&v.faces)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
        .sum();
    w.grid.cell_volume() * s
}

/// Writes the discrete gradient of cell values into face arrays.
pub(crate) fn grad_into(grid: &GridSpec, u: &[f64], out: &mut [Vec<f64>]) {
    let h = grid.spacing();
    for a in 0..grid.dim() {
        let faces = &mut out[a];
        for (k, slot) in faces.iter_mut().enumerate() {
            *slot = match grid.face_cells(a, k) {
                Some((lo, hi)) => (u[hi] - u[lo]) / h,
                None => 0.0,
            };
        }
    }
}

/// Writes the discrete divergence of face arrays into cell values.
/// Boundary faces are read as given, so callers keep them at zero.
pub(crate) fn div_into(grid: &GridSpec, w: &[Vec<f64>], out: &mut [f64]) {
    let h = grid.spacing();
    for (c, slot) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for (a, faces) in w.iter().enumerate() {
            let (lo, hi) = grid.cell_faces(c, a);
            s += faces[hi] - faces[lo];
        }
        *slot = s / h;
    }
}

/// Forward differences `(u_{i+1} - u_i)/h` on interior faces, zero on the boundary.
pub fn grad(u: &ScalarField) -> FluxField {
    let mut w = FluxField::zeros(u.grid);
    grad_into(&u.grid, &u.values, &mut w.faces);
    w
}

/// Per-cell sum of face differences divided by `h`.
pub fn div(w: &FluxField) -> ScalarField {
    let mut out = ScalarField::zeros(w.grid);
    div_into(&w.grid, &w.faces, &mut out.values);
    out
}

/// `div(grad u)`: the cell-centered Laplacian with zero-flux boundary faces.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    div(&grad(u))
}

/// Number of interior nodes carrying a stream function (`0` in 1D).
pub fn stream_len(grid: &GridSpec) -> usize {
    if grid.dim() == 2 {
        (grid.cells() - 1).pow(2)
    } else {
        0
    }
}

/// Discrete curl of a node-based stream function with zero boundary values.
/// The result is divergence-free to round-off and vanishes on boundary faces.
pub(crate) fn curl_into(grid: &GridSpec, psi: &[f64], out: &mut [Vec<f64>]) {
    if grid.dim() != 2 {
        return;
    }
    let n = grid.cells();
    let h = grid.spacing();
    let node = |i: usize, j: usize| -> f64 {
        if i == 0 || j == 0 || i == n || j == n {
            0.0
        } else {
            psi[(i - 1) * (n - 1) + (j - 1)]
        }
    };
    for f in 0..=n {
        for t in 0..n {
            out[0][grid.face_index(0, f, t)] = (node(f, t + 1) - node(f, t)) / h;
            out[1][grid.face_index(1, f, t)] = -(node(t + 1, f) - node(t, f)) / h;
        }
    }
}

/// Transpose of [`curl_into`] in the unweighted inner products.
pub(crate) fn curl_adjoint(grid: &GridSpec, g: &[Vec<f64>], out: &mut [f64]) {
    if grid.dim() != 2 {
        return;
    }
    let n = grid.cells();
    let h = grid.spacing();
    for i in 1..n {
        for j in 1..n {
            // node (i, j) feeds x-faces (i, j-1) [+] and (i, j) [-],
            // y-faces (i-1, j) [-] and (i, j) [+]
            let gx = g[0][grid.face_index(0, i, j - 1)] - g[0][grid.face_index(0, i, j)];
            let gy = g[1][grid.face_index(1, j, i)] - g[1][grid.face_index(1, j, i - 1)];
            out[(i - 1) * (n - 1) + (j - 1)] = (gx + gy) / h;
        }
    }
}

/// Solenoidal flux `curl ψ`.
pub fn curl(grid: &GridSpec, psi: &[f64]) -> FluxField {
    let mut w = FluxField::zeros(*grid);
    curl_into(grid, psi, &mut w.faces);
    w
}

const DUMP_MAGIC: &str = "mfg-field v1";

fn dump_header(grid: &GridSpec) -> String {
    format!(
        "{DUMP_MAGIC} dim={} n={} L={:.16e}",
        grid.dim(),
        grid.cells(),
        grid.half_width()
    )
}

fn write_values<'a>(out: &mut impl Write, grid: &GridSpec, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let mut buf = dump_header(grid);
    buf.push('\n');
    for v in values {
        writeln!(buf, "{v:.16e}").expect("writing to a String cannot fail");
    }
    out.write_all(buf.as_bytes())?;
    Ok(())
}

/// Writes a scalar field in the `mfg-field v1` text format.
pub fn write_scalar(out: &mut impl Write, field: &ScalarField) -> Result<()> {
    write_values(out, &field.grid, field.values.iter())
}

/// Writes a flux field: the same header, then every axis's faces in turn.
pub fn write_flux(out: &mut impl Write, field: &FluxField) -> Result<()> {
    write_values(out, &field.grid, field.faces.iter().flatten())
}

fn read_dump(input: impl BufRead) -> Result<(GridSpec, Vec<f64>)> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| MfgError::Parse {
        line: 1,
        column: 1,
        message: "empty field dump".into(),
    })??;
    let rest = header.strip_prefix(DUMP_MAGIC).ok_or_else(|| MfgError::Parse {
        line: 1,
        column: 1,
        message: format!("expected header starting with '{DUMP_MAGIC}'"),
    })?;
    let mut dim = None;
    let mut n = None;
    let mut l = None;
    for tok in rest.split_whitespace() {
        let bad = || MfgError::Parse {
            line: 1,
            column: header.find(tok).unwrap_or(0) + 1,
            message: format!("malformed header token '{tok}'"),
        };
        let (key, val) = tok.split_once('=').ok_or_else(bad)?;
        match key {
            "dim" => dim = Some(val.parse::<usize>().map_err(|_| bad())?),
            "n" => n = Some(val.parse::<usize>().map_err(|_| bad())?),
            "L" => l = Some(val.parse::<f64>().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    let missing = |k: &str| MfgError::Parse {
        line: 1,
        column: 1,
        message: format!("header missing '{k}'"),
    };
    let grid = GridSpec::new(
        dim.ok_or_else(|| missing("dim"))?,
        l.ok_or_else(|| missing("L"))?,
        n.ok_or_else(|| missing("n"))?,
    )?;
    let mut values = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(t.parse::<f64>().map_err(|e| MfgError::Parse {
            line: k + 2,
            column: 1,
            message: e.to_string(),
        })?);
    }
    Ok((grid, values))
}

pub fn read_scalar(input: impl BufRead) -> Result<ScalarField> {
    let (grid, values) = read_dump(input)?;
    ScalarField::new(grid, values)
}

pub fn read_flux(input: impl BufRead) -> Result<FluxField> {
    let (grid, values) = read_dump(input)?;
    let per_axis = grid.face_count(0);
    if values.len() != per_axis * grid.dim() {
        return Err(MfgError::ShapeMismatch(format!(
            "flux dump has {} values, expected {}",
            values.len(),
            per_axis * grid.dim()
        )));
    }
    let faces = values.chunks(per_axis).map(|c| c.to_vec()).collect();
    Ok(FluxField { grid, faces })
}
