//! Grid export (legacy ASCII VTK, formatted Plot3D) and the matching readers.
//!
//! Coordinates are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{MeshError, Result};
use crate::geometry::Dim;
use crate::grid::StructuredGrid;

const VTK_HEADER: &str = "# vtk DataFile Version 3.0";
const VTK_TITLE: &str = "meshforge structured grid";

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| MeshError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| MeshError::io(path, e))
}

pub fn vtk_string(grid: &StructuredGrid) -> String {
    let [ni, nj, nk] = grid.dims();
    let mut s = String::with_capacity(grid.points().len() * 72 + 128);
    let _ = write!(
        s,
        "{VTK_HEADER}\n{VTK_TITLE}\nASCII\nDATASET STRUCTURED_GRID\nDIMENSIONS {ni} {nj} {nk}\nPOINTS {} double\n",
        grid.points().len()
    );
    for p in grid.points() {
        let _ = writeln!(s, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]);
    }
    s
}

pub fn export_vtk(grid: &StructuredGrid, path: &Path) -> Result<()> {
    write_file(path, &vtk_string(grid))
}

pub fn plot3d_string(grid: &StructuredGrid) -> String {
    let [ni, nj, nk] = grid.dims();
    let mut s = String::with_capacity(grid.points().len() * 72 + 32);
    let _ = writeln!(s, "{ni} {nj} {nk}");
    for c in 0..3 {
        for p in grid.points() {
            let _ = writeln!(s, "{:.16e}", p[c]);
        }
    }
    s
}

pub fn export_plot3d(grid: &StructuredGrid, path: &Path) -> Result<()> {
    write_file(path, &plot3d_string(grid))
}

/// A single-layer lattice is read as a 2D grid.
fn grid_from(dims: [usize; 3], points: Vec<[f64; 3]>, origin: &Path) -> Result<StructuredGrid> {
    let dim = if dims[2] == 1 { Dim::Two } else { Dim::Three };
    if dim == Dim::Two && points.iter().any(|p| p[2] != 0.0) {
        return Err(MeshError::parse(origin, "single-layer grid with nonzero z"));
    }
    StructuredGrid::new(dim, dims, points).map_err(|e| match e {
        MeshError::NonFinite(_) => e,
        _ => MeshError::parse(origin, e.to_string()),
    })
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str, origin: &Path) -> Result<T> {
    let tok = tok.ok_or_else(|| MeshError::parse(origin, format!("missing {what}")))?;
    tok.parse().map_err(|_| MeshError::parse(origin, format!("bad {what} `{tok}`")))
}

pub fn parse_vtk(text: &str, origin: &Path) -> Result<StructuredGrid> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(VTK_HEADER) {
        return Err(MeshError::parse(origin, "missing VTK header"));
    }
    lines.next();
    if lines.next().map(str::trim) != Some("ASCII") {
        return Err(MeshError::parse(origin, "only ASCII VTK files are supported"));
    }
    if lines.next().map(str::trim) != Some("DATASET STRUCTURED_GRID") {
        return Err(MeshError::parse(origin, "expected DATASET STRUCTURED_GRID"));
    }
    let mut toks = lines.flat_map(str::split_whitespace);
    if toks.next() != Some("DIMENSIONS") {
        return Err(MeshError::parse(origin, "expected DIMENSIONS"));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = parse_num(toks.next(), "dimension", origin)?;
    }
    if toks.next() != Some("POINTS") {
        return Err(MeshError::parse(origin, "expected POINTS"));
    }
    let n: usize = parse_num(toks.next(), "point count", origin)?;
    if n != dims.iter().product::<usize>() {
        return Err(MeshError::parse(origin, format!("{n} points for dimensions {dims:?}")));
    }
    match toks.next() {
        Some("double" | "float") => {}
        other => return Err(MeshError::parse(origin, format!("unsupported point type {other:?}"))),
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0.0; 3];
        for c in &mut p {
            *c = parse_num(toks.next(), "coordinate", origin)?;
        }
        points.push(p);
    }
    grid_from(dims, points, origin)
}

pub fn read_vtk(path: &Path) -> Result<StructuredGrid> {
    parse_vtk(&read_file(path)?, path)
}

pub fn parse_plot3d(text: &str, origin: &Path) -> Result<StructuredGrid> {
    let mut toks = text.split_whitespace();
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = parse_num(toks.next(), "dimension", origin)?;
    }
    let n: usize = dims.iter().product();
    let mut points = vec![[0.0; 3]; n];
    for c in 0..3 {
        for p in &mut points {
            p[c] = parse_num(toks.next(), "coordinate", origin)?;
        }
    }
    if toks.next().is_some() {
        return Err(MeshError::parse(origin, "trailing data after the coordinate blocks"));
    }
    grid_from(dims, points, origin)
}

pub fn read_plot3d(path: &Path) -> Result<StructuredGrid> {
    parse_plot3d(&read_file(path)?, path)
}
