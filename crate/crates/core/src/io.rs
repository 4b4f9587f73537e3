//! CSV/JSON readers and writers.
//!
//! Layouts (one row per grid node, axis 0 fastest, header row first):
//! - mobility: `x[,y]` then the friction matrix `B` row-major (`b11[,b12,b21,b22]`)
//! - embedding: `x[,y]` then the embedded values `b1[,b2]`
//! - density: `x[,y],value`
//! - map: `source,x[,y],bx[,by],mass`, one row per transported atom

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::embedding::{EmbeddingMap, MobilityField};
use crate::error::{Error, Result};
use crate::grid::{Axis, Density, Grid};
use crate::linalg::Mat2;
use crate::maps::TransportMap;
use crate::scalar::Real;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

fn coord_header(dim: usize) -> Vec<&'static str> {
    if dim == 1 {
        vec!["x"]
    } else {
        vec!["x", "y"]
    }
}

fn fmt<T: Real>(v: T) -> String {
    format!("{:e}", v.to_f64_lossy())
}

/// Numeric rows of a CSV file; a first row that does not parse is taken as
/// a header and skipped.
fn read_rows(input: impl Read) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(v) => out.push(v),
            Err(_) if k == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", k + 1))),
        }
    }
    Ok(out)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Recovers a uniform tensor grid from node coordinates listed axis-0 fastest.
fn grid_from_coords<T: Real>(coords: &[Vec<f64>], dim: usize) -> Result<Grid<T>> {
    let axis_of = |k: usize, stride: usize, count: usize| -> Result<Axis<T>> {
        let vals: Vec<f64> = (0..count).map(|i| coords[i * stride][k]).collect();
        if count < 2 {
            return Err(Error::InvalidGrid("need at least two nodes per axis".into()));
        }
        let h = (vals[count - 1] - vals[0]) / (count - 1) as f64;
        for (i, &v) in vals.iter().enumerate() {
            if (v - (vals[0] + i as f64 * h)).abs() > 1e-9 * h.abs().max(1.0) {
                return Err(Error::InvalidGrid(format!("axis {k} is not uniformly spaced at node {i}")));
            }
        }
        Ok(Axis { min: T::lit(vals[0]), max: T::lit(vals[count - 1]), n: count })
    };
    let g = if dim == 1 {
        Grid::new(vec![axis_of(0, 1, coords.len())?])?
    } else {
        let nx = coords.iter().take_while(|c| c[1] == coords[0][1]).count();
        if nx == 0 || coords.len() % nx != 0 {
            return Err(Error::InvalidGrid("2D nodes must be listed x-fastest on a full tensor grid".into()));
        }
        Grid::new(vec![axis_of(0, 1, nx)?, axis_of(1, nx, coords.len() / nx)?])?
    };
    for (i, c) in coords.iter().enumerate() {
        let p = g.node(i);
        for k in 0..dim {
            if (p[k].to_f64_lossy() - c[k]).abs() > 1e-9 * (1.0 + c[k].abs()) {
                return Err(Error::InvalidGrid(format!("node {i} is out of order")));
            }
        }
    }
    Ok(g)
}

/// Reads a friction field `B` and the grid it lives on; the dimension is
/// inferred from the column count (2 for 1D, 6 for 2D).
pub fn read_mobility<T: Real>(input: impl Read) -> Result<MobilityField<T>> {
    let rows = read_rows(input)?;
    let dim = match rows.first().map(|r| r.len()) {
        Some(2) => 1,
        Some(6) => 2,
        Some(c) => return Err(Error::Parse(format!("mobility rows need 2 (1D) or 6 (2D) columns, found {c}"))),
        None => return Err(Error::Parse("empty mobility file".into())),
    };
    if rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(Error::Parse("ragged mobility rows".into()));
    }
    let g = grid_from_coords::<T>(&rows, dim)?;
    if dim == 1 {
        let b: Vec<T> = rows.iter().map(|r| T::lit(r[1])).collect();
        MobilityField::scalar_1d(&g, &b)
    } else {
        let b: Vec<Mat2<T>> = rows
            .iter()
            .map(|r| Mat2::new(T::lit(r[2]), T::lit(r[3]), T::lit(r[4]), T::lit(r[5])))
            .collect();
        MobilityField::from_friction(&g, b)
    }
}

pub fn read_mobility_file<T: Real>(path: &Path) -> Result<MobilityField<T>> {
    read_mobility(open(path)?)
}

pub fn write_mobility<T: Real>(field: &MobilityField<T>, out: impl Write) -> Result<()> {
    let g = field.grid();
    let mut w = csv::Writer::from_writer(out);
    let mut head = coord_header(g.dim());
    head.extend(if g.dim() == 1 { vec!["b11"] } else { vec!["b11", "b12", "b21", "b22"] });
    w.write_record(&head).map_err(|e| Error::Parse(e.to_string()))?;
    for i in 0..g.len() {
        let p = g.node(i);
        let b = field.b(i);
        let mut rec: Vec<String> = (0..g.dim()).map(|k| fmt(p[k])).collect();
        if g.dim() == 1 {
            rec.push(fmt(b.m[0][0]));
        } else {
            rec.extend([b.m[0][0], b.m[0][1], b.m[1][0], b.m[1][1]].iter().map(|&v| fmt(v)));
        }
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_embedding<T: Real>(b: &EmbeddingMap<T>, out: impl Write) -> Result<()> {
    let g = b.grid();
    let mut w = csv::Writer::from_writer(out);
    let mut head = coord_header(g.dim());
    head.extend(if b.q() == 1 { vec!["b1"] } else { vec!["b1", "b2"] });
    w.write_record(&head).map_err(|e| Error::Parse(e.to_string()))?;
    for i in 0..g.len() {
        let p = g.node(i);
        let y = b.value(i);
        let mut rec: Vec<String> = (0..g.dim()).map(|k| fmt(p[k])).collect();
        rec.extend((0..b.q()).map(|k| fmt(y[k])));
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

/// Reads one value per node (`x[,y],value`) on a known grid; node
/// coordinates must match.
pub fn read_nodal<T: Real>(grid: &Grid<T>, input: impl Read) -> Result<Vec<T>> {
    let rows = read_rows(input)?;
    let d = grid.dim();
    if rows.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), found: rows.len() });
    }
    let mut vals = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d + 1 {
            return Err(Error::Parse(format!("row {} needs {} columns", i + 1, d + 1)));
        }
        let p = grid.node(i);
        for k in 0..d {
            if (p[k].to_f64_lossy() - r[k]).abs() > 1e-9 * (1.0 + r[k].abs()) {
                return Err(Error::GridMismatch);
            }
        }
        vals.push(T::lit(r[d]));
    }
    Ok(vals)
}

pub fn read_nodal_file<T: Real>(grid: &Grid<T>, path: &Path) -> Result<Vec<T>> {
    read_nodal(grid, open(path)?)
}

/// Reads a density on a known grid and normalises it to unit mass.
pub fn read_density<T: Real>(grid: &Grid<T>, input: impl Read) -> Result<Density<T>> {
    Density::normalized(grid.clone(), read_nodal(grid, input)?)
}

pub fn read_density_file<T: Real>(grid: &Grid<T>, path: &Path) -> Result<Density<T>> {
    read_density(grid, open(path)?)
}

pub fn write_density<T: Real>(rho: &Density<T>, out: impl Write) -> Result<()> {
    let g = rho.grid();
    let mut w = csv::Writer::from_writer(out);
    let mut head = coord_header(g.dim());
    head.push("value");
    w.write_record(&head).map_err(|e| Error::Parse(e.to_string()))?;
    for i in 0..g.len() {
        let p = g.node(i);
        let mut rec: Vec<String> = (0..g.dim()).map(|k| fmt(p[k])).collect();
        rec.push(fmt(rho.values()[i]));
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_density_file<T: Real>(rho: &Density<T>, path: &Path) -> Result<()> {
    write_density(rho, create(path)?)
}

pub fn write_map<T: Real>(map: &TransportMap<T>, q: usize, out: impl Write) -> Result<()> {
    let d = map.grid().dim();
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["source"];
    head.extend(coord_header(d));
    head.extend(if q == 1 { vec!["bx"] } else { vec!["bx", "by"] });
    head.push("mass");
    w.write_record(&head).map_err(|e| Error::Parse(e.to_string()))?;
    for a in map.atoms() {
        let mut rec = vec![a.source.to_string()];
        rec.extend((0..d).map(|k| fmt(a.target[k])));
        rec.extend((0..q).map(|k| fmt(a.embedded_target[k])));
        rec.push(fmt(a.mass));
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_json<S: Serialize>(value: &S, out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(out, value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_json_file<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let mut f = create(path)?;
    write_json(value, &mut f)?;
    f.write_all(b"\n").map_err(|e| io_err(path, e))?;
    f.flush().map_err(|e| io_err(path, e))
}
