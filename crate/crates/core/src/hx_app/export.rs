use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::levelset::indicator_from_levelset;
use crate::mesh_fem::{Field, Mesh};
use crate::optimizer::IterationRecord;
use crate::sensitivity::PrimalState;

/// Legacy ASCII VTK unstructured grid with the design and all states as
/// point data.
pub fn export_fields(mesh: &Mesh, phi: &Field, primal: &PrimalState, path: &Path) -> Result<()> {
    let (chi_hot, _) = indicator_from_levelset(phi);
    let combined = primal.combined_velocity();
    let scalars: [(&str, &Field); 5] = [
        ("phi", phi),
        ("chi_H", &chi_hot),
        ("p_C", &primal.cold.pressure),
        ("p_H", &primal.hot.pressure),
        ("T", &primal.thermal.temperature),
    ];
    let vectors: [(&str, &Field); 3] = [
        ("u_C", &primal.cold.velocity),
        ("u_H", &primal.hot.velocity),
        ("u", &combined),
    ];

    let dim = mesh.dim();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nhxtopo design\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_nodes());
    for v in 0..mesh.n_nodes() {
        let p = mesh.point(v);
        let z = if dim == 3 { p[2] } else { 0.0 };
        let _ = writeln!(s, "{} {} {}", p[0], p[1], z);
    }
    let nv = dim + 1;
    let _ = writeln!(s, "CELLS {} {}", mesh.n_cells(), mesh.n_cells() * (nv + 1));
    for c in 0..mesh.n_cells() {
        let _ = write!(s, "{nv}");
        for v in mesh.cell(c) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "CELL_TYPES {}", mesh.n_cells());
    let kind = if dim == 2 { "5\n" } else { "10\n" };
    for _ in 0..mesh.n_cells() {
        s.push_str(kind);
    }
    let _ = writeln!(s, "POINT_DATA {}", mesh.n_nodes());
    for (name, f) in scalars {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in f.values() {
            let _ = writeln!(s, "{v}");
        }
    }
    for (name, f) in vectors {
        let _ = writeln!(s, "VECTORS {name} double");
        for v in 0..mesh.n_nodes() {
            let u = f.at(v);
            let z = if dim == 3 { u[2] } else { 0.0 };
            let _ = writeln!(s, "{} {} {}", u[0], u[1], z);
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Point data read back from a file written by [`export_fields`].
#[derive(Clone, Debug, PartialEq)]
pub struct VtkPointData {
    pub n_points: usize,
    pub n_cells: usize,
    /// Field name, components, values in file order.
    pub fields: Vec<(String, usize, Vec<f64>)>,
}

impl VtkPointData {
    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.fields
            .iter()
            .find(|f| f.0 == name)
            .map(|f| f.2.as_slice())
    }
}

pub fn read_vtk(path: &Path) -> Result<VtkPointData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::invalid(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let mut out = VtkPointData {
        n_points: 0,
        n_cells: 0,
        fields: Vec::new(),
    };
    let count = |line: &str| -> Result<usize> {
        line.split_whitespace()
            .nth(1)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad count"))
    };
    while let Some(line) = lines.next() {
        let head = line.split_whitespace().next().unwrap_or("");
        match head {
            "POINTS" => out.n_points = count(line)?,
            "CELLS" => out.n_cells = count(line)?,
            "SCALARS" | "VECTORS" => {
                let name = line
                    .split_whitespace()
                    .nth(1)
                    .ok_or_else(|| bad("unnamed field"))?
                    .to_string();
                let comps = if head == "VECTORS" { 3 } else { 1 };
                if head == "SCALARS" {
                    lines.next();
                }
                let mut values = Vec::with_capacity(out.n_points * comps);
                while values.len() < out.n_points * comps {
                    let l = lines.next().ok_or_else(|| bad("truncated field"))?;
                    for t in l.split_whitespace() {
                        values.push(t.parse::<f64>().map_err(|_| bad("bad number"))?);
                    }
                }
                out.fields.push((name, comps, values));
            }
            _ => {}
        }
    }
    Ok(out)
}

pub const HISTORY_HEADER: &str = "iter,J,G1,G2,merit,t_hat,theta_max,tau,reinit,Da";

/// Appends one CSV row per iteration, flushed immediately.
pub struct HistoryWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl HistoryWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = HistoryWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        w.line(HISTORY_HEADER)?;
        Ok(w)
    }

    pub fn append(&mut self, r: &IterationRecord) -> Result<()> {
        let g = |i: usize| r.g.get(i).copied().unwrap_or(f64::NAN);
        let row = format!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.j,
            g(0),
            g(1),
            r.merit,
            r.t_hat,
            r.theta_max,
            r.tau,
            u8::from(r.reinit),
            r.da
        );
        self.line(&row)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
