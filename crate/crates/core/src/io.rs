//! Legacy ASCII VTK output.
//!
//! Cells are written as disconnected triangles (three points per cell) so
//! that continuous fields, discontinuous piecewise-linear fields and
//! cellwise constants can share one file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::assembly::{Block, MixtureState, Spaces};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::solver::{Derived, SolutionState};

/// Where the values of a field live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// One value per mesh vertex.
    Vertex,
    /// One value per cell corner, `values[(3 * cell + corner) * components + k]`.
    Corner,
    /// One value per cell.
    Cell,
}

#[derive(Debug, Clone)]
pub struct VtkField {
    pub name: String,
    pub location: Location,
    /// 1, 2 or 3. Two-component fields are written as vectors with `z = 0`.
    pub components: usize,
    pub values: Vec<f64>,
}

impl VtkField {
    pub fn scalar(name: impl Into<String>, location: Location, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            location,
            components: 1,
            values,
        }
    }

    pub fn vector(name: impl Into<String>, location: Location, values: Vec<[f64; 2]>) -> Self {
        Self {
            name: name.into(),
            location,
            components: 2,
            values: values.into_iter().flatten().collect(),
        }
    }

    /// Symmetric tensor stored as `[xx, xy, yy]`.
    pub fn sym_tensor(name: impl Into<String>, location: Location, values: Vec<[f64; 3]>) -> Self {
        Self {
            name: name.into(),
            location,
            components: 3,
            values: values.into_iter().flatten().collect(),
        }
    }

    fn expected_len(&self, mesh: &Mesh) -> usize {
        let n = match self.location {
            Location::Vertex => mesh.num_vertices(),
            Location::Corner => 3 * mesh.num_cells(),
            Location::Cell => mesh.num_cells(),
        };
        n * self.components
    }
}

pub fn write_vtk(mesh: &Mesh, fields: &[VtkField], out: impl Write) -> Result<()> {
    for f in fields {
        if f.name.is_empty() || f.name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!(
                "bad VTK field name `{}`",
                f.name
            )));
        }
        if !(1..=3).contains(&f.components) || f.values.len() != f.expected_len(mesh) {
            return Err(Error::LayoutMismatch(format!(
                "field `{}` has {} values, expected {} ({:?}, {} components)",
                f.name,
                f.values.len(),
                f.expected_len(mesh),
                f.location,
                f.components
            )));
        }
    }
    let mut out = BufWriter::new(out);
    let nc = mesh.num_cells();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "sosm output")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", 3 * nc)?;
    for cell in mesh.cells() {
        for &v in cell {
            let p = mesh.vertices()[v];
            writeln!(out, "{:.17e} {:.17e} 0", p[0], p[1])?;
        }
    }
    writeln!(out, "CELLS {nc} {}", 4 * nc)?;
    for c in 0..nc {
        writeln!(out, "3 {} {} {}", 3 * c, 3 * c + 1, 3 * c + 2)?;
    }
    writeln!(out, "CELL_TYPES {nc}")?;
    for _ in 0..nc {
        writeln!(out, "5")?;
    }

    let (point_fields, cell_fields): (Vec<_>, Vec<_>) =
        fields.iter().partition(|f| f.location != Location::Cell);
    if !point_fields.is_empty() {
        writeln!(out, "POINT_DATA {}", 3 * nc)?;
        for f in point_fields {
            let k = f.components;
            let rows = (0..nc)
                .flat_map(|c| (0..3).map(move |a| (c, a)))
                .map(|(c, a)| {
                    let at = match f.location {
                        Location::Vertex => mesh.cells()[c][a],
                        _ => 3 * c + a,
                    };
                    &f.values[at * k..(at + 1) * k]
                });
            write_block(&mut out, f, rows)?;
        }
    }
    if !cell_fields.is_empty() {
        writeln!(out, "CELL_DATA {nc}")?;
        for f in cell_fields {
            write_block(&mut out, f, f.values.chunks(f.components))?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_block<'a>(
    out: &mut impl Write,
    f: &VtkField,
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<()> {
    if f.components == 2 {
        writeln!(out, "VECTORS {} double", f.name)?;
        for r in rows {
            writeln!(out, "{:.17e} {:.17e} 0", r[0], r[1])?;
        }
    } else {
        writeln!(out, "SCALARS {} double {}", f.name, f.components)?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for r in rows {
            let line: Vec<String> = r.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

pub fn save_vtk(mesh: &Mesh, fields: &[VtkField], path: &Path) -> Result<()> {
    write_vtk(mesh, fields, File::create(path)?)
}

/// Factors converting solver units to output units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldUnits {
    pub potential: f64,
    pub stress: f64,
    pub velocity: f64,
    pub concentration: f64,
}

impl Default for FieldUnits {
    fn default() -> Self {
        Self {
            potential: 1.0,
            stress: 1.0,
            velocity: 1.0,
            concentration: 1.0,
        }
    }
}

/// Potentials, stresses, pressures and velocities at cell corners, cell
/// concentrations, and the postprocessed fields.
pub fn solution_fields(
    mesh: &Mesh,
    spaces: &Spaces,
    state: &MixtureState,
    sol: &SolutionState,
    derived: &Derived,
    units: FieldUnits,
) -> Vec<VtkField> {
    let n = state.num_species();
    let corners = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let at_corners = |space: &crate::fe::FunctionSpace, x: &[f64], k: usize, scale: f64| {
        let mut out = Vec::with_capacity(3 * k * mesh.num_cells());
        for c in 0..mesh.num_cells() {
            let tab = space.tabulate(mesh, c, &corners);
            let (v, _) = space.evaluate(c, &tab, x);
            out.extend(v.iter().map(|v| v * scale));
        }
        out
    };
    let mut fields = Vec::new();
    for i in 0..n {
        fields.push(VtkField::scalar(
            format!("mu_{}", i + 1),
            Location::Corner,
            at_corners(&spaces.potential, sol.potential(i), 1, units.potential),
        ));
    }
    fields.push(VtkField {
        name: "tau".into(),
        location: Location::Corner,
        components: 3,
        values: at_corners(&spaces.stress, sol.stress(), 3, units.stress),
    });
    fields.push(VtkField::scalar(
        "p",
        Location::Corner,
        at_corners(&spaces.pressure, sol.pressure(), 1, units.stress),
    ));
    for blk in (0..n).map(Block::SpeciesVelocity).chain([Block::Velocity]) {
        let name = match blk {
            Block::SpeciesVelocity(i) => format!("v_{}", i + 1),
            _ => "v".into(),
        };
        fields.push(VtkField {
            name,
            location: Location::Corner,
            components: 2,
            values: at_corners(&spaces.velocity, sol.block(blk), 2, units.velocity),
        });
    }
    for i in 0..n {
        let c: Vec<f64> = (0..mesh.num_cells())
            .map(|c| state.cell_concentrations(c)[i] * units.concentration)
            .collect();
        fields.push(VtkField::scalar(format!("c_{}", i + 1), Location::Cell, c));
    }
    fields.push(VtkField::sym_tensor(
        "sigma",
        Location::Corner,
        derived
            .total_stress
            .iter()
            .map(|s| s.map(|v| v * units.stress))
            .collect(),
    ));
    fields.push(VtkField::scalar(
        "mechanical_pressure",
        Location::Corner,
        derived
            .mechanical_pressure
            .iter()
            .map(|v| v * units.stress)
            .collect(),
    ));
    fields.push(VtkField::vector(
        "mass_average_defect",
        Location::Corner,
        derived
            .defect
            .iter()
            .map(|d| d.map(|v| v * units.velocity))
            .collect(),
    ));
    fields.push(VtkField::scalar(
        "shifted_pressure",
        Location::Vertex,
        derived
            .shifted_pressure
            .iter()
            .map(|v| v * units.stress)
            .collect(),
    ));
    fields
}

/// Section counts and field names of a legacy VTK file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VtkSummary {
    pub points: usize,
    pub cells: usize,
    pub point_fields: Vec<String>,
    pub cell_fields: Vec<String>,
}

/// Reads the header lines of a file produced by [`write_vtk`].
pub fn read_vtk_summary(path: &Path) -> Result<VtkSummary> {
    let reader = BufReader::new(File::open(path)?);
    let mut s = VtkSummary::default();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut in_cell_data = false;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let words: Vec<&str> = line.split_whitespace().collect();
        let count = || {
            words
                .get(1)
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| parse_err(k + 1, format!("missing count in `{line}`")))
        };
        match words.first().copied() {
            Some("POINTS") => s.points = count()?,
            Some("CELLS") => s.cells = count()?,
            Some("POINT_DATA") => in_cell_data = false,
            Some("CELL_DATA") => in_cell_data = true,
            Some("SCALARS") | Some("VECTORS") => {
                let name = words
                    .get(1)
                    .ok_or_else(|| parse_err(k + 1, "missing field name".into()))?
                    .to_string();
                if in_cell_data {
                    s.cell_fields.push(name);
                } else {
                    s.point_fields.push(name);
                }
            }
            _ => {}
        }
    }
    if s.points == 0 {
        return Err(parse_err(0, "no POINTS section".into()));
    }
    Ok(s)
}
