//! Two-dimensional triangular meshes with oriented edges and tagged boundary.
//!
//! Edges are stored once, oriented from the lower to the higher global vertex
//! index. Every cell lists its three edges with local edge `k` opposite local
//! vertex `k`, plus the sign relating the local traversal
//! `(k + 1) -> (k + 2)` to the global orientation.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Boundary facet tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryTag {
    Wall,
    Inlet(u32),
    Outlet,
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryTag::Wall => write!(f, "wall"),
            BoundaryTag::Inlet(k) => write!(f, "inlet{k}"),
            BoundaryTag::Outlet => write!(f, "outlet"),
        }
    }
}

impl std::str::FromStr for BoundaryTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "wall" => Ok(BoundaryTag::Wall),
            "outlet" => Ok(BoundaryTag::Outlet),
            _ => s
                .strip_prefix("inlet")
                .and_then(|k| k.parse().ok())
                .map(BoundaryTag::Inlet)
                .ok_or_else(|| format!("unknown boundary tag `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFacet {
    pub edge: usize,
    pub tag: BoundaryTag,
}

/// Diagonal direction used to split the squares of a structured grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Diagonal {
    /// Diagonals run from lower-left to upper-right.
    #[default]
    Right,
    /// Diagonals run from lower-right to upper-left.
    Left,
}

impl std::str::FromStr for Diagonal {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "right" => Ok(Diagonal::Right),
            "left" => Ok(Diagonal::Left),
            _ => Err(format!("unknown diagonal `{s}` (expected left|right)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    cell_edges: Vec<[usize; 3]>,
    cell_edge_signs: Vec<[i8; 3]>,
    edge_cells: Vec<[Option<usize>; 2]>,
    boundary: Vec<BoundaryFacet>,
    /// Number of cells whose orientation was flipped while building.
    reoriented: usize,
}

impl Mesh {
    /// Builds a mesh from raw vertices, cells and tagged boundary facets.
    ///
    /// Clockwise cells are reoriented (with a warning). Boundary edges that
    /// are not listed in `facets` are tagged [`BoundaryTag::Wall`].
    pub fn new(
        vertices: Vec<Point>,
        cells: Vec<[usize; 3]>,
        facets: &[(usize, usize, BoundaryTag)],
    ) -> Result<Self> {
        let nv = vertices.len();
        if vertices
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Validation("non-finite vertex coordinate".into()));
        }
        let mut cells = cells;
        let mut reoriented = 0;
        for (c, cell) in cells.iter_mut().enumerate() {
            if let Some(&v) = cell.iter().find(|&&v| v >= nv) {
                return Err(Error::Validation(format!(
                    "cell {c} references vertex {v} but only {nv} vertices exist"
                )));
            }
            if cell[0] == cell[1] || cell[1] == cell[2] || cell[0] == cell[2] {
                return Err(Error::Validation(format!("cell {c} has repeated vertices")));
            }
            let area = signed_area(&vertices, cell);
            if area == 0.0 {
                return Err(Error::Validation(format!("cell {c} has zero area")));
            }
            if area < 0.0 {
                log::warn!("cell {c} is clockwise; reorienting");
                cell.swap(1, 2);
                reoriented += 1;
            }
        }

        let mut edge_index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut edge_cells: Vec<[Option<usize>; 2]> = Vec::new();
        let mut cell_edges = Vec::with_capacity(cells.len());
        let mut cell_edge_signs = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let mut ce = [0; 3];
            let mut cs = [0i8; 3];
            for k in 0..3 {
                let a = cell[(k + 1) % 3];
                let b = cell[(k + 2) % 3];
                let key = [a.min(b), a.max(b)];
                let e = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edge_cells.push([None, None]);
                    edges.len() - 1
                });
                let slot = &mut edge_cells[e];
                if slot[0].is_none() {
                    slot[0] = Some(c);
                } else if slot[1].is_none() {
                    slot[1] = Some(c);
                } else {
                    return Err(Error::Validation(format!(
                        "edge ({}, {}) shared by more than two cells",
                        key[0], key[1]
                    )));
                }
                ce[k] = e;
                cs[k] = if a < b { 1 } else { -1 };
            }
            cell_edges.push(ce);
            cell_edge_signs.push(cs);
        }

        let mut tags: HashMap<usize, BoundaryTag> = HashMap::new();
        for &(a, b, tag) in facets {
            let key = [a.min(b), a.max(b)];
            let Some(&e) = edge_index.get(&key) else {
                return Err(Error::Validation(format!(
                    "facet ({a}, {b}) is not an edge of the mesh"
                )));
            };
            if edge_cells[e][1].is_some() {
                return Err(Error::Validation(format!(
                    "facet ({a}, {b}) is an interior edge"
                )));
            }
            if tags.insert(e, tag).is_some() {
                return Err(Error::Validation(format!("facet ({a}, {b}) tagged twice")));
            }
        }
        let boundary = (0..edges.len())
            .filter(|&e| edge_cells[e][1].is_none())
            .map(|e| BoundaryFacet {
                edge: e,
                tag: tags.get(&e).copied().unwrap_or(BoundaryTag::Wall),
            })
            .collect();

        Ok(Self {
            vertices,
            cells,
            edges,
            cell_edges,
            cell_edge_signs,
            edge_cells,
            boundary,
            reoriented,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn cell_edges(&self, c: usize) -> [usize; 3] {
        self.cell_edges[c]
    }

    pub fn cell_edge_signs(&self, c: usize) -> [i8; 3] {
        self.cell_edge_signs[c]
    }

    /// Cells adjacent to edge `e`; the second entry is `None` on the boundary.
    pub fn edge_cells(&self, e: usize) -> [Option<usize>; 2] {
        self.edge_cells[e]
    }

    pub fn boundary(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn reoriented_cells(&self) -> usize {
        self.reoriented
    }

    pub fn cell_vertices(&self, c: usize) -> [Point; 3] {
        let [a, b, d] = self.cells[c];
        [self.vertices[a], self.vertices[b], self.vertices[d]]
    }

    pub fn cell_area(&self, c: usize) -> f64 {
        signed_area(&self.vertices, &self.cells[c])
    }

    pub fn centroid(&self, c: usize) -> Point {
        let [a, b, d] = self.cell_vertices(c);
        [(a[0] + b[0] + d[0]) / 3.0, (a[1] + b[1] + d[1]) / 3.0]
    }

    /// Longest edge of cell `c`.
    pub fn cell_diameter(&self, c: usize) -> f64 {
        let p = self.cell_vertices(c);
        (0..3)
            .map(|k| dist(p[k], p[(k + 1) % 3]))
            .fold(0.0, f64::max)
    }

    /// Maximum cell diameter.
    pub fn h(&self) -> f64 {
        (0..self.num_cells())
            .map(|c| self.cell_diameter(c))
            .fold(0.0, f64::max)
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        dist(self.vertices[a], self.vertices[b])
    }

    /// Unit normal of edge `e` fixed by its global orientation: the tangent
    /// `low -> high` rotated clockwise.
    pub fn edge_normal(&self, e: usize) -> Point {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let l = dist(pa, pb);
        let t = [(pb[0] - pa[0]) / l, (pb[1] - pa[1]) / l];
        [t[1], -t[0]]
    }

    /// Outward unit normal of a boundary edge.
    pub fn outward_normal(&self, e: usize) -> Point {
        let c = self.edge_cells[e][0].expect("edge has a cell");
        let n = self.edge_normal(e);
        let [a, _] = self.edges[e];
        let centroid = self.centroid(c);
        let pa = self.vertices[a];
        let inward = (centroid[0] - pa[0]) * n[0] + (centroid[1] - pa[1]) * n[1];
        if inward > 0.0 {
            [-n[0], -n[1]]
        } else {
            n
        }
    }

    /// Local index (0..3) of edge `e` within cell `c`.
    pub fn local_edge(&self, c: usize, e: usize) -> Option<usize> {
        self.cell_edges[c].iter().position(|&x| x == e)
    }

    /// Boundary facets carrying `tag`.
    pub fn facets_with_tag(&self, tag: BoundaryTag) -> impl Iterator<Item = &BoundaryFacet> {
        self.boundary.iter().filter(move |f| f.tag == tag)
    }

    pub fn tags(&self) -> Vec<BoundaryTag> {
        let mut t: Vec<_> = self.boundary.iter().map(|f| f.tag).collect();
        t.sort();
        t.dedup();
        t
    }

    /// Checks the structural invariants: positive areas, edge incidence
    /// counts, and the Euler relation for a simply connected domain.
    pub fn check_invariants(&self) -> Result<()> {
        for c in 0..self.num_cells() {
            if self.cell_area(c) <= 0.0 {
                return Err(Error::Validation(format!("cell {c} has non-positive area")));
            }
        }
        let euler =
            self.num_vertices() as i64 - self.num_edges() as i64 + self.num_cells() as i64 + 1;
        if euler != 2 {
            return Err(Error::Validation(format!(
                "Euler characteristic V - E + F = {euler}, expected 2"
            )));
        }
        let mut count = vec![0usize; self.num_edges()];
        for ce in &self.cell_edges {
            for &e in ce {
                count[e] += 1;
            }
        }
        let nb = self.boundary.len();
        let single = count.iter().filter(|&&k| k == 1).count();
        if single != nb || count.iter().any(|&k| k == 0 || k > 2) {
            return Err(Error::Validation("inconsistent edge incidence".into()));
        }
        let mut seen = vec![false; self.num_edges()];
        for f in &self.boundary {
            if seen[f.edge] || count[f.edge] != 1 {
                return Err(Error::Validation(
                    "boundary tags do not partition boundary".into(),
                ));
            }
            seen[f.edge] = true;
        }
        Ok(())
    }

    fn facet_list(&self) -> Vec<(usize, usize, BoundaryTag)> {
        self.boundary
            .iter()
            .map(|f| {
                let [a, b] = self.edges[f.edge];
                (a, b, f.tag)
            })
            .collect()
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
}

fn signed_area(vertices: &[Point], cell: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Uniform `n x n` triangulation of the unit square; the whole boundary is
/// tagged as wall.
pub fn unit_square_mesh(n: usize, diagonal: Diagonal) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "unit_square_mesh needs n >= 1".into(),
        ));
    }
    let breaks: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let (vertices, cells) = tensor_grid(&breaks, &breaks, diagonal, |_, _| true);
    Mesh::new(vertices, cells, &[])
}

// Triangulates the cells of a tensor grid for which `keep(i, j)` holds.
// Unused vertices are dropped; vertex numbering is row-major.
fn tensor_grid(
    xs: &[f64],
    ys: &[f64],
    diagonal: Diagonal,
    keep: impl Fn(usize, usize) -> bool,
) -> (Vec<Point>, Vec<[usize; 3]>) {
    let nx = xs.len() - 1;
    let ny = ys.len() - 1;
    let grid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut used = vec![false; (nx + 1) * (ny + 1)];
    let mut raw_cells = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !keep(i, j) {
                continue;
            }
            let v00 = grid(i, j);
            let v10 = grid(i + 1, j);
            let v01 = grid(i, j + 1);
            let v11 = grid(i + 1, j + 1);
            let tris = match diagonal {
                Diagonal::Right => [[v00, v10, v11], [v00, v11, v01]],
                Diagonal::Left => [[v00, v10, v01], [v10, v11, v01]],
            };
            for t in tris {
                for &v in &t {
                    used[v] = true;
                }
                raw_cells.push(t);
            }
        }
    }
    let mut renumber = vec![usize::MAX; used.len()];
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let g = grid(i, j);
            if used[g] {
                renumber[g] = vertices.len();
                vertices.push([xs[i], ys[j]]);
            }
        }
    }
    let cells = raw_cells
        .into_iter()
        .map(|t| [renumber[t[0]], renumber[t[1]], renumber[t[2]]])
        .collect();
    (vertices, cells)
}

/// Parameters of the two-inlet, one-outlet junction channel.
///
/// Two vertical inlet arms of width `inlet_width` and length `inlet_length`
/// meet a horizontal outlet channel of height `outlet_width` that runs for
/// `outlet_length` to the right of the arms. Inlet 1 is the top arm, inlet 2
/// the bottom arm. With `inlet_length == 0` the domain degenerates to a
/// straight channel whose left end is inlet 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct JunctionGeometry {
    pub inlet_width: f64,
    pub outlet_width: f64,
    pub inlet_length: f64,
    pub outlet_length: f64,
    /// Target mesh size.
    pub h: f64,
}

impl Default for JunctionGeometry {
    fn default() -> Self {
        Self {
            inlet_width: 1.0,
            outlet_width: 1.0,
            inlet_length: 2.0,
            outlet_length: 4.0,
            h: 0.1,
        }
    }
}

impl JunctionGeometry {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("inlet_width", self.inlet_width),
            ("outlet_width", self.outlet_width),
            ("outlet_length", self.outlet_length),
            ("h", self.h),
        ];
        for (name, v) in vals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGeometry(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.inlet_length.is_finite() && self.inlet_length >= 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "inlet_length must be non-negative, got {}",
                self.inlet_length
            )));
        }
        if self.h > self.inlet_width.min(self.outlet_width) {
            return Err(Error::InvalidGeometry(format!(
                "mesh size {} does not resolve the channel width",
                self.h
            )));
        }
        Ok(())
    }

    /// Total inflow cross-section length of inlet `k` (1 or 2).
    pub fn inlet_span(&self) -> f64 {
        if self.inlet_length == 0.0 {
            self.outlet_width
        } else {
            self.inlet_width
        }
    }
}

fn subdivide(breaks: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let m = (len / h - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=m {
            out.push(if k == m {
                w[1]
            } else {
                w[0] + len * k as f64 / m as f64
            });
        }
    }
    out
}

/// Structured-block triangulation of the junction channel.
pub fn junction_mesh(geom: &JunctionGeometry) -> Result<Mesh> {
    geom.validate()?;
    let half = 0.5 * geom.outlet_width;
    let x_break = [0.0, geom.inlet_width, geom.inlet_width + geom.outlet_length];
    let y_break = [
        -half - geom.inlet_length,
        -half,
        half,
        half + geom.inlet_length,
    ];
    let straight = geom.inlet_length == 0.0;
    let x_total = if straight {
        geom.inlet_width + geom.outlet_length
    } else {
        x_break[2]
    };
    let xs = if straight {
        subdivide(&[0.0, x_total], geom.h)
    } else {
        subdivide(&x_break, geom.h)
    };
    let ys = subdivide(&y_break, geom.h);
    let eps = 1e-12 * (x_total + geom.outlet_width + 2.0 * geom.inlet_length);
    let inside = |x: f64, y: f64| {
        let in_channel = y > -half && y < half;
        let in_arms = x < geom.inlet_width;
        in_channel || in_arms
    };
    let (vertices, cells) = tensor_grid(&xs, &ys, Diagonal::Right, |i, j| {
        let xc = 0.5 * (xs[i] + xs[i + 1]);
        let yc = 0.5 * (ys[j] + ys[j + 1]);
        inside(xc, yc)
    });

    // Tag by facet midpoint position.
    let probe = Mesh::new(vertices.clone(), cells.clone(), &[])?;
    let top = half + geom.inlet_length;
    let right = x_total;
    let facets: Vec<_> = probe
        .boundary()
        .iter()
        .map(|f| {
            let [a, b] = probe.edges()[f.edge];
            let (pa, pb) = (probe.vertices()[a], probe.vertices()[b]);
            let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
            let tag = if (mid[0] - right).abs() < eps {
                BoundaryTag::Outlet
            } else if (straight && mid[0].abs() < eps) || (!straight && (mid[1] - top).abs() < eps)
            {
                BoundaryTag::Inlet(1)
            } else if !straight && (mid[1] + top).abs() < eps {
                BoundaryTag::Inlet(2)
            } else {
                BoundaryTag::Wall
            };
            (a, b, tag)
        })
        .collect();
    let mesh = Mesh::new(vertices, cells, &facets)?;
    mesh.check_invariants()?;
    Ok(mesh)
}

/// Writes the ASCII mesh format (`sosm-mesh 1`).
pub fn write_mesh(mesh: &Mesh, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "sosm-mesh 1")?;
    writeln!(out, "vertices {}", mesh.num_vertices())?;
    for p in mesh.vertices() {
        writeln!(out, "{} {}", p[0], p[1])?;
    }
    writeln!(out, "cells {}", mesh.num_cells())?;
    for c in mesh.cells() {
        writeln!(out, "{} {} {}", c[0], c[1], c[2])?;
    }
    let facets = mesh.facet_list();
    writeln!(out, "facets {}", facets.len())?;
    for (a, b, tag) in facets {
        writeln!(out, "{a} {b} {tag}")?;
    }
    Ok(())
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_mesh(mesh, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_mesh(std::io::BufReader::new(file), path)
}

/// Parses the ASCII mesh format; `origin` is only used in error messages.
pub fn read_mesh(input: impl BufRead, origin: &Path) -> Result<Mesh> {
    let mut lines = input
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut next = |expect: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(l))) => Ok((n, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(perr(
                0,
                format!("unexpected end of file, expected {expect}"),
            )),
        }
    };

    let (n, header) = next("header")?;
    if header.trim() != "sosm-mesh 1" {
        return Err(perr(n, format!("bad header `{}`", header.trim())));
    }
    let section = |n: usize, line: &str, name: &str| -> Result<usize> {
        let mut it = line.split_whitespace();
        match (it.next(), it.next().map(str::parse::<usize>), it.next()) {
            (Some(s), Some(Ok(k)), None) if s == name => Ok(k),
            _ => Err(perr(
                n,
                format!("expected `{name} <count>`, got `{}`", line.trim()),
            )),
        }
    };

    let (n, l) = next("vertices section")?;
    let nv = section(n, &l, "vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = next("vertex")?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(n, format!("bad vertex: {e}")))?;
        if v.len() != 2 {
            return Err(perr(
                n,
                format!("vertex needs 2 coordinates, got {}", v.len()),
            ));
        }
        vertices.push([v[0], v[1]]);
    }

    let (n, l) = next("cells section")?;
    let nc = section(n, &l, "cells")?;
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (n, l) = next("cell")?;
        let v: Vec<usize> = l
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| perr(n, format!("bad cell: {e}")))?;
        if v.len() != 3 {
            return Err(perr(n, format!("cell needs 3 vertices, got {}", v.len())));
        }
        cells.push([v[0], v[1], v[2]]);
    }

    let (n, l) = next("facets section")?;
    let nf = section(n, &l, "facets")?;
    let mut facets = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (n, l) = next("facet")?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(perr(n, "facet needs `i j tag`".into()));
        }
        let a = parts[0]
            .parse()
            .map_err(|e| perr(n, format!("bad facet: {e}")))?;
        let b = parts[1]
            .parse()
            .map_err(|e| perr(n, format!("bad facet: {e}")))?;
        let tag = parts[2].parse().map_err(|e| perr(n, e))?;
        facets.push((a, b, tag));
    }
    Mesh::new(vertices, cells, &facets)
}
