//! Finite element spaces on triangles: continuous P1/P2 scalars,
//! discontinuous P1 vectors and the conforming Arnold-Winther symmetric
//! stress element.
//!
//! The Arnold-Winther basis is built on every physical cell by a small
//! constrained solve in a centred, diameter-scaled monomial frame, so no
//! reference-element transformation is needed. Edge moments use the normal
//! fixed by the global edge orientation, which makes the edge functionals of
//! the two neighbouring cells identical.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::mesh::{Mesh, Point};
use crate::quadrature::{quadrature, EdgeRule, QuadratureRule};

/// Conditioning limit beyond which an Arnold-Winther cell is rejected.
pub const AW_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Cg1,
    Cg2,
    /// Discontinuous piecewise-linear 2-vectors.
    Dg1Vec,
    /// Lowest-order conforming Arnold-Winther symmetric tensors.
    Aw,
}

impl Space {
    pub fn local_dim(self) -> usize {
        match self {
            Space::Cg1 => 3,
            Space::Cg2 | Space::Dg1Vec => 6,
            Space::Aw => 24,
        }
    }

    /// Number of stored components per basis value (tensors as xx, xy, yy).
    pub fn value_size(self) -> usize {
        match self {
            Space::Cg1 | Space::Cg2 => 1,
            Space::Dg1Vec => 2,
            Space::Aw => 3,
        }
    }

    /// Gradient for scalar spaces, divergence for the vector and tensor ones.
    pub fn deriv_size(self) -> usize {
        match self {
            Space::Cg1 | Space::Cg2 | Space::Aw => 2,
            Space::Dg1Vec => 1,
        }
    }
}

/// Mesh entity owning a degree of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Vertex(usize),
    Edge(usize),
    Cell(usize),
}

#[derive(Debug, Clone)]
pub struct DofMap {
    pub space: Space,
    dim: usize,
    nloc: usize,
    cell_dofs: Vec<usize>,
    owner: Vec<Entity>,
}

impl DofMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn local_dim(&self) -> usize {
        self.nloc
    }

    pub fn cell_dofs(&self, c: usize) -> &[usize] {
        &self.cell_dofs[c * self.nloc..(c + 1) * self.nloc]
    }

    pub fn owner(&self, dof: usize) -> Entity {
        self.owner[dof]
    }
}

pub fn build_dofmap(space: Space, mesh: &Mesh) -> DofMap {
    let (nv, ne, nc) = (mesh.num_vertices(), mesh.num_edges(), mesh.num_cells());
    let nloc = space.local_dim();
    let mut cell_dofs = Vec::with_capacity(nc * nloc);
    let owner: Vec<Entity> = match space {
        Space::Cg1 => {
            for cell in mesh.cells() {
                cell_dofs.extend_from_slice(cell);
            }
            (0..nv).map(Entity::Vertex).collect()
        }
        Space::Cg2 => {
            for (c, cell) in mesh.cells().iter().enumerate() {
                cell_dofs.extend_from_slice(cell);
                cell_dofs.extend(mesh.cell_edges(c).iter().map(|e| nv + e));
            }
            (0..nv)
                .map(Entity::Vertex)
                .chain((0..ne).map(Entity::Edge))
                .collect()
        }
        Space::Dg1Vec => {
            cell_dofs.extend(0..6 * nc);
            (0..6 * nc).map(|d| Entity::Cell(d / 6)).collect()
        }
        Space::Aw => {
            for (c, cell) in mesh.cells().iter().enumerate() {
                for &v in cell {
                    cell_dofs.extend((0..3).map(|k| 3 * v + k));
                }
                for e in mesh.cell_edges(c) {
                    cell_dofs.extend((0..4).map(|k| 3 * nv + 4 * e + k));
                }
                cell_dofs.extend((0..3).map(|k| 3 * nv + 4 * ne + 3 * c + k));
            }
            (0..nv)
                .flat_map(|v| [Entity::Vertex(v); 3])
                .chain((0..ne).flat_map(|e| [Entity::Edge(e); 4]))
                .chain((0..nc).flat_map(|c| [Entity::Cell(c); 3]))
                .collect()
        }
    };
    DofMap {
        space,
        dim: owner.len(),
        nloc,
        cell_dofs,
        owner,
    }
}

/// Affine geometry of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub vertices: [Point; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
    /// For local edge `k`: true if its global orientation runs from local
    /// vertex `k + 1` to `k + 2` (indices mod 3).
    pub edge_forward: [bool; 3],
}

impl CellGeometry {
    pub fn new(mesh: &Mesh, c: usize) -> Self {
        let s = mesh.cell_edge_signs(c);
        Self::from_vertices(mesh.cell_vertices(c), [s[0] > 0, s[1] > 0, s[2] > 0])
    }

    /// Geometry of a counterclockwise triangle with explicit edge orientation.
    pub fn from_vertices(vertices: [Point; 3], edge_forward: [bool; 3]) -> Self {
        let [p0, p1, p2] = vertices;
        let two_a = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let mut grad_lambda = [[0.0; 2]; 3];
        for (a, g) in grad_lambda.iter_mut().enumerate() {
            let pb = vertices[(a + 1) % 3];
            let pc = vertices[(a + 2) % 3];
            *g = [(pb[1] - pc[1]) / two_a, (pc[0] - pb[0]) / two_a];
        }
        Self {
            vertices,
            area: 0.5 * two_a,
            grad_lambda,
            edge_forward,
        }
    }

    pub fn to_physical(&self, bary: &[f64; 3]) -> Point {
        let mut p = [0.0; 2];
        for (l, v) in bary.iter().zip(&self.vertices) {
            p[0] += l * v[0];
            p[1] += l * v[1];
        }
        p
    }

    pub fn barycentric(&self, p: Point) -> [f64; 3] {
        let v0 = self.vertices[0];
        let mut l = [0.0; 3];
        for a in 1..3 {
            let g = self.grad_lambda[a];
            l[a] = g[0] * (p[0] - v0[0]) + g[1] * (p[1] - v0[1]);
        }
        l[0] = 1.0 - l[1] - l[2];
        l
    }

    pub fn centroid(&self) -> Point {
        self.to_physical(&[1.0 / 3.0; 3])
    }

    pub fn diameter(&self) -> f64 {
        (0..3)
            .map(|k| {
                let (a, b) = (self.vertices[k], self.vertices[(k + 1) % 3]);
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .fold(0.0, f64::max)
    }

    /// Endpoints of local edge `k` in global orientation.
    pub fn edge_endpoints(&self, k: usize) -> [Point; 2] {
        let a = self.vertices[(k + 1) % 3];
        let b = self.vertices[(k + 2) % 3];
        if self.edge_forward[k] {
            [a, b]
        } else {
            [b, a]
        }
    }

    /// Unit normal of local edge `k` fixed by its global orientation.
    pub fn edge_normal(&self, k: usize) -> Point {
        let [a, b] = self.edge_endpoints(k);
        let l = (b[0] - a[0]).hypot(b[1] - a[1]);
        [(b[1] - a[1]) / l, -(b[0] - a[0]) / l]
    }

    /// Physical quadrature weights for a reference rule.
    pub fn weights(&self, rule: &QuadratureRule) -> Vec<f64> {
        rule.weights.iter().map(|w| 2.0 * self.area * w).collect()
    }
}

const MONOMIALS: [(i32, i32); 10] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (2, 0),
    (1, 1),
    (0, 2),
    (3, 0),
    (2, 1),
    (1, 2),
    (0, 3),
];

const AW_EDGE_POINTS: usize = 5;
const AW_INTERIOR_DEGREE: usize = 8;

/// Arnold-Winther shape functions on one physical cell.
///
/// Basis `j` is `sigma_c = sum_m coeffs[j][10 c + m] * xi^a eta^b` with
/// `(xi, eta) = (x - centroid) / scale` and components `c` = xx, xy, yy.
#[derive(Debug, Clone)]
pub struct AwBasis {
    centroid: Point,
    scale: f64,
    coeffs: Vec<[f64; 30]>,
    condition: f64,
}

/// Monomials and their scaled-frame partial derivatives at a point.
struct MonomialValues {
    v: [f64; 10],
    dx: [f64; 10],
    dy: [f64; 10],
}

impl AwBasis {
    pub fn new(geom: &CellGeometry) -> Result<Self> {
        let centroid = geom.centroid();
        let scale = geom.diameter();
        let mut frame = Self {
            centroid,
            scale,
            coeffs: Vec::new(),
            condition: 0.0,
        };

        // Rows 0..6: divergence has no quadratic part. Rows 6..30: DOFs.
        let mut m = DMatrix::<f64>::zeros(30, 30);
        // div_x = d/dxi sxx + d/deta sxy; div_y = d/dxi sxy + d/deta syy.
        for (r, (first, second)) in [(0usize, 1usize), (1, 2)].into_iter().enumerate() {
            let a = 10 * first;
            let b = 10 * second;
            m[(3 * r, a + 6)] = 3.0;
            m[(3 * r, b + 7)] = 1.0;
            m[(3 * r + 1, a + 7)] = 2.0;
            m[(3 * r + 1, b + 8)] = 2.0;
            m[(3 * r + 2, a + 8)] = 1.0;
            m[(3 * r + 2, b + 9)] = 3.0;
        }
        for col in 0..30 {
            let (comp, mono) = (col / 10, col % 10);
            let dofs = aw_functionals(geom, |p| {
                let mut t = [0.0; 3];
                t[comp] = frame.monomials(p).v[mono];
                t
            });
            for (i, d) in dofs.iter().enumerate() {
                m[(6 + i, col)] = *d;
            }
        }

        let svd = SVD::new(m.clone(), false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        };
        if !(condition < AW_CONDITION_LIMIT) {
            return Err(Error::Conditioning {
                cell: None,
                condition,
            });
        }
        let mut rhs = DMatrix::<f64>::zeros(30, 24);
        for j in 0..24 {
            rhs[(6 + j, j)] = 1.0;
        }
        let lu = m.clone().lu();
        let mut x = lu.solve(&rhs).ok_or(Error::Conditioning {
            cell: None,
            condition,
        })?;
        // One refinement step; slivers lose a couple of digits otherwise.
        let residual = &rhs - &m * &x;
        if let Some(dx) = lu.solve(&residual) {
            x += dx;
        }
        frame.coeffs = (0..24)
            .map(|j| std::array::from_fn(|r| x[(r, j)]))
            .collect();
        frame.condition = condition;
        Ok(frame)
    }

    /// 2-norm condition number of the constraint/DOF matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn monomials(&self, p: Point) -> MonomialValues {
        let xi = (p[0] - self.centroid[0]) / self.scale;
        let eta = (p[1] - self.centroid[1]) / self.scale;
        let px = [1.0, xi, xi * xi, xi * xi * xi];
        let py = [1.0, eta, eta * eta, eta * eta * eta];
        let mut out = MonomialValues {
            v: [0.0; 10],
            dx: [0.0; 10],
            dy: [0.0; 10],
        };
        for (m, &(a, b)) in MONOMIALS.iter().enumerate() {
            let (a, b) = (a as usize, b as usize);
            out.v[m] = px[a] * py[b];
            if a > 0 {
                out.dx[m] = a as f64 * px[a - 1] * py[b] / self.scale;
            }
            if b > 0 {
                out.dy[m] = b as f64 * px[a] * py[b - 1] / self.scale;
            }
        }
        out
    }

    /// Values `[xx, xy, yy]` and divergences of all 24 basis tensors at `p`.
    pub fn eval_all(&self, p: Point) -> ([[f64; 3]; 24], [[f64; 2]; 24]) {
        let m = self.monomials(p);
        let mut vals = [[0.0; 3]; 24];
        let mut divs = [[0.0; 2]; 24];
        for (j, c) in self.coeffs.iter().enumerate() {
            let mut t = [0.0; 3];
            let mut dx = [0.0; 3];
            let mut dy = [0.0; 3];
            for comp in 0..3 {
                let k = &c[10 * comp..10 * comp + 10];
                for i in 0..10 {
                    t[comp] += k[i] * m.v[i];
                    dx[comp] += k[i] * m.dx[i];
                    dy[comp] += k[i] * m.dy[i];
                }
            }
            vals[j] = t;
            divs[j] = [dx[0] + dy[1], dx[1] + dy[2]];
        }
        (vals, divs)
    }

    /// Monomial coefficients of basis `j` (component-major).
    pub fn coefficients(&self, j: usize) -> &[f64; 30] {
        &self.coeffs[j]
    }
}

/// Applies the 24 Arnold-Winther degrees of freedom to a tensor field given
/// as `[xx, xy, yy]`.
pub fn aw_functionals(geom: &CellGeometry, f: impl Fn(Point) -> [f64; 3]) -> [f64; 24] {
    let mut out = [0.0; 24];
    for a in 0..3 {
        let t = f(geom.vertices[a]);
        out[3 * a..3 * a + 3].copy_from_slice(&t);
    }
    let rule = EdgeRule::new(2 * AW_EDGE_POINTS - 1);
    for k in 0..3 {
        let [pa, pb] = geom.edge_endpoints(k);
        let n = geom.edge_normal(k);
        let mut acc = [0.0; 4];
        for (s, w) in rule.nodes.iter().zip(&rule.weights) {
            let x = [
                0.5 * (pa[0] + pb[0]) + 0.5 * s * (pb[0] - pa[0]),
                0.5 * (pa[1] + pb[1]) + 0.5 * s * (pb[1] - pa[1]),
            ];
            let t = f(x);
            let sn = [t[0] * n[0] + t[1] * n[1], t[1] * n[0] + t[2] * n[1]];
            for c in 0..2 {
                acc[2 * c] += 0.5 * w * sn[c];
                acc[2 * c + 1] += 0.5 * w * sn[c] * s;
            }
        }
        out[9 + 4 * k..13 + 4 * k].copy_from_slice(&acc);
    }
    let rule = quadrature(AW_INTERIOR_DEGREE).expect("supported degree");
    let mut acc = [0.0; 3];
    for (b, w) in rule.points.iter().zip(&rule.weights) {
        let t = f(geom.to_physical(b));
        for c in 0..3 {
            // Reference weights sum to 1/2, so 2 w is the area-normalised weight.
            acc[c] += 2.0 * w * t[c];
        }
    }
    out[21..24].copy_from_slice(&acc);
    out
}

/// Basis values and derivatives at a set of points.
///
/// `values[(b * num_points + q) * value_size + k]`, likewise for `derivs`.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub num_basis: usize,
    pub num_points: usize,
    pub value_size: usize,
    pub deriv_size: usize,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl Tabulation {
    pub fn value(&self, b: usize, q: usize) -> &[f64] {
        let i = (b * self.num_points + q) * self.value_size;
        &self.values[i..i + self.value_size]
    }

    pub fn deriv(&self, b: usize, q: usize) -> &[f64] {
        let i = (b * self.num_points + q) * self.deriv_size;
        &self.derivs[i..i + self.deriv_size]
    }
}

/// Tabulates `space` on one cell at barycentric points. The Arnold-Winther
/// space needs the cell's basis in `aw`.
pub fn tabulate(
    space: Space,
    geom: &CellGeometry,
    aw: Option<&AwBasis>,
    points: &[[f64; 3]],
) -> Tabulation {
    let nb = space.local_dim();
    let np = points.len();
    let (vs, ds) = (space.value_size(), space.deriv_size());
    let mut t = Tabulation {
        num_basis: nb,
        num_points: np,
        value_size: vs,
        deriv_size: ds,
        values: vec![0.0; nb * np * vs],
        derivs: vec![0.0; nb * np * ds],
    };
    let gl = &geom.grad_lambda;
    for (q, l) in points.iter().enumerate() {
        let mut set = |b: usize, val: &[f64], der: &[f64]| {
            let i = (b * np + q) * vs;
            t.values[i..i + vs].copy_from_slice(val);
            let i = (b * np + q) * ds;
            t.derivs[i..i + ds].copy_from_slice(der);
        };
        match space {
            Space::Cg1 => {
                for a in 0..3 {
                    set(a, &[l[a]], &gl[a]);
                }
            }
            Space::Cg2 => {
                for a in 0..3 {
                    let f = 4.0 * l[a] - 1.0;
                    set(
                        a,
                        &[l[a] * (2.0 * l[a] - 1.0)],
                        &[f * gl[a][0], f * gl[a][1]],
                    );
                }
                for k in 0..3 {
                    let (a, b) = ((k + 1) % 3, (k + 2) % 3);
                    let g = [
                        4.0 * (l[a] * gl[b][0] + l[b] * gl[a][0]),
                        4.0 * (l[a] * gl[b][1] + l[b] * gl[a][1]),
                    ];
                    set(3 + k, &[4.0 * l[a] * l[b]], &g);
                }
            }
            Space::Dg1Vec => {
                for comp in 0..2 {
                    for a in 0..3 {
                        let mut v = [0.0; 2];
                        v[comp] = l[a];
                        set(3 * comp + a, &v, &[gl[a][comp]]);
                    }
                }
            }
            Space::Aw => {
                let basis = aw.expect("Arnold-Winther tabulation needs the cell basis");
                let (vals, divs) = basis.eval_all(geom.to_physical(l));
                for j in 0..24 {
                    set(j, &vals[j], &divs[j]);
                }
            }
        }
    }
    t
}

/// A space together with its DOF map and, for Arnold-Winther, the cached
/// per-cell bases.
#[derive(Debug, Clone)]
pub struct FunctionSpace {
    pub space: Space,
    pub dofmap: DofMap,
    aw: Vec<AwBasis>,
}

impl FunctionSpace {
    pub fn new(space: Space, mesh: &Mesh, exec: Execution) -> Result<Self> {
        let dofmap = build_dofmap(space, mesh);
        let aw = if space == Space::Aw {
            exec.try_map(mesh.num_cells(), |c| {
                AwBasis::new(&CellGeometry::new(mesh, c)).map_err(|e| match e {
                    Error::Conditioning { condition, .. } => Error::Conditioning {
                        cell: Some(c),
                        condition,
                    },
                    e => e,
                })
            })?
        } else {
            Vec::new()
        };
        Ok(Self { space, dofmap, aw })
    }

    pub fn dim(&self) -> usize {
        self.dofmap.dim()
    }

    pub fn aw_basis(&self, c: usize) -> Option<&AwBasis> {
        self.aw.get(c)
    }

    pub fn tabulate(&self, mesh: &Mesh, c: usize, points: &[[f64; 3]]) -> Tabulation {
        tabulate(
            self.space,
            &CellGeometry::new(mesh, c),
            self.aw.get(c),
            points,
        )
    }

    /// Values and derivatives of the field with global coefficients `x` at the
    /// tabulated points, as flat `(num_points, value_size)` and
    /// `(num_points, deriv_size)` arrays.
    pub fn evaluate(&self, c: usize, tab: &Tabulation, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let dofs = self.dofmap.cell_dofs(c);
        let (np, vs, ds) = (tab.num_points, tab.value_size, tab.deriv_size);
        let mut val = vec![0.0; np * vs];
        let mut der = vec![0.0; np * ds];
        for (b, &d) in dofs.iter().enumerate() {
            let coef = x[d];
            if coef == 0.0 {
                continue;
            }
            for q in 0..np {
                for (k, v) in tab.value(b, q).iter().enumerate() {
                    val[q * vs + k] += coef * v;
                }
                for (k, v) in tab.deriv(b, q).iter().enumerate() {
                    der[q * ds + k] += coef * v;
                }
            }
        }
        (val, der)
    }

    /// Nodal interpolant of a scalar function (CG spaces).
    pub fn interpolate_scalar(&self, mesh: &Mesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
        let nv = mesh.num_vertices();
        let mut x = vec![0.0; self.dim()];
        match self.space {
            Space::Cg1 | Space::Cg2 => {
                for (v, p) in mesh.vertices().iter().enumerate() {
                    x[v] = f(*p);
                }
                if self.space == Space::Cg2 {
                    for (e, [a, b]) in mesh.edges().iter().enumerate() {
                        let (pa, pb) = (mesh.vertices()[*a], mesh.vertices()[*b]);
                        x[nv + e] = f([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                    }
                }
            }
            s => panic!("interpolate_scalar on {s:?}"),
        }
        x
    }

    /// Cellwise L2 projection of a vector function onto DG1 vectors.
    pub fn interpolate_vector(
        &self,
        mesh: &Mesh,
        f: impl Fn(Point) -> [f64; 2] + Sync,
    ) -> Vec<f64> {
        assert_eq!(self.space, Space::Dg1Vec);
        let rule = quadrature(8).expect("supported degree");
        // Inverse of the P1 mass matrix on a cell of area A is (3/A)(4 I - 1).
        let mut x = vec![0.0; self.dim()];
        for c in 0..mesh.num_cells() {
            let geom = CellGeometry::new(mesh, c);
            let w = geom.weights(&rule);
            let mut rhs = [[0.0; 3]; 2];
            for (b, wq) in rule.points.iter().zip(&w) {
                let v = f(geom.to_physical(b));
                for comp in 0..2 {
                    for a in 0..3 {
                        rhs[comp][a] += wq * v[comp] * b[a];
                    }
                }
            }
            for comp in 0..2 {
                let s: f64 = rhs[comp].iter().sum();
                for a in 0..3 {
                    x[6 * c + 3 * comp + a] = 3.0 / geom.area * (4.0 * rhs[comp][a] - s);
                }
            }
        }
        x
    }

    /// Canonical Arnold-Winther interpolant of a symmetric tensor field.
    pub fn interpolate_tensor(&self, mesh: &Mesh, f: impl Fn(Point) -> [f64; 3]) -> Vec<f64> {
        assert_eq!(self.space, Space::Aw);
        let mut x = vec![0.0; self.dim()];
        for c in 0..mesh.num_cells() {
            let geom = CellGeometry::new(mesh, c);
            let dofs = aw_functionals(&geom, &f);
            for (d, v) in self.dofmap.cell_dofs(c).iter().zip(dofs) {
                x[*d] = v;
            }
        }
        x
    }
}
