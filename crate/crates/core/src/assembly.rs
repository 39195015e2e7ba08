//! Assembly of the symmetric perturbed saddle-point system
//!
//! ```text
//! [ Lambda   B^T ] [theta]   [l1]
//! [ B       -A   ] [ vel ] = [l2]
//! ```
//!
//! with `theta = (mu_1..mu_n, tau, p)` and `vel = (v_1..v_n, v)`, plus one
//! Lagrange multiplier per mean-value constraint on `mu_i` and `p`.
//!
//! Only the lower triangle is computed; the stored matrix is its exact
//! mirror, so `K == K^T` holds bit for bit.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fe::{CellGeometry, FunctionSpace, Space, Tabulation};
use crate::mesh::{BoundaryTag, Mesh, Point};
use crate::quadrature::{quadrature, EdgeRule};
use crate::thermo::{concentrations_from_state, transport_matrix, MaterialModel};

/// Quadrature degree for all volume integrals in the system.
pub const ASSEMBLY_DEGREE: usize = 8;
/// Quadrature degree (in the edge parameter) for boundary integrals.
pub const BOUNDARY_DEGREE: usize = 10;

/// Element family for the potentials; pressure is always CG1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Family {
    /// Potentials in CG1.
    #[default]
    One,
    /// Potentials in CG2.
    Two,
}

impl Family {
    pub fn from_index(k: u32) -> Result<Self> {
        match k {
            1 => Ok(Family::One),
            2 => Ok(Family::Two),
            _ => Err(Error::InvalidArgument(format!(
                "unknown element family {k} (expected 1 or 2)"
            ))),
        }
    }

    pub fn potential_space(self) -> Space {
        match self {
            Family::One => Space::Cg1,
            Family::Two => Space::Cg2,
        }
    }
}

/// The four discrete spaces of one family on one mesh.
#[derive(Debug, Clone)]
pub struct Spaces {
    pub family: Family,
    pub potential: FunctionSpace,
    pub stress: FunctionSpace,
    pub pressure: FunctionSpace,
    pub velocity: FunctionSpace,
}

impl Spaces {
    pub fn new(mesh: &Mesh, family: Family, exec: Execution) -> Result<Self> {
        Ok(Self {
            family,
            potential: FunctionSpace::new(family.potential_space(), mesh, exec)?,
            stress: FunctionSpace::new(Space::Aw, mesh, exec)?,
            pressure: FunctionSpace::new(Space::Cg1, mesh, exec)?,
            velocity: FunctionSpace::new(Space::Dg1Vec, mesh, exec)?,
        })
    }
}

/// A named block of the global unknown vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Potential(usize),
    Stress,
    Pressure,
    SpeciesVelocity(usize),
    Velocity,
    /// Multiplier `i < n` constrains `mu_i`; multiplier `n` constrains `p`.
    Multiplier(usize),
}

/// Offsets of the blocks `[mu_1..mu_n | tau | p | v_1..v_n | v | lambda]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub n_species: usize,
    pub dim_potential: usize,
    pub dim_stress: usize,
    pub dim_pressure: usize,
    pub dim_velocity: usize,
}

impl BlockLayout {
    pub fn new(n_species: usize, spaces: &Spaces) -> Self {
        Self {
            n_species,
            dim_potential: spaces.potential.dim(),
            dim_stress: spaces.stress.dim(),
            dim_pressure: spaces.pressure.dim(),
            dim_velocity: spaces.velocity.dim(),
        }
    }

    pub fn offset(&self, b: Block) -> usize {
        let n = self.n_species;
        let tau = n * self.dim_potential;
        let p = tau + self.dim_stress;
        let vel = p + self.dim_pressure;
        let mult = vel + (n + 1) * self.dim_velocity;
        match b {
            Block::Potential(i) => i * self.dim_potential,
            Block::Stress => tau,
            Block::Pressure => p,
            Block::SpeciesVelocity(i) => vel + i * self.dim_velocity,
            Block::Velocity => vel + n * self.dim_velocity,
            Block::Multiplier(i) => mult + i,
        }
    }

    pub fn len(&self, b: Block) -> usize {
        match b {
            Block::Potential(_) => self.dim_potential,
            Block::Stress => self.dim_stress,
            Block::Pressure => self.dim_pressure,
            Block::SpeciesVelocity(_) | Block::Velocity => self.dim_velocity,
            Block::Multiplier(_) => 1,
        }
    }

    pub fn range(&self, b: Block) -> std::ops::Range<usize> {
        let o = self.offset(b);
        o..o + self.len(b)
    }

    /// Dimension of the `(mu, tau, p)` part.
    pub fn theta_dim(&self) -> usize {
        self.offset(Block::SpeciesVelocity(0))
    }

    /// Dimension of all fields, excluding multipliers.
    pub fn field_dim(&self) -> usize {
        self.offset(Block::Multiplier(0))
    }

    pub fn dim(&self) -> usize {
        self.field_dim() + self.n_species + 1
    }
}

/// Where a concentration sample is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sample {
    Centroid(usize),
    Vertex(usize),
}

/// Picard coefficients: cellwise-constant concentrations, vertex
/// concentrations and the continuous piecewise-linear inverse density.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    n_species: usize,
    /// `cell_c[c * n + i]`.
    pub cell_c: Vec<f64>,
    /// `vertex_c[v * n + i]`.
    pub vertex_c: Vec<f64>,
    /// Nodal values of `1 / rho`.
    pub rho_inv: Vec<f64>,
    /// Lower bound applied to the concentrations.
    pub floor: f64,
    /// Number of samples clipped to the floor.
    pub floored: usize,
    pub iteration: usize,
}

impl MixtureState {
    /// Uniform composition.
    pub fn uniform(mesh: &Mesh, c: &[f64], model: &MaterialModel) -> Result<Self> {
        interpolate_coefficients(mesh, model, None, |_| Ok(c.to_vec()))
    }

    pub fn num_species(&self) -> usize {
        self.n_species
    }

    pub fn cell_concentrations(&self, c: usize) -> &[f64] {
        &self.cell_c[c * self.n_species..(c + 1) * self.n_species]
    }

    pub fn vertex_concentrations(&self, v: usize) -> &[f64] {
        &self.vertex_c[v * self.n_species..(v + 1) * self.n_species]
    }

    /// `omega_i = M_i c_i rho^-1` at barycentric point `bary` of cell `c`.
    pub fn omega(&self, mesh: &Mesh, model: &MaterialModel, c: usize, bary: &[f64; 3]) -> Vec<f64> {
        let ri = self.rho_inv_at(mesh, c, bary);
        self.cell_concentrations(c)
            .iter()
            .zip(&model.molar_masses)
            .map(|(ci, m)| m * ci * ri)
            .collect()
    }

    pub fn rho_inv_at(&self, mesh: &Mesh, c: usize, bary: &[f64; 3]) -> f64 {
        let cell = mesh.cells()[c];
        (0..3).map(|a| bary[a] * self.rho_inv[cell[a]]).sum()
    }

    /// `(1 - theta) self + theta new`, applied to concentrations; the inverse
    /// density is rebuilt from the relaxed vertex concentrations.
    pub fn relax(&self, new: &MixtureState, theta: f64, model: &MaterialModel) -> MixtureState {
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - theta) * x + theta * y)
                .collect()
        };
        let vertex_c = mix(&self.vertex_c, &new.vertex_c);
        MixtureState {
            n_species: self.n_species,
            cell_c: mix(&self.cell_c, &new.cell_c),
            rho_inv: rho_inv_from(&vertex_c, &model.molar_masses),
            vertex_c,
            floor: new.floor,
            floored: new.floored,
            iteration: new.iteration,
        }
    }

    /// Largest `|sum_i omega_i - 1|` over cell centroids.
    pub fn omega_sum_defect(&self, mesh: &Mesh, model: &MaterialModel) -> f64 {
        (0..mesh.num_cells())
            .map(|c| {
                let s: f64 = self.omega(mesh, model, c, &[1.0 / 3.0; 3]).iter().sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn rho_inv_from(vertex_c: &[f64], molar_masses: &[f64]) -> Vec<f64> {
    vertex_c
        .chunks(molar_masses.len())
        .map(|c| 1.0 / c.iter().zip(molar_masses).map(|(c, m)| c * m).sum::<f64>())
        .collect()
}

/// Builds Picard coefficients from pointwise concentrations sampled at cell
/// centroids (cellwise constants) and at vertices (inverse density).
///
/// Concentrations below the floor are clipped and counted. The default floor
/// is `1e-12` times the mean sampled concentration.
pub fn interpolate_coefficients(
    mesh: &Mesh,
    model: &MaterialModel,
    floor: Option<f64>,
    conc: impl Fn(Sample) -> Result<Vec<f64>>,
) -> Result<MixtureState> {
    let n = model.num_species();
    let mut cell_c = Vec::with_capacity(mesh.num_cells() * n);
    let mut vertex_c = Vec::with_capacity(mesh.num_vertices() * n);
    let samples = (0..mesh.num_cells())
        .map(Sample::Centroid)
        .chain((0..mesh.num_vertices()).map(Sample::Vertex));
    for s in samples {
        let c = conc(s)?;
        if c.len() != n || c.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite or malformed concentrations at {s:?}"
            )));
        }
        match s {
            Sample::Centroid(_) => cell_c.extend(c),
            Sample::Vertex(_) => vertex_c.extend(c),
        }
    }
    let mean = cell_c.iter().map(|c| c.abs()).sum::<f64>() / cell_c.len().max(1) as f64;
    let floor = floor.unwrap_or(1e-12 * mean);
    if !(floor > 0.0) {
        return Err(Error::Domain(format!(
            "concentration floor {floor} is not positive"
        )));
    }
    let mut floored = 0;
    for c in cell_c.iter_mut().chain(vertex_c.iter_mut()) {
        if *c < floor {
            *c = floor;
            floored += 1;
        }
    }
    if floored > 0 {
        log::warn!("{floored} concentration samples clipped to the floor {floor:.3e}");
    }
    Ok(MixtureState {
        n_species: n,
        rho_inv: rho_inv_from(&vertex_c, &model.molar_masses),
        cell_c,
        vertex_c,
        floor,
        floored,
        iteration: 0,
    })
}

/// Recovers Picard coefficients from discrete potentials and pressure.
///
/// `mu[i]` and `p` are coefficient vectors in the potential and pressure
/// spaces.
pub fn coefficients_from_solution(
    mesh: &Mesh,
    spaces: &Spaces,
    model: &MaterialModel,
    mu: &[&[f64]],
    p: &[f64],
    floor: Option<f64>,
) -> Result<MixtureState> {
    let centroid_values = |c: usize| -> (Vec<f64>, f64) {
        let b = [[1.0 / 3.0; 3]];
        let tx = spaces.potential.tabulate(mesh, c, &b);
        let tp = spaces.pressure.tabulate(mesh, c, &b);
        let m = mu
            .iter()
            .map(|x| spaces.potential.evaluate(c, &tx, x).0[0])
            .collect();
        (m, spaces.pressure.evaluate(c, &tp, p).0[0])
    };
    interpolate_coefficients(mesh, model, floor, |s| {
        let (m, pv) = match s {
            Sample::Centroid(c) => centroid_values(c),
            // Vertex DOFs of both CG families are nodal values.
            Sample::Vertex(v) => (mu.iter().map(|x| x[v]).collect(), p[v]),
        };
        Ok(concentrations_from_state(&m, pv, model)?.c)
    })
}

/// Sparse symmetric system matrix and right-hand side.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    pub layout: BlockLayout,
    /// Entries of both triangles, sorted by `(col, row)`, without duplicates.
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
}

impl BlockSystem {
    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `y_b^T K_bb y_b` for the diagonal block `b`.
    pub fn block_quadratic_form(&self, b: Block, y: &[f64]) -> f64 {
        let range = self.layout.range(b);
        let o = range.start;
        self.entries
            .iter()
            .filter(|(r, c, _)| range.contains(r) && range.contains(c))
            .map(|&(r, c, v)| y[r - o] * v * y[c - o])
            .sum()
    }

    /// Max-norm of the diagonal block `b`.
    pub fn block_max_norm(&self, b: Block) -> f64 {
        let range = self.layout.range(b);
        self.entries
            .iter()
            .filter(|(r, c, _)| range.contains(r) && range.contains(c))
            .fold(0.0, |m, e| f64::max(m, e.2.abs()))
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.dim()];
        for &(r, _, v) in &self.entries {
            rows[r] += v.abs();
        }
        rows.into_iter().fold(0.0, f64::max)
    }
}

/// Data of the boundary value problem. Boundary callbacks return `None` for
/// tags on which no data is defined.
pub trait ProblemData: Sync {
    /// Mass flux `g_v` (a vector) at a boundary point.
    fn mass_flux(&self, x: Point, tag: BoundaryTag) -> Option<[f64; 2]>;
    /// Normal molar flux `g_i` of species `i` at a boundary point with
    /// outward unit normal `normal`.
    fn species_flux(&self, x: Point, normal: Point, tag: BoundaryTag, i: usize) -> Option<f64>;
    fn body_force(&self, _x: Point) -> [f64; 2] {
        [0.0; 2]
    }
    fn reaction(&self, _x: Point, _i: usize) -> f64 {
        0.0
    }
}

/// Homogeneous data: no flux, no forcing.
pub struct ZeroData;

impl ProblemData for ZeroData {
    fn mass_flux(&self, _x: Point, _tag: BoundaryTag) -> Option<[f64; 2]> {
        Some([0.0; 2])
    }
    fn species_flux(&self, _x: Point, _n: Point, _tag: BoundaryTag, _i: usize) -> Option<f64> {
        Some(0.0)
    }
}

struct CellTables {
    weights: Vec<f64>,
    bary: Vec<[f64; 3]>,
    x: Tabulation,
    s: Tabulation,
    p: Tabulation,
}

fn cell_tables(mesh: &Mesh, spaces: &Spaces, c: usize, degree: usize) -> CellTables {
    let rule = quadrature(degree).expect("supported degree");
    let geom = CellGeometry::new(mesh, c);
    CellTables {
        weights: geom.weights(&rule),
        x: spaces.potential.tabulate(mesh, c, &rule.points),
        s: spaces.stress.tabulate(mesh, c, &rule.points),
        p: spaces.pressure.tabulate(mesh, c, &rule.points),
        bary: rule.points,
    }
}

fn check_floor(state: &MixtureState) -> Result<()> {
    let below = state
        .cell_c
        .iter()
        .filter(|&&c| !(c >= state.floor))
        .count();
    if below > 0 || !(state.floor > 0.0) {
        return Err(Error::FloorViolation {
            count: below,
            floor: state.floor,
        });
    }
    Ok(())
}

/// Lower-triangle contributions of one cell.
fn local_lower(
    mesh: &Mesh,
    spaces: &Spaces,
    layout: &BlockLayout,
    state: &MixtureState,
    model: &MaterialModel,
    c: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let n = model.num_species();
    let t = cell_tables(mesh, spaces, c, ASSEMBLY_DEGREE);
    let nq = t.weights.len();
    let mut out = Vec::new();

    let x_dofs = spaces.potential.dofmap.cell_dofs(c);
    let s_dofs = spaces.stress.dofmap.cell_dofs(c);
    let p_dofs = spaces.pressure.dofmap.cell_dofs(c);
    let w_dofs = spaces.velocity.dofmap.cell_dofs(c);
    let off_tau = layout.offset(Block::Stress);
    let off_p = layout.offset(Block::Pressure);

    // Lambda: (1/2 eta) tau:s + (1/4 zeta - 1/4 eta) tr tau tr s (two dimensions).
    let a_dev = 0.5 / model.eta;
    let a_tr = 0.25 / model.zeta - 0.25 / model.eta;
    for a in 0..24 {
        for b in 0..=a {
            let mut v = 0.0;
            for q in 0..nq {
                let ta = t.s.value(a, q);
                let tb = t.s.value(b, q);
                let contract = ta[0] * tb[0] + 2.0 * ta[1] * tb[1] + ta[2] * tb[2];
                let trace = (ta[0] + ta[2]) * (tb[0] + tb[2]);
                v += t.weights[q] * (a_dev * contract + a_tr * trace);
            }
            let (ga, gb) = (off_tau + s_dofs[a], off_tau + s_dofs[b]);
            out.push((ga.max(gb), ga.min(gb), v));
        }
    }

    // Coefficients at quadrature points.
    let cc = state.cell_concentrations(c);
    let omega: Vec<Vec<f64>> = t
        .bary
        .iter()
        .map(|b| state.omega(mesh, model, c, b))
        .collect();
    let lam = |a: usize, q: usize| t.bary[q][a];

    // B rows: species velocities.
    for i in 0..n {
        let row0 = layout.offset(Block::SpeciesVelocity(i));
        let col_mu = layout.offset(Block::Potential(i));
        for comp in 0..2 {
            for a in 0..3 {
                let row = row0 + w_dofs[3 * comp + a];
                for (bx, &gx) in x_dofs.iter().enumerate() {
                    let v: f64 = (0..nq)
                        .map(|q| t.weights[q] * t.x.deriv(bx, q)[comp] * lam(a, q))
                        .sum();
                    out.push((row, col_mu + gx, -cc[i] * v));
                }
                for (bp, &gp) in p_dofs.iter().enumerate() {
                    let v: f64 = (0..nq)
                        .map(|q| t.weights[q] * omega[q][i] * t.p.deriv(bp, q)[comp] * lam(a, q))
                        .sum();
                    out.push((row, off_p + gp, v));
                }
            }
        }
    }
    // B rows: mass-average velocity.
    let row0 = layout.offset(Block::Velocity);
    for comp in 0..2 {
        for a in 0..3 {
            let row = row0 + w_dofs[3 * comp + a];
            for (bs, &gs) in s_dofs.iter().enumerate() {
                let v: f64 = (0..nq)
                    .map(|q| t.weights[q] * t.s.deriv(bs, q)[comp] * lam(a, q))
                    .sum();
                out.push((row, off_tau + gs, v));
            }
            for (bp, &gp) in p_dofs.iter().enumerate() {
                let v: f64 = (0..nq)
                    .map(|q| t.weights[q] * t.p.deriv(bp, q)[comp] * lam(a, q))
                    .sum();
                out.push((row, off_p + gp, -v));
            }
        }
    }

    // -A. Velocity slot `n` is the mass-average velocity. The scalar weight
    // between slots (k, l) multiplies the P1 mass form lambda_a lambda_b.
    let m = transport_matrix(cc, model)?;
    let gamma = model.gamma_aug;
    let weight = |k: usize, l: usize, om: &[f64]| -> f64 {
        let s: f64 = om.iter().sum();
        match (k < n, l < n) {
            (true, true) => m[(k, l)] + gamma * om[k] * om[l],
            (true, false) => -gamma * om[k] * s,
            (false, true) => -gamma * om[l] * s,
            (false, false) => gamma * s * s,
        }
    };
    let slot_offset = |k: usize| {
        if k < n {
            layout.offset(Block::SpeciesVelocity(k))
        } else {
            layout.offset(Block::Velocity)
        }
    };
    for k in 0..=n {
        for l in 0..=k {
            let mut mass = [[0.0; 3]; 3];
            for q in 0..nq {
                let wgt = t.weights[q] * weight(k, l, &omega[q]);
                for a in 0..3 {
                    for b in 0..3 {
                        mass[a][b] += wgt * lam(a, q) * lam(b, q);
                    }
                }
            }
            // Make the local form exactly symmetric where k == l.
            for a in 0..3 {
                for b in 0..a {
                    let avg = 0.5 * (mass[a][b] + mass[b][a]);
                    mass[a][b] = avg;
                    mass[b][a] = avg;
                }
            }
            for comp in 0..2 {
                for a in 0..3 {
                    for b in 0..3 {
                        let gr = slot_offset(k) + w_dofs[3 * comp + a];
                        let gc = slot_offset(l) + w_dofs[3 * comp + b];
                        if gr >= gc && (k != l || a >= b) {
                            out.push((gr, gc, -mass[a][b]));
                        } else if k != l {
                            out.push((gc, gr, -mass[a][b]));
                        }
                    }
                }
            }
        }
    }

    // Mean-value multipliers.
    for i in 0..n {
        let row = layout.offset(Block::Multiplier(i));
        let col = layout.offset(Block::Potential(i));
        for (bx, &gx) in x_dofs.iter().enumerate() {
            let v: f64 = (0..nq).map(|q| t.weights[q] * t.x.value(bx, q)[0]).sum();
            out.push((row, col + gx, v));
        }
    }
    let row = layout.offset(Block::Multiplier(n));
    for (bp, &gp) in p_dofs.iter().enumerate() {
        let v: f64 = (0..nq).map(|q| t.weights[q] * t.p.value(bp, q)[0]).sum();
        out.push((row, off_p + gp, v));
    }
    Ok(out)
}

/// Assembles the system matrix for the given coefficients (right-hand side
/// left at zero; see [`assemble_rhs`]).
pub fn assemble_system(
    state: &MixtureState,
    model: &MaterialModel,
    mesh: &Mesh,
    spaces: &Spaces,
    exec: Execution,
) -> Result<BlockSystem> {
    check_floor(state)?;
    let layout = BlockLayout::new(model.num_species(), spaces);
    let locals = exec.try_map(mesh.num_cells(), |c| {
        local_lower(mesh, spaces, &layout, state, model, c)
    })?;
    let mut lower: Vec<(usize, usize, f64)> = locals.into_iter().flatten().collect();
    // Stable sort keeps the summation order of duplicates deterministic.
    lower.sort_by_key(|&(r, c, _)| (c, r));
    let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(lower.len() / 2);
    for (r, c, v) in lower {
        match merged.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => merged.push((r, c, v)),
        }
    }
    let mut entries = Vec::with_capacity(2 * merged.len());
    for &(r, c, v) in &merged {
        entries.push((r, c, v));
        if r != c {
            entries.push((c, r, v));
        }
    }
    entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
    Ok(BlockSystem {
        layout,
        rhs: vec![0.0; layout.dim()],
        entries,
    })
}

/// Assembles the right-hand side: boundary pairings, reactions and body force.
pub fn assemble_rhs(
    state: &MixtureState,
    model: &MaterialModel,
    mesh: &Mesh,
    spaces: &Spaces,
    data: &dyn ProblemData,
    exec: Execution,
) -> Result<Vec<f64>> {
    let n = model.num_species();
    let layout = BlockLayout::new(n, spaces);
    let mut b = vec![0.0; layout.dim()];

    // Volume terms.
    let locals = exec.map(mesh.num_cells(), |c| {
        let t = cell_tables(mesh, spaces, c, ASSEMBLY_DEGREE);
        let geom = CellGeometry::new(mesh, c);
        let x_dofs = spaces.potential.dofmap.cell_dofs(c);
        let w_dofs = spaces.velocity.dofmap.cell_dofs(c);
        let mut out = Vec::new();
        for (q, bary) in t.bary.iter().enumerate() {
            let x = geom.to_physical(bary);
            let w = t.weights[q];
            for i in 0..n {
                let r = data.reaction(x, i);
                if r != 0.0 {
                    let off = layout.offset(Block::Potential(i));
                    for (bx, &g) in x_dofs.iter().enumerate() {
                        out.push((off + g, w * r * t.x.value(bx, q)[0]));
                    }
                }
            }
            let f = data.body_force(x);
            if f != [0.0; 2] {
                let rho = 1.0 / state.rho_inv_at(mesh, c, bary);
                let off = layout.offset(Block::Velocity);
                for comp in 0..2 {
                    for a in 0..3 {
                        out.push((off + w_dofs[3 * comp + a], -w * rho * f[comp] * bary[a]));
                    }
                }
            }
        }
        out
    });
    for (i, v) in locals.into_iter().flatten() {
        b[i] += v;
    }

    // Boundary terms.
    let rule = EdgeRule::new(BOUNDARY_DEGREE);
    let mut defect: f64 = 0.0;
    let mut flux_scale: f64 = 0.0;
    for facet in mesh.boundary() {
        let e = facet.edge;
        let c = mesh.edge_cells(e)[0].expect("boundary edge has a cell");
        let k = mesh.local_edge(c, e).expect("edge belongs to its cell");
        let geom = CellGeometry::new(mesh, c);
        let normal = mesh.outward_normal(e);
        let len = mesh.edge_length(e);
        let (va, vb) = ((k + 1) % 3, (k + 2) % 3);
        let bary: Vec<[f64; 3]> = rule
            .nodes
            .iter()
            .map(|s| {
                let mut l = [0.0; 3];
                l[va] = 0.5 * (1.0 - s);
                l[vb] = 0.5 * (1.0 + s);
                l
            })
            .collect();
        let tx = spaces.potential.tabulate(mesh, c, &bary);
        let ts = spaces.stress.tabulate(mesh, c, &bary);
        let tp = spaces.pressure.tabulate(mesh, c, &bary);
        let x_dofs = spaces.potential.dofmap.cell_dofs(c);
        let s_dofs = spaces.stress.dofmap.cell_dofs(c);
        let p_dofs = spaces.pressure.dofmap.cell_dofs(c);
        for (q, l) in bary.iter().enumerate() {
            let x = geom.to_physical(l);
            let w = 0.5 * len * rule.weights[q];
            let ri = state.rho_inv_at(mesh, c, l);
            let gv = data
                .mass_flux(x, facet.tag)
                .ok_or_else(|| Error::MissingTag(facet.tag.to_string()))?;
            let mut gi = Vec::with_capacity(n);
            for i in 0..n {
                gi.push(
                    data.species_flux(x, normal, facet.tag, i)
                        .ok_or_else(|| Error::MissingTag(facet.tag.to_string()))?,
                );
            }
            let gvn = gv[0] * normal[0] + gv[1] * normal[1];
            let mg: f64 = gi.iter().zip(&model.molar_masses).map(|(g, m)| g * m).sum();
            defect = defect.max((mg - gvn).abs());
            flux_scale = flux_scale.max(gvn.abs()).max(mg.abs());

            for i in 0..n {
                let off = layout.offset(Block::Potential(i));
                for (bx, &g) in x_dofs.iter().enumerate() {
                    b[off + g] -= w * gi[i] * tx.value(bx, q)[0];
                }
            }
            let off = layout.offset(Block::Stress);
            for (bs, &g) in s_dofs.iter().enumerate() {
                let s = ts.value(bs, q);
                let sn = [
                    s[0] * normal[0] + s[1] * normal[1],
                    s[1] * normal[0] + s[2] * normal[1],
                ];
                b[off + g] += w * ri * (sn[0] * gv[0] + sn[1] * gv[1]);
            }
            let off = layout.offset(Block::Pressure);
            for (bp, &g) in p_dofs.iter().enumerate() {
                b[off + g] += w * ri * (mg - gvn) * tp.value(bp, q)[0];
            }
        }
    }
    if defect > 1e-10 * flux_scale.max(f64::MIN_POSITIVE) && defect > 0.0 {
        log::warn!(
            "boundary data violate sum_i M_i g_i = g_v.n by up to {defect:.3e} (flux scale {flux_scale:.3e})"
        );
    }
    Ok(b)
}

/// Exact DG1 vector coefficients of `-c_i grad w + omega_i grad q`.
///
/// `w` lives in the potential space and `q` in the pressure space. Both
/// terms are linear on each cell, so their vertex values determine them.
pub fn discrete_driving_force(
    mesh: &Mesh,
    spaces: &Spaces,
    state: &MixtureState,
    model: &MaterialModel,
    i: usize,
    w: &[f64],
    q: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; spaces.velocity.dim()];
    let verts = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for c in 0..mesh.num_cells() {
        let tx = spaces.potential.tabulate(mesh, c, &verts);
        let tp = spaces.pressure.tabulate(mesh, c, &verts);
        let (_, gw) = spaces.potential.evaluate(c, &tx, w);
        let (_, gq) = spaces.pressure.evaluate(c, &tp, q);
        let ci = state.cell_concentrations(c)[i];
        let dofs = spaces.velocity.dofmap.cell_dofs(c);
        for a in 0..3 {
            let om = state.omega(mesh, model, c, &verts[a])[i];
            for comp in 0..2 {
                out[dofs[3 * comp + a]] = -ci * gw[2 * a + comp] + om * gq[2 * a + comp];
            }
        }
    }
    out
}
