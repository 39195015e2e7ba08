//! Sparse direct solves and the outer Picard iteration.

use std::io::Write;

use std::sync::Arc;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::solvers::Solve;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, LdltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat, Par, Side};

use crate::assembly::{
    assemble_rhs, assemble_system, coefficients_from_solution, discrete_driving_force, Block,
    BlockLayout, BlockSystem, MixtureState, ProblemData, Spaces, ASSEMBLY_DEGREE,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fe::CellGeometry;
use crate::mesh::Mesh;
use crate::quadrature::quadrature;
use crate::thermo::{gibbs_duhem_residual, MaterialModel};

/// Relative residual bound of a linear solve:
/// `||K x - b|| <= LINEAR_TOLERANCE (||K|| ||x|| + ||b||)`.
pub const LINEAR_TOLERANCE: f64 = 1e-9;

const RUIZ_SWEEPS: usize = 8;
const MAX_REFINEMENT: usize = 4;

/// Coefficient vector of all fields and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionState {
    pub layout: BlockLayout,
    pub x: Vec<f64>,
    pub iteration: usize,
}

impl SolutionState {
    pub fn zeros(layout: BlockLayout) -> Self {
        Self {
            x: vec![0.0; layout.dim()],
            layout,
            iteration: 0,
        }
    }

    pub fn block(&self, b: Block) -> &[f64] {
        &self.x[self.layout.range(b)]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut [f64] {
        let r = self.layout.range(b);
        &mut self.x[r]
    }

    pub fn potential(&self, i: usize) -> &[f64] {
        self.block(Block::Potential(i))
    }

    pub fn stress(&self) -> &[f64] {
        self.block(Block::Stress)
    }

    pub fn pressure(&self) -> &[f64] {
        self.block(Block::Pressure)
    }

    pub fn species_velocity(&self, i: usize) -> &[f64] {
        self.block(Block::SpeciesVelocity(i))
    }

    pub fn velocity(&self) -> &[f64] {
        self.block(Block::Velocity)
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.x[self.layout.field_dim()..]
    }

    /// Field coefficients without the multipliers.
    pub fn fields(&self) -> &[f64] {
        &self.x[..self.layout.field_dim()]
    }
}

/// Outcome of one linear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearReport {
    pub residual: f64,
    pub bound: f64,
    pub refinements: usize,
}

/// Sparse direct solver for the block systems.
///
/// The Ruiz-scaled matrix is shifted by `+delta` on the potential, stress and
/// pressure diagonal and by `-delta` on the velocity and multiplier diagonal.
/// The shifted matrix is quasi-definite, so an LDL^T factorisation without
/// pivoting exists under the AMD ordering; iterative refinement against the
/// unshifted matrix removes the shift. If that fails, a pivoted sparse LU is
/// used instead. The symbolic analysis is reused while the sparsity pattern
/// stays the same, as it does across Picard iterations.
#[derive(Default)]
pub struct LinearSolver {
    cached: Option<CachedSymbolic>,
    /// Also solve `K y = K e` for a fixed `e` and require `y = e`; detects
    /// rank deficiency that the shift or pivoting would otherwise hide.
    pub check_uniqueness: bool,
}

/// Column pointers, row indices and symbolic factor of the last pattern.
type CachedSymbolic = (Vec<usize>, Vec<usize>, Arc<SymbolicCholesky<usize>>);

/// Static shift of the scaled matrix.
const LDLT_SHIFT: f64 = 1e-8;
const MAX_LDLT_REFINEMENT: usize = 12;
/// LDL^T results above this fraction of the residual bound are retried with LU.
const LDLT_ACCEPT: f64 = 1e-3;

type Factorised = Box<dyn Fn(&[f64]) -> Vec<f64>>;

impl LinearSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&mut self, sys: &BlockSystem) -> Result<(Vec<f64>, LinearReport)> {
        let n = sys.dim();
        if sys.rhs.len() != n {
            return Err(Error::LayoutMismatch(format!(
                "right-hand side has {} entries, system has {n}",
                sys.rhs.len()
            )));
        }
        let scale = ruiz_scaling(n, &sys.entries);
        let first = match self.factorise_ldlt(sys, &scale) {
            Some(solve) => refine(sys, solve, MAX_LDLT_REFINEMENT),
            None => Err(Error::Singular("zero pivot in shifted LDL^T".into())),
        };
        let (x, report, solve) = match first {
            Ok(r) if r.1.residual <= LDLT_ACCEPT * r.1.bound => r,
            Ok(r) => {
                log::debug!(
                    "LDL^T refinement stalled at {:.3e}; trying LU",
                    r.1.residual
                );
                match factorise_lu(sys, &scale).and_then(|f| refine(sys, f, MAX_REFINEMENT)) {
                    Ok(lu) if lu.1.residual < r.1.residual => lu,
                    _ => r,
                }
            }
            Err(e) => {
                log::debug!("LDL^T path failed ({e}); falling back to LU");
                let solve = factorise_lu(sys, &scale)?;
                refine(sys, solve, MAX_REFINEMENT)?
            }
        };
        if self.check_uniqueness {
            let e: Vec<f64> = (0..n)
                .map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0)
                .collect();
            let mut y = solve(&sys.matvec(&e));
            // A few refinement steps so the probe measures the matrix, not the shift.
            for _ in 0..MAX_LDLT_REFINEMENT {
                let ky = sys.matvec(&y);
                let ke = sys.matvec(&e);
                let r: Vec<f64> = ke.iter().zip(&ky).map(|(a, b)| a - b).collect();
                let dy = solve(&r);
                y.iter_mut().zip(&dy).for_each(|(a, d)| *a += d);
            }
            let err = y
                .iter()
                .zip(&e)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if !(err < 1e-6) {
                return Err(Error::Singular(format!(
                    "solution is not unique (probe error {err:.3e})"
                )));
            }
        }
        Ok((x, report))
    }

    fn factorise_ldlt(&mut self, sys: &BlockSystem, scale: &[f64]) -> Option<Factorised> {
        let n = sys.dim();
        let theta = sys.layout.theta_dim();
        // Upper triangle plus a full diagonal, shifted.
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::with_capacity(sys.entries.len() / 2 + n);
        let mut values = Vec::with_capacity(sys.entries.len() / 2 + n);
        let mut k = 0;
        for c in 0..n {
            let shift = if c < theta { LDLT_SHIFT } else { -LDLT_SHIFT };
            let mut has_diag = false;
            while k < sys.entries.len() && sys.entries[k].1 == c {
                let (r, _, v) = sys.entries[k];
                k += 1;
                if r > c {
                    continue;
                }
                let mut v = scale[r] * v * scale[c];
                if r == c {
                    v += shift;
                    has_diag = true;
                }
                row_idx.push(r);
                values.push(v);
            }
            if !has_diag {
                row_idx.push(c);
                values.push(shift);
            }
            col_ptr[c + 1] = row_idx.len();
        }
        let reuse = matches!(&self.cached, Some((cp, ri, _)) if *cp == col_ptr && *ri == row_idx);
        if !reuse {
            let sym =
                SymbolicSparseColMat::new_checked(n, n, col_ptr.clone(), None, row_idx.clone());
            let symbolic = factorize_symbolic_cholesky(
                sym.as_ref(),
                Side::Upper,
                SymmetricOrdering::Amd,
                Default::default(),
            )
            .ok()?;
            self.cached = Some((col_ptr.clone(), row_idx.clone(), Arc::new(symbolic)));
        }
        let symbolic = self.cached.as_ref().expect("cached symbolic").2.clone();
        let mat = SparseColMat::new(
            SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx),
            values,
        );
        let mut l_values = vec![0.0; symbolic.len_val()];
        let mut mem = MemBuffer::new(
            symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()),
        );
        symbolic
            .factorize_numeric_ldlt(
                &mut l_values,
                mat.as_ref(),
                Side::Upper,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .ok()?;
        let scale = scale.to_vec();
        let solve = move |r: &[f64]| -> Vec<f64> {
            let f = LdltRef::new(&symbolic, &l_values);
            let mut mem = MemBuffer::new(symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
            let mut m = Mat::<f64>::from_fn(n, 1, |i, _| scale[i] * r[i]);
            f.solve_in_place_with_conj(Conj::No, m.as_mut(), Par::Seq, MemStack::new(&mut mem));
            (0..n).map(|i| scale[i] * m[(i, 0)]).collect()
        };
        Some(Box::new(solve))
    }
}
fn factorise_lu(sys: &BlockSystem, scale: &[f64]) -> Result<Factorised> {
    let n = sys.dim();
    let mut col_ptr = vec![0usize; n + 1];
    let mut row_idx = Vec::with_capacity(sys.entries.len());
    let mut values = Vec::with_capacity(sys.entries.len());
    for &(r, c, v) in &sys.entries {
        col_ptr[c + 1] += 1;
        row_idx.push(r);
        values.push(scale[r] * v * scale[c]);
    }
    for c in 0..n {
        col_ptr[c + 1] += col_ptr[c];
    }
    let mat = SparseColMat::new(
        SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx),
        values,
    );
    let sym_lu = SymbolicLu::try_new(mat.symbolic())
        .map_err(|e| Error::Singular(format!("symbolic factorisation failed: {e:?}")))?;
    let lu = Lu::try_new_with_symbolic(sym_lu, mat.as_ref()).map_err(|e| match e {
        faer::sparse::linalg::LuError::SymbolicSingular { index } => {
            Error::Singular(format!("no pivot available at step {index}"))
        }
        e => Error::Singular(format!("{e:?}")),
    })?;
    let scale = scale.to_vec();
    Ok(Box::new(move |r: &[f64]| {
        let mut m = Mat::<f64>::from_fn(n, 1, |i, _| scale[i] * r[i]);
        lu.solve_in_place(m.as_mut());
        (0..n).map(|i| scale[i] * m[(i, 0)]).collect()
    }))
}

/// Solves and refines until the residual reaches rounding level, stops
/// decreasing by at least half, or `max_steps` corrections were applied.
fn refine(
    sys: &BlockSystem,
    solve: Factorised,
    max_steps: usize,
) -> Result<(Vec<f64>, LinearReport, Factorised)> {
    let norm_k = sys.norm_inf();
    let norm_b = norm2(&sys.rhs);
    let residual_of = |x: &[f64]| {
        let kx = sys.matvec(x);
        let r: Vec<f64> = sys.rhs.iter().zip(&kx).map(|(b, k)| b - k).collect();
        (norm2(&r), r)
    };
    let mut x = solve(&sys.rhs);
    let mut refinements = 0;
    let (mut residual, mut r) = residual_of(&x);
    loop {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular(
                "factorisation produced non-finite values".into(),
            ));
        }
        let floor = 4.0 * f64::EPSILON * (norm_k * norm2(&x) + norm_b);
        if residual <= floor || refinements == max_steps {
            break;
        }
        let dx = solve(&r);
        let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + d).collect();
        let (rc, r_new) = residual_of(&candidate);
        refinements += 1;
        if !(rc < residual) {
            break;
        }
        let stalled = rc > 0.5 * residual;
        x = candidate;
        residual = rc;
        r = r_new;
        if stalled {
            break;
        }
    }
    let bound = LINEAR_TOLERANCE * (norm_k * norm2(&x) + norm_b);
    if !(residual <= bound) {
        return Err(Error::Residual { residual, bound });
    }
    Ok((
        x,
        LinearReport {
            residual,
            bound,
            refinements,
        },
        solve,
    ))
}

/// One-shot solve of an assembled system.
pub fn solve_linear(sys: &BlockSystem) -> Result<(SolutionState, LinearReport)> {
    let (x, report) = LinearSolver::new().solve(sys)?;
    Ok((
        SolutionState {
            layout: sys.layout,
            x,
            iteration: 0,
        },
        report,
    ))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

// Symmetric Ruiz equilibration: returns d with D K D having unit row maxima
// (approximately). Rows without entries keep scale 1.
fn ruiz_scaling(n: usize, entries: &[(usize, usize, f64)]) -> Vec<f64> {
    let mut d = vec![1.0; n];
    for _ in 0..RUIZ_SWEEPS {
        let mut row_max = vec![0.0f64; n];
        for &(r, c, v) in entries {
            row_max[r] = row_max[r].max((d[r] * v * d[c]).abs());
        }
        for (di, m) in d.iter_mut().zip(&row_max) {
            if *m > 0.0 {
                *di /= m.sqrt();
            }
        }
    }
    d
}

/// Norm used for the Picard stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiffNorm {
    /// Euclidean norm of the field coefficients.
    #[default]
    CoefficientL2,
    /// Graph norm on the potential/stress/pressure space plus L2 on velocities.
    ThetaQ,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    pub tolerance: f64,
    /// Under-relaxation of the concentrations, in (0, 1].
    pub relaxation: f64,
    pub max_iter: usize,
    pub norm: DiffNorm,
    /// Concentration floor; `None` selects the default relative floor.
    pub floor: Option<f64>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-7,
            relaxation: 1.0,
            max_iter: 50,
            norm: DiffNorm::CoefficientL2,
            floor: None,
        }
    }
}

impl PicardOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "relaxation {} must lie in (0, 1]",
                self.relaxation
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardRecord {
    pub iteration: usize,
    pub difference: f64,
    pub linear_residual: f64,
    pub floored: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PicardHistory {
    pub records: Vec<PicardRecord>,
}

impl PicardHistory {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn last_difference(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.difference)
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iteration,difference,linear_residual,floored")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:e},{:e},{}",
                r.iteration, r.difference, r.linear_residual, r.floored
            )?;
        }
        Ok(())
    }
}

/// Converged Picard result. `state` holds the coefficients used for the
/// final linear solve.
#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub solution: SolutionState,
    pub state: MixtureState,
    pub history: PicardHistory,
}

/// Everything a Picard run needs besides the options.
pub struct Problem<'a> {
    pub model: &'a MaterialModel,
    pub mesh: &'a Mesh,
    pub spaces: &'a Spaces,
    pub data: &'a dyn ProblemData,
    pub exec: Execution,
}

/// Picard iteration: assemble with frozen coefficients, solve, recover the
/// concentrations from the new potentials and relax them.
pub fn picard(
    problem: &Problem,
    init: MixtureState,
    opts: &PicardOptions,
) -> Result<PicardOutcome> {
    opts.validate()?;
    let Problem {
        model,
        mesh,
        spaces,
        data,
        exec,
    } = *problem;
    let n = model.num_species();
    let layout = BlockLayout::new(n, spaces);
    let mut solver = LinearSolver::new();
    let mut state = init;
    let mut prev = SolutionState::zeros(layout);
    let mut history = PicardHistory::default();
    for k in 1..=opts.max_iter {
        state.iteration = k - 1;
        let mut sys = assemble_system(&state, model, mesh, spaces, exec)?;
        sys.rhs = assemble_rhs(&state, model, mesh, spaces, data, exec)?;
        let (x, report) = solver.solve(&sys)?;
        let sol = SolutionState {
            layout,
            x,
            iteration: k,
        };
        let difference = match opts.norm {
            DiffNorm::CoefficientL2 => norm2(
                &sol.fields()
                    .iter()
                    .zip(prev.fields())
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>(),
            ),
            DiffNorm::ThetaQ => theta_q_diff_norm(mesh, spaces, model, &state, &sol, &prev)?,
        };
        history.records.push(PicardRecord {
            iteration: k,
            difference,
            linear_residual: report.residual,
            floored: state.floored,
        });
        log::info!(
            "picard {k}: difference {difference:.3e}, residual {:.3e}",
            report.residual
        );
        if !difference.is_finite() {
            return Err(Error::PicardNonConvergence(Box::new(history)));
        }
        if difference <= opts.tolerance {
            return Ok(PicardOutcome {
                solution: sol,
                state,
                history,
            });
        }
        let mu: Vec<&[f64]> = (0..n).map(|i| sol.potential(i)).collect();
        let fresh =
            coefficients_from_solution(mesh, spaces, model, &mu, sol.pressure(), opts.floor)?;
        state = state.relax(&fresh, opts.relaxation, model);
        prev = sol;
    }
    Err(Error::PicardNonConvergence(Box::new(history)))
}

/// `(||(dmu, dtau, dp)||_Theta^2 + ||(dv_i, dv)||_Q^2)^(1/2)` for the
/// difference `a - b`, with the driving-force weights of `state`.
pub fn theta_q_diff_norm(
    mesh: &Mesh,
    spaces: &Spaces,
    model: &MaterialModel,
    state: &MixtureState,
    a: &SolutionState,
    b: &SolutionState,
) -> Result<f64> {
    if a.layout != b.layout || a.x.len() != b.x.len() {
        return Err(Error::LayoutMismatch(
            "solutions have different layouts".into(),
        ));
    }
    let n = model.num_species();
    let d = SolutionState {
        layout: a.layout,
        x: a.x.iter().zip(&b.x).map(|(x, y)| x - y).collect(),
        iteration: 0,
    };
    let rule = quadrature(ASSEMBLY_DEGREE)?;
    let mut total = 0.0;
    for c in 0..mesh.num_cells() {
        let geom = CellGeometry::new(mesh, c);
        let w = geom.weights(&rule);
        let tx = spaces.potential.tabulate(mesh, c, &rule.points);
        let ts = spaces.stress.tabulate(mesh, c, &rule.points);
        let tp = spaces.pressure.tabulate(mesh, c, &rule.points);
        let tw = spaces.velocity.tabulate(mesh, c, &rule.points);
        let (s, divs) = spaces.stress.evaluate(c, &ts, d.stress());
        let (q, gq) = spaces.pressure.evaluate(c, &tp, d.pressure());
        let cc = state.cell_concentrations(c);
        let mus: Vec<_> = (0..n)
            .map(|i| spaces.potential.evaluate(c, &tx, d.potential(i)))
            .collect();
        let vels: Vec<_> = (0..n)
            .map(Block::SpeciesVelocity)
            .chain([Block::Velocity])
            .map(|blk| spaces.velocity.evaluate(c, &tw, d.block(blk)).0)
            .collect();
        for (k, bary) in rule.points.iter().enumerate() {
            let om = state.omega(mesh, model, c, bary);
            let wk = w[k];
            total += wk * (s[3 * k].powi(2) + 2.0 * s[3 * k + 1].powi(2) + s[3 * k + 2].powi(2));
            total += wk * q[k] * q[k];
            let r = [divs[2 * k] - gq[2 * k], divs[2 * k + 1] - gq[2 * k + 1]];
            total += wk * (r[0] * r[0] + r[1] * r[1]);
            for (i, (mu, gmu)) in mus.iter().enumerate() {
                total += wk * mu[k] * mu[k];
                let f = [
                    -cc[i] * gmu[2 * k] + om[i] * gq[2 * k],
                    -cc[i] * gmu[2 * k + 1] + om[i] * gq[2 * k + 1],
                ];
                total += wk * (f[0] * f[0] + f[1] * f[1]);
            }
            for v in &vels {
                total += wk * (v[2 * k].powi(2) + v[2 * k + 1].powi(2));
            }
        }
    }
    Ok(total.sqrt())
}

/// Derived quantities of a converged solution.
#[derive(Debug, Clone)]
pub struct Derived {
    /// Per cell and local vertex: total stress `[xx, xy, yy]`.
    pub total_stress: Vec<[f64; 3]>,
    /// Per cell and local vertex: `p - zeta div v`.
    pub mechanical_pressure: Vec<f64>,
    /// Per cell and local vertex: `v - sum_i omega_i v_i`.
    pub defect: Vec<[f64; 2]>,
    /// Pressure shifted by the reference value, at mesh vertices.
    pub shifted_pressure: Vec<f64>,
    /// `|| v - sum_i omega_i v_i ||_0`.
    pub defect_l2: f64,
    /// Largest pointwise `|v_i - v|` over species and sample points.
    pub species_slip_max: f64,
    /// `int tr(sigma_h)`.
    pub stress_trace_integral: f64,
    /// `|| sum_i d_i ||_0` of the discrete driving forces.
    pub gibbs_duhem: f64,
}

pub fn postprocess(
    mesh: &Mesh,
    spaces: &Spaces,
    model: &MaterialModel,
    state: &MixtureState,
    sol: &SolutionState,
    p_shift: f64,
) -> Result<Derived> {
    let n = model.num_species();
    let verts = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let rule = quadrature(ASSEMBLY_DEGREE)?;
    let forces: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            discrete_driving_force(
                mesh,
                spaces,
                state,
                model,
                i,
                sol.potential(i),
                sol.pressure(),
            )
        })
        .collect();
    let mut out = Derived {
        total_stress: Vec::with_capacity(3 * mesh.num_cells()),
        mechanical_pressure: Vec::with_capacity(3 * mesh.num_cells()),
        defect: Vec::with_capacity(3 * mesh.num_cells()),
        shifted_pressure: sol.pressure().iter().map(|p| p + p_shift).collect(),
        defect_l2: 0.0,
        species_slip_max: 0.0,
        stress_trace_integral: 0.0,
        gibbs_duhem: 0.0,
    };
    let mut defect_sq = 0.0;
    let mut gd_sq = 0.0;
    for c in 0..mesh.num_cells() {
        let geom = CellGeometry::new(mesh, c);
        for (points, weights) in [
            (&verts[..], None),
            (&rule.points[..], Some(geom.weights(&rule))),
        ] {
            let ts = spaces.stress.tabulate(mesh, c, points);
            let tp = spaces.pressure.tabulate(mesh, c, points);
            let tw = spaces.velocity.tabulate(mesh, c, points);
            let (s, _) = spaces.stress.evaluate(c, &ts, sol.stress());
            let (p, _) = spaces.pressure.evaluate(c, &tp, sol.pressure());
            let (v, divv) = spaces.velocity.evaluate(c, &tw, sol.velocity());
            let vi: Vec<Vec<f64>> = (0..n)
                .map(|i| spaces.velocity.evaluate(c, &tw, sol.species_velocity(i)).0)
                .collect();
            let di: Vec<Vec<f64>> = (0..n)
                .map(|i| spaces.velocity.evaluate(c, &tw, &forces[i]).0)
                .collect();
            for (k, bary) in points.iter().enumerate() {
                let om = state.omega(mesh, model, c, bary);
                let mut def = [v[2 * k], v[2 * k + 1]];
                for i in 0..n {
                    def[0] -= om[i] * vi[i][2 * k];
                    def[1] -= om[i] * vi[i][2 * k + 1];
                }
                let sigma = [s[3 * k] - p[k], s[3 * k + 1], s[3 * k + 2] - p[k]];
                match &weights {
                    None => {
                        out.total_stress.push(sigma);
                        out.mechanical_pressure.push(p[k] - model.zeta * divv[k]);
                        out.defect.push(def);
                        for i in 0..n {
                            let slip =
                                (vi[i][2 * k] - v[2 * k]).hypot(vi[i][2 * k + 1] - v[2 * k + 1]);
                            out.species_slip_max = out.species_slip_max.max(slip);
                        }
                    }
                    Some(w) => {
                        defect_sq += w[k] * (def[0] * def[0] + def[1] * def[1]);
                        out.stress_trace_integral += w[k] * (sigma[0] + sigma[2]);
                        let d: Vec<[f64; 2]> =
                            (0..n).map(|i| [di[i][2 * k], di[i][2 * k + 1]]).collect();
                        let g = gibbs_duhem_residual([(w[k], &d[..])]);
                        gd_sq += g * g;
                    }
                }
            }
        }
    }
    out.defect_l2 = defect_sq.sqrt();
    out.gibbs_duhem = gd_sq.sqrt();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{Family, ZeroData};
    use crate::mesh::{unit_square_mesh, Diagonal};
    use crate::thermo::ConstitutiveLaw;

    fn model() -> MaterialModel {
        MaterialModel {
            molar_masses: vec![1.0, 2.0],
            diffusivities: vec![0.0, 1.0, 1.0, 0.0],
            rt: 1.0,
            eta: 0.1,
            zeta: 0.1,
            gamma_aug: 0.1,
            law: ConstitutiveLaw::IdealGas {
                p_ref: 2.0,
                mu_ref: vec![0.0, 0.0],
            },
        }
    }

    fn fake_layout() -> BlockLayout {
        BlockLayout {
            n_species: 1,
            dim_potential: 1,
            dim_stress: 1,
            dim_pressure: 1,
            dim_velocity: 1,
        }
    }

    #[test]
    fn identity_system_returns_rhs() {
        let layout = fake_layout();
        let n = layout.dim();
        let sys = BlockSystem {
            layout,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
            rhs: (0..n).map(|i| i as f64 - 2.5).collect(),
        };
        let (sol, report) = solve_linear(&sys).unwrap();
        for (x, b) in sol.x.iter().zip(&sys.rhs) {
            assert!((x - b).abs() <= 1e-14 * b.abs());
        }
        assert!(report.residual <= report.bound);
    }

    #[test]
    fn singular_system_is_reported() {
        let layout = fake_layout();
        let n = layout.dim();
        let mut entries: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        entries[3].2 = 0.0;
        let sys = BlockSystem {
            layout,
            entries,
            rhs: vec![1.0; n],
        };
        assert!(matches!(solve_linear(&sys), Err(Error::Singular(_))));
    }

    #[test]
    fn homogeneous_problem_converges_immediately() {
        let mesh = unit_square_mesh(2, Diagonal::Right).unwrap();
        let m = model();
        let spaces = Spaces::new(&mesh, Family::One, Execution::Serial).unwrap();
        let init = MixtureState::uniform(&mesh, &[1.0, 1.0], &m).unwrap();
        let problem = Problem {
            model: &m,
            mesh: &mesh,
            spaces: &spaces,
            data: &ZeroData,
            exec: Execution::Serial,
        };
        let out = picard(&problem, init, &PicardOptions::default()).unwrap();
        assert!(out.history.iterations() <= 2);
        assert!(out.solution.fields().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn diff_norm_of_identical_states_is_zero() {
        let mesh = unit_square_mesh(2, Diagonal::Right).unwrap();
        let m = model();
        let spaces = Spaces::new(&mesh, Family::Two, Execution::Serial).unwrap();
        let state = MixtureState::uniform(&mesh, &[1.0, 1.0], &m).unwrap();
        let layout = BlockLayout::new(2, &spaces);
        let mut a = SolutionState::zeros(layout);
        a.x.iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = (i as f64).sin());
        assert_eq!(
            theta_q_diff_norm(&mesh, &spaces, &m, &state, &a, &a).unwrap(),
            0.0
        );
        let b = SolutionState::zeros(BlockLayout {
            dim_stress: 1,
            ..layout
        });
        assert!(matches!(
            theta_q_diff_norm(&mesh, &spaces, &m, &state, &a, &b),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let h = PicardHistory {
            records: vec![PicardRecord {
                iteration: 1,
                difference: 0.5,
                linear_residual: 1e-12,
                floored: 0,
            }],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("iteration,difference"));
    }
}
