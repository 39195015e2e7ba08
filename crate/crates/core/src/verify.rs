//! Manufactured solutions, error norms and convergence rates.
//!
//! The manufactured solution on the unit square is driven by one scalar
//! function `g`: `c_i = exp(g / D_i)`, `v_i = D_i grad g`, with `RT = 1`,
//! unit molar masses and `D_ij = D_i D_j`. The mass-average velocity is then
//! `v = phi(g) grad g` with `phi = sum D_i c_i / sum c_i`, so the velocity
//! augmentation vanishes identically and all forcing terms have closed forms.

use std::io::Write;

use crate::assembly::{discrete_driving_force, Block, Family, MixtureState, ProblemData, Spaces};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fe::CellGeometry;
use crate::mesh::{unit_square_mesh, BoundaryTag, Diagonal, Mesh, Point};
use crate::quadrature::{gauss_legendre, quadrature};
use crate::solver::{picard, PicardOptions, PicardOutcome, Problem, SolutionState};
use crate::thermo::{ConstitutiveLaw, MaterialModel};

/// Quadrature degree for error norms.
pub const ERROR_DEGREE: usize = 10;

type Fn2<T> = Box<dyn Fn(Point) -> T + Send + Sync>;

/// A scalar function with the derivatives the manufactured solution needs.
pub struct ScalarFunction {
    pub value: Option<Fn2<f64>>,
    pub gradient: Option<Fn2<[f64; 2]>>,
    /// `[g_xx, g_xy, g_yy]`.
    pub hessian: Option<Fn2<[f64; 3]>>,
    pub grad_laplacian: Option<Fn2<[f64; 2]>>,
}

impl ScalarFunction {
    /// `g(x, y) = x y (1 - x)(1 - y) / 5`.
    pub fn bump() -> Self {
        let a = |t: f64| t * (1.0 - t);
        let da = |t: f64| 1.0 - 2.0 * t;
        Self {
            value: Some(Box::new(move |p| a(p[0]) * a(p[1]) / 5.0)),
            gradient: Some(Box::new(move |p| {
                [da(p[0]) * a(p[1]) / 5.0, a(p[0]) * da(p[1]) / 5.0]
            })),
            hessian: Some(Box::new(move |p| {
                [
                    -2.0 * a(p[1]) / 5.0,
                    da(p[0]) * da(p[1]) / 5.0,
                    -2.0 * a(p[0]) / 5.0,
                ]
            })),
            // Laplacian = -2 (a(x) + a(y)) / 5.
            grad_laplacian: Some(Box::new(move |p| {
                [-2.0 * da(p[0]) / 5.0, -2.0 * da(p[1]) / 5.0]
            })),
        }
    }
}

/// Physical parameters of the manufactured problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmsParameters {
    pub eta: f64,
    pub zeta: f64,
    pub gamma: f64,
}

impl Default for MmsParameters {
    fn default() -> Self {
        Self {
            eta: 0.1,
            zeta: 0.1,
            gamma: 0.1,
        }
    }
}

/// Exact fields and forcing of the manufactured problem on the unit square.
pub struct ManufacturedCase {
    pub d: Vec<f64>,
    pub params: MmsParameters,
    g: Fn2<f64>,
    grad: Fn2<[f64; 2]>,
    hess: Fn2<[f64; 3]>,
    grad_lap: Fn2<[f64; 2]>,
    /// Domain average of `g`.
    pub g_mean: f64,
    /// Reference pressure: domain average of the total concentration.
    pub p_ref: f64,
    /// Domain averages of the concentrations.
    pub c_mean: Vec<f64>,
}

/// Sums over species at one point: `S0 = sum c`, `S1 = sum D c`,
/// `T = sum c / D`, `U = sum c / D^2`.
struct Sums {
    c: Vec<f64>,
    s0: f64,
    s1: f64,
    t: f64,
    u: f64,
}

impl ManufacturedCase {
    /// The standard three-species case: `D_i = 1/2 + i/4`, `g` = bump.
    pub fn standard(params: MmsParameters) -> Self {
        Self::new(vec![0.75, 1.0, 1.25], ScalarFunction::bump(), params)
            .expect("bump function supplies all derivatives")
    }

    pub fn new(d: Vec<f64>, g: ScalarFunction, params: MmsParameters) -> Result<Self> {
        if d.len() < 2 || d.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidArgument(
                "need at least two positive scales D_i".into(),
            ));
        }
        let missing =
            |name: &str| Error::InvalidArgument(format!("manufactured g lacks its {name}"));
        let value = g.value.ok_or_else(|| missing("value"))?;
        let grad = g.gradient.ok_or_else(|| missing("gradient"))?;
        let hess = g.hessian.ok_or_else(|| missing("Hessian"))?;
        let grad_lap = g
            .grad_laplacian
            .ok_or_else(|| missing("Laplacian gradient"))?;
        let mut case = Self {
            d,
            params,
            g: value,
            grad,
            hess,
            grad_lap,
            g_mean: 0.0,
            p_ref: 0.0,
            c_mean: Vec::new(),
        };
        case.g_mean = unit_square_average(|p| (case.g)(p));
        case.c_mean = (0..case.d.len())
            .map(|i| unit_square_average(|p| case.concentrations(p)[i]))
            .collect();
        case.p_ref = case.c_mean.iter().sum();
        Ok(case)
    }

    pub fn num_species(&self) -> usize {
        self.d.len()
    }

    /// Material model whose ideal-gas references reproduce the exact fields
    /// with mean-zero potentials.
    pub fn model(&self) -> MaterialModel {
        let n = self.num_species();
        MaterialModel {
            molar_masses: vec![1.0; n],
            diffusivities: vec![0.0; n * n],
            rt: 1.0,
            eta: self.params.eta,
            zeta: self.params.zeta,
            gamma_aug: self.params.gamma,
            law: ConstitutiveLaw::IdealGas {
                p_ref: self.p_ref,
                mu_ref: self
                    .d
                    .iter()
                    .map(|d| self.p_ref.ln() - self.g_mean / d)
                    .collect(),
            },
        }
        .with_diffusivities(|i, j| self.d[i] * self.d[j])
    }

    fn sums(&self, p: Point) -> Sums {
        let g = (self.g)(p);
        let c: Vec<f64> = self.d.iter().map(|d| (g / d).exp()).collect();
        let mut s = Sums {
            s0: 0.0,
            s1: 0.0,
            t: 0.0,
            u: 0.0,
            c,
        };
        for (ci, d) in s.c.iter().zip(&self.d) {
            s.s0 += ci;
            s.s1 += d * ci;
            s.t += ci / d;
            s.u += ci / (d * d);
        }
        s
    }

    pub fn concentrations(&self, p: Point) -> Vec<f64> {
        self.sums(p).c
    }

    pub fn potential(&self, p: Point, i: usize) -> f64 {
        ((self.g)(p) - self.g_mean) / self.d[i]
    }

    pub fn grad_potential(&self, p: Point, i: usize) -> [f64; 2] {
        let gg = (self.grad)(p);
        [gg[0] / self.d[i], gg[1] / self.d[i]]
    }

    /// Mean-zero pressure `c_T - p_ref`.
    pub fn pressure(&self, p: Point) -> f64 {
        self.sums(p).s0 - self.p_ref
    }

    pub fn grad_pressure(&self, p: Point) -> [f64; 2] {
        let t = self.sums(p).t;
        let gg = (self.grad)(p);
        [t * gg[0], t * gg[1]]
    }

    pub fn species_velocity(&self, p: Point, i: usize) -> [f64; 2] {
        let gg = (self.grad)(p);
        [self.d[i] * gg[0], self.d[i] * gg[1]]
    }

    /// `(phi, phi', phi'')` as functions of `g`.
    fn phi(&self, s: &Sums) -> [f64; 3] {
        let phi = s.s1 / s.s0;
        let d1 = 1.0 - phi * s.t / s.s0;
        let d2 = -(d1 * s.t / s.s0 + phi * (s.u * s.s0 - s.t * s.t) / (s.s0 * s.s0));
        [phi, d1, d2]
    }

    pub fn velocity(&self, p: Point) -> [f64; 2] {
        let phi = self.phi(&self.sums(p))[0];
        let gg = (self.grad)(p);
        [phi * gg[0], phi * gg[1]]
    }

    /// Velocity gradient (symmetric): `[v_xx, v_xy, v_yy]`.
    fn grad_velocity(&self, p: Point) -> [f64; 3] {
        let [phi, d1, _] = self.phi(&self.sums(p));
        let g = (self.grad)(p);
        let h = (self.hess)(p);
        [
            d1 * g[0] * g[0] + phi * h[0],
            d1 * g[0] * g[1] + phi * h[1],
            d1 * g[1] * g[1] + phi * h[2],
        ]
    }

    /// Viscous stress `2 eta eps(v) + (zeta - eta) div v I`.
    pub fn stress(&self, p: Point) -> [f64; 3] {
        let e = self.grad_velocity(p);
        let div = e[0] + e[2];
        let (eta, zeta) = (self.params.eta, self.params.zeta);
        [
            2.0 * eta * e[0] + (zeta - eta) * div,
            2.0 * eta * e[1],
            2.0 * eta * e[2] + (zeta - eta) * div,
        ]
    }

    /// `div tau = (eta + zeta) grad div v` (the velocity is a gradient).
    pub fn div_stress(&self, p: Point) -> [f64; 2] {
        let [phi, d1, d2] = self.phi(&self.sums(p));
        let g = (self.grad)(p);
        let h = (self.hess)(p);
        let gl = (self.grad_lap)(p);
        let g2 = g[0] * g[0] + g[1] * g[1];
        let lap = h[0] + h[2];
        let hg = [h[0] * g[0] + h[1] * g[1], h[1] * g[0] + h[2] * g[1]];
        let k = self.params.eta + self.params.zeta;
        [0, 1].map(|a| k * (d2 * g2 * g[a] + 2.0 * d1 * hg[a] + d1 * lap * g[a] + phi * gl[a]))
    }

    pub fn div_total_stress(&self, p: Point) -> [f64; 2] {
        let dt = self.div_stress(p);
        let gp = self.grad_pressure(p);
        [dt[0] - gp[0], dt[1] - gp[1]]
    }

    /// Exact driving force `-c_i grad mu_i + omega_i grad p`.
    pub fn driving_force(&self, p: Point, i: usize) -> [f64; 2] {
        let s = self.sums(p);
        let gm = self.grad_potential(p, i);
        let gp = self.grad_pressure(p);
        let om = s.c[i] / s.s0;
        [0, 1].map(|a| -s.c[i] * gm[a] + om * gp[a])
    }

    pub fn density(&self, p: Point) -> f64 {
        self.sums(p).s0
    }

    /// Initial Picard coefficients: the domain-averaged concentrations.
    pub fn initial_state(&self, mesh: &Mesh) -> Result<MixtureState> {
        MixtureState::uniform(mesh, &self.c_mean, &self.model())
    }
}

impl ProblemData for ManufacturedCase {
    fn mass_flux(&self, x: Point, _tag: BoundaryTag) -> Option<[f64; 2]> {
        let s = self.sums(x);
        let g = (self.grad)(x);
        Some([s.s1 * g[0], s.s1 * g[1]])
    }

    fn species_flux(&self, x: Point, n: Point, _tag: BoundaryTag, i: usize) -> Option<f64> {
        let c = self.concentrations(x)[i];
        let v = self.species_velocity(x, i);
        Some(c * (v[0] * n[0] + v[1] * n[1]))
    }

    fn body_force(&self, x: Point) -> [f64; 2] {
        let ds = self.div_total_stress(x);
        let rho = self.density(x);
        [-ds[0] / rho, -ds[1] / rho]
    }

    fn reaction(&self, x: Point, i: usize) -> f64 {
        let g = (self.grad)(x);
        let h = (self.hess)(x);
        let c = self.concentrations(x)[i];
        c * (g[0] * g[0] + g[1] * g[1] + self.d[i] * (h[0] + h[2]))
    }
}

fn unit_square_average(f: impl Fn(Point) -> f64) -> f64 {
    let (x, w) = gauss_legendre(40);
    let mut s = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        for (yj, wj) in x.iter().zip(&w) {
            s += 0.25 * wi * wj * f([0.5 * (xi + 1.0), 0.5 * (yj + 1.0)]);
        }
    }
    s
}

/// Errors of one mesh level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRecord {
    pub h: f64,
    pub mu: Vec<f64>,
    pub tau: f64,
    pub p: f64,
    pub species_velocity: Vec<f64>,
    pub velocity: f64,
    pub p_h1: f64,
    pub driving_force: Vec<f64>,
    pub div_total_stress: f64,
    pub grad_mu: Vec<f64>,
    pub grad_p: f64,
    pub div_tau: f64,
    /// `|| v_h - sum_i omega_i v_i,h ||_0`.
    pub mass_average_defect: f64,
    pub gibbs_duhem: f64,
    pub picard_iterations: usize,
}

impl ConvergenceRecord {
    /// Named error columns, in a fixed order.
    pub fn fields(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let per_species = |out: &mut Vec<(String, f64)>, name: &str, v: &[f64]| {
            for (i, e) in v.iter().enumerate() {
                out.push((format!("{name}_{}", i + 1), *e));
            }
        };
        per_species(&mut out, "mu", &self.mu);
        out.push(("tau".into(), self.tau));
        out.push(("p".into(), self.p));
        per_species(&mut out, "v", &self.species_velocity);
        out.push(("v".into(), self.velocity));
        out.push(("p_h1".into(), self.p_h1));
        per_species(&mut out, "d", &self.driving_force);
        out.push(("div_sigma".into(), self.div_total_stress));
        per_species(&mut out, "grad_mu", &self.grad_mu);
        out.push(("grad_p".into(), self.grad_p));
        out.push(("div_tau".into(), self.div_tau));
        out.push(("mass_average_defect".into(), self.mass_average_defect));
        out.push(("gibbs_duhem".into(), self.gibbs_duhem));
        out
    }
}

/// L2-type errors of a discrete solution against the manufactured fields.
pub fn error_norms(
    mesh: &Mesh,
    spaces: &Spaces,
    case: &ManufacturedCase,
    state: &MixtureState,
    sol: &SolutionState,
) -> Result<ConvergenceRecord> {
    let model = case.model();
    let n = case.num_species();
    let rule = quadrature(ERROR_DEGREE)?;
    let forces: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            discrete_driving_force(
                mesh,
                spaces,
                state,
                &model,
                i,
                sol.potential(i),
                sol.pressure(),
            )
        })
        .collect();

    // Squared errors accumulated per quantity.
    #[derive(Default, Clone)]
    struct Acc {
        mu: Vec<f64>,
        vi: Vec<f64>,
        d: Vec<f64>,
        gmu: Vec<f64>,
        tau: f64,
        p: f64,
        gp: f64,
        v: f64,
        divs: f64,
        divt: f64,
        defect: f64,
        gd: f64,
    }
    let per_cell = Execution::Parallel.map(mesh.num_cells(), |c| {
        let geom = CellGeometry::new(mesh, c);
        let w = geom.weights(&rule);
        let tx = spaces.potential.tabulate(mesh, c, &rule.points);
        let ts = spaces.stress.tabulate(mesh, c, &rule.points);
        let tp = spaces.pressure.tabulate(mesh, c, &rule.points);
        let tw = spaces.velocity.tabulate(mesh, c, &rule.points);
        let (s, divt) = spaces.stress.evaluate(c, &ts, sol.stress());
        let (ph, gph) = spaces.pressure.evaluate(c, &tp, sol.pressure());
        let (v, _) = spaces.velocity.evaluate(c, &tw, sol.velocity());
        let mus: Vec<_> = (0..n)
            .map(|i| spaces.potential.evaluate(c, &tx, sol.potential(i)))
            .collect();
        let vis: Vec<_> = (0..n)
            .map(|i| {
                spaces
                    .velocity
                    .evaluate(c, &tw, sol.block(Block::SpeciesVelocity(i)))
                    .0
            })
            .collect();
        let ds: Vec<_> = (0..n)
            .map(|i| spaces.velocity.evaluate(c, &tw, &forces[i]).0)
            .collect();
        let mut a = Acc {
            mu: vec![0.0; n],
            vi: vec![0.0; n],
            d: vec![0.0; n],
            gmu: vec![0.0; n],
            ..Default::default()
        };
        let sq2 = |x: [f64; 2]| x[0] * x[0] + x[1] * x[1];
        for (k, bary) in rule.points.iter().enumerate() {
            let x = geom.to_physical(bary);
            let wk = w[k];
            let te = case.stress(x);
            let dt = [s[3 * k] - te[0], s[3 * k + 1] - te[1], s[3 * k + 2] - te[2]];
            a.tau += wk * (dt[0] * dt[0] + 2.0 * dt[1] * dt[1] + dt[2] * dt[2]);
            a.p += wk * (ph[k] - case.pressure(x)).powi(2);
            let gp = case.grad_pressure(x);
            let egp = [gph[2 * k] - gp[0], gph[2 * k + 1] - gp[1]];
            a.gp += wk * sq2(egp);
            let ve = case.velocity(x);
            a.v += wk * sq2([v[2 * k] - ve[0], v[2 * k + 1] - ve[1]]);
            let dte = case.div_stress(x);
            let edt = [divt[2 * k] - dte[0], divt[2 * k + 1] - dte[1]];
            a.divt += wk * sq2(edt);
            a.divs += wk * sq2([edt[0] - egp[0], edt[1] - egp[1]]);
            let om = state.omega(mesh, &model, c, bary);
            let mut defect = [v[2 * k], v[2 * k + 1]];
            let mut gd = [0.0; 2];
            for i in 0..n {
                let (mu, gmu) = &mus[i];
                a.mu[i] += wk * (mu[k] - case.potential(x, i)).powi(2);
                let ge = case.grad_potential(x, i);
                a.gmu[i] += wk * sq2([gmu[2 * k] - ge[0], gmu[2 * k + 1] - ge[1]]);
                let vie = case.species_velocity(x, i);
                a.vi[i] += wk * sq2([vis[i][2 * k] - vie[0], vis[i][2 * k + 1] - vie[1]]);
                let de = case.driving_force(x, i);
                a.d[i] += wk * sq2([ds[i][2 * k] - de[0], ds[i][2 * k + 1] - de[1]]);
                defect[0] -= om[i] * vis[i][2 * k];
                defect[1] -= om[i] * vis[i][2 * k + 1];
                gd[0] += ds[i][2 * k];
                gd[1] += ds[i][2 * k + 1];
            }
            a.defect += wk * sq2(defect);
            a.gd += wk * sq2(gd);
        }
        a
    });
    let mut t = Acc {
        mu: vec![0.0; n],
        vi: vec![0.0; n],
        d: vec![0.0; n],
        gmu: vec![0.0; n],
        ..Default::default()
    };
    for a in per_cell {
        for i in 0..n {
            t.mu[i] += a.mu[i];
            t.vi[i] += a.vi[i];
            t.d[i] += a.d[i];
            t.gmu[i] += a.gmu[i];
        }
        t.tau += a.tau;
        t.p += a.p;
        t.gp += a.gp;
        t.v += a.v;
        t.divs += a.divs;
        t.divt += a.divt;
        t.defect += a.defect;
        t.gd += a.gd;
    }
    let sqrt = |v: Vec<f64>| v.into_iter().map(f64::sqrt).collect::<Vec<_>>();
    Ok(ConvergenceRecord {
        h: mesh.h(),
        mu: sqrt(t.mu),
        tau: t.tau.sqrt(),
        p: t.p.sqrt(),
        species_velocity: sqrt(t.vi),
        velocity: t.v.sqrt(),
        p_h1: (t.p + t.gp).sqrt(),
        driving_force: sqrt(t.d),
        div_total_stress: t.divs.sqrt(),
        grad_mu: sqrt(t.gmu),
        grad_p: t.gp.sqrt(),
        div_tau: t.divt.sqrt(),
        mass_average_defect: t.defect.sqrt(),
        gibbs_duhem: t.gd.sqrt(),
        picard_iterations: sol.iteration,
    })
}

/// Least-squares log-log slope of one error column.
#[derive(Debug, Clone, PartialEq)]
pub struct Rate {
    pub field: String,
    pub slope: f64,
    /// Errors decrease strictly from each level to the next.
    pub monotone: bool,
}

pub fn rates(records: &[ConvergenceRecord]) -> Result<Vec<Rate>> {
    if records.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "convergence rates need at least 3 levels, got {}",
            records.len()
        )));
    }
    if records.windows(2).any(|w| !(w[1].h < w[0].h)) {
        return Err(Error::InvalidArgument(
            "mesh sizes must decrease strictly".into(),
        ));
    }
    let columns: Vec<Vec<(String, f64)>> = records.iter().map(|r| r.fields()).collect();
    let hs: Vec<f64> = records.iter().map(|r| r.h).collect();
    Ok((0..columns[0].len())
        .map(|k| {
            let errs: Vec<f64> = columns.iter().map(|c| c[k].1).collect();
            Rate {
                field: columns[0][k].0.clone(),
                slope: log_log_slope(&hs, &errs),
                monotone: errs.windows(2).all(|w| w[1] < w[0]),
            }
        })
        .collect())
}

/// Least-squares slope of `log e` against `log h`.
pub fn log_log_slope(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Writes the rate table: one row per level and field.
pub fn write_rates_csv(records: &[ConvergenceRecord], mut out: impl Write) -> Result<()> {
    let slopes = rates(records).ok();
    writeln!(out, "h,field,error,slope")?;
    for r in records {
        for (k, (name, err)) in r.fields().into_iter().enumerate() {
            let slope = slopes
                .as_ref()
                .map_or(String::new(), |s| format!("{:.6}", s[k].slope));
            writeln!(out, "{:.9e},{name},{err:.9e},{slope}", r.h)?;
        }
    }
    Ok(())
}

/// One mesh level of a manufactured-solution study.
pub struct MmsLevel {
    pub n: usize,
    pub mesh: Mesh,
    pub spaces: Spaces,
    pub outcome: PicardOutcome,
    pub record: ConvergenceRecord,
}

/// Solves the manufactured problem on an `n x n` unit-square mesh.
pub fn run_mms_level(
    case: &ManufacturedCase,
    family: Family,
    n: usize,
    diagonal: Diagonal,
    opts: &PicardOptions,
    exec: Execution,
) -> Result<MmsLevel> {
    let mesh = unit_square_mesh(n, diagonal)?;
    let spaces = Spaces::new(&mesh, family, exec)?;
    let model = case.model();
    let problem = Problem {
        model: &model,
        mesh: &mesh,
        spaces: &spaces,
        data: case,
        exec,
    };
    let outcome = picard(&problem, case.initial_state(&mesh)?, opts)?;
    let record = error_norms(&mesh, &spaces, case, &outcome.state, &outcome.solution)?;
    Ok(MmsLevel {
        n,
        mesh,
        spaces,
        outcome,
        record,
    })
}
