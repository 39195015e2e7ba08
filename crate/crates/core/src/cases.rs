//! Benzene-cyclohexane mixing in a T-junction.
//!
//! Species 1 is benzene (enters through the top arm), species 2 is
//! cyclohexane (bottom arm). The configuration is in SI units; the solve runs
//! on scaled quantities:
//!
//! | quantity        | scale                         |
//! |-----------------|-------------------------------|
//! | length          | `L`, the channel width        |
//! | velocity        | `D12 / L`                     |
//! | concentration   | `C`, the mean reference value |
//! | potentials      | `RT`                          |
//! | stress/pressure | `C RT`                        |
//! | molar mass      | mean molar mass               |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assembly::{Family, MixtureState, ProblemData, Spaces};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fe::CellGeometry;
use crate::io::{solution_fields, FieldUnits, VtkField};
use crate::mesh::{junction_mesh, BoundaryTag, JunctionGeometry, Mesh, Point};
use crate::quadrature::{quadrature, EdgeRule};
use crate::solver::{picard, postprocess, Derived, PicardOptions, PicardOutcome, Problem};
use crate::thermo::{ConstitutiveLaw, MaterialModel, GAS_CONSTANT};

/// Activity model of the liquid mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activity {
    /// Margules with `a12 = a21 = 0`.
    #[default]
    IdealSolution,
    /// Two-parameter Margules; `a12` and `a21` are required.
    Margules,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixingConfig {
    /// Binary Stefan-Maxwell diffusivity, m^2/s.
    pub diffusivity: f64,
    /// Shear viscosity, Pa s.
    pub eta: f64,
    /// Bulk viscosity, Pa s.
    pub zeta: f64,
    /// Molar masses (benzene, cyclohexane), kg/mol.
    pub molar_masses: [f64; 2],
    /// Ambient pressure added to the computed pressure on output, Pa.
    pub ambient_pressure: f64,
    /// Pure-liquid molar concentrations (benzene, cyclohexane), mol/m^3.
    pub c_ref: [f64; 2],
    pub activity: Activity,
    pub a12: Option<f64>,
    pub a21: Option<f64>,
    /// Peak inlet speed of cyclohexane, m/s.
    pub cyclohexane_speed: f64,
    pub temperature: f64,
    /// Physical length of one geometry unit, m.
    pub channel_width: f64,
    /// Picard under-relaxation.
    pub relaxation: f64,
    /// Velocity augmentation parameter (scaled units).
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    /// Element family, 1 or 2.
    pub family: u32,
    pub geometry: JunctionGeometry,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            diffusivity: 2.1e-9,
            eta: 6e-4,
            zeta: 1e-7,
            molar_masses: [0.078, 0.084],
            ambient_pressure: 1e5,
            c_ref: [11.23e3, 9.20e3],
            activity: Activity::IdealSolution,
            a12: None,
            a21: None,
            cyclohexane_speed: 4e-6,
            temperature: 298.15,
            channel_width: 100e-6,
            relaxation: 0.1,
            gamma: 0.1,
            tolerance: 1e-7,
            max_iter: 500,
            family: 1,
            geometry: JunctionGeometry::default(),
        }
    }
}

impl MixingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("diffusivity", self.diffusivity),
            ("eta", self.eta),
            ("zeta", self.zeta),
            ("molar_masses[0]", self.molar_masses[0]),
            ("molar_masses[1]", self.molar_masses[1]),
            ("c_ref[0]", self.c_ref[0]),
            ("c_ref[1]", self.c_ref[1]),
            ("temperature", self.temperature),
            ("channel_width", self.channel_width),
            ("gamma", self.gamma),
            ("tolerance", self.tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.cyclohexane_speed.is_finite() && self.cyclohexane_speed >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "cyclohexane_speed must be non-negative, got {}",
                self.cyclohexane_speed
            )));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "relaxation must lie in (0, 1], got {}",
                self.relaxation
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Family::from_index(self.family)?;
        match self.activity {
            Activity::Margules => {
                let missing: Vec<&str> = [("a12", self.a12), ("a21", self.a21)]
                    .iter()
                    .filter(|(_, v)| v.is_none())
                    .map(|(k, _)| *k)
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "activity = \"margules\" requires {}",
                        missing.join(", ")
                    )));
                }
                for (k, v) in [("a12", self.a12), ("a21", self.a21)] {
                    if !v.is_some_and(f64::is_finite) {
                        return Err(Error::InvalidArgument(format!("{k} must be finite")));
                    }
                }
            }
            Activity::IdealSolution => {
                if self.a12.is_some() || self.a21.is_some() {
                    return Err(Error::InvalidArgument(
                        "a12/a21 given but activity is \"ideal-solution\"".into(),
                    ));
                }
            }
        }
        self.geometry.validate()
    }

    /// Margules parameters in use.
    pub fn margules(&self) -> (f64, f64) {
        match self.activity {
            Activity::IdealSolution => (0.0, 0.0),
            Activity::Margules => (self.a12.unwrap_or(0.0), self.a21.unwrap_or(0.0)),
        }
    }

    pub fn rt(&self) -> f64 {
        GAS_CONSTANT * self.temperature
    }

    /// Peak benzene inlet speed that gives both inlets the same molar flux.
    pub fn benzene_speed(&self) -> f64 {
        self.c_ref[1] * self.cyclohexane_speed / self.c_ref[0]
    }

    pub fn scales(&self) -> Scales {
        let rt = self.rt();
        let conc = 0.5 * (self.c_ref[0] + self.c_ref[1]);
        Scales {
            length: self.channel_width,
            speed: self.diffusivity / self.channel_width,
            conc,
            rt,
            pressure: conc * rt,
            molar_mass: 0.5 * (self.molar_masses[0] + self.molar_masses[1]),
        }
    }

    /// Scaled material model; reference potentials are zero (see [`run_mixing`]).
    pub fn model(&self) -> MaterialModel {
        let s = self.scales();
        let (a12, a21) = self.margules();
        let viscous = s.speed / (s.length * s.pressure);
        MaterialModel {
            molar_masses: self.molar_masses.iter().map(|m| m / s.molar_mass).collect(),
            diffusivities: vec![0.0, 1.0, 1.0, 0.0],
            rt: 1.0,
            eta: self.eta * viscous,
            zeta: self.zeta * viscous,
            gamma_aug: self.gamma,
            law: ConstitutiveLaw::MargulesBinary {
                a12,
                a21,
                c_ref: [self.c_ref[0] / s.conc, self.c_ref[1] / s.conc],
                mu_ref: [0.0, 0.0],
            },
        }
    }
}

/// Reference scales of the nondimensionalisation, SI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub length: f64,
    pub speed: f64,
    pub conc: f64,
    pub rt: f64,
    pub pressure: f64,
    pub molar_mass: f64,
}

impl Scales {
    /// Molar flux per unit depth through a boundary segment, mol/(m s).
    pub fn line_flux(&self) -> f64 {
        self.conc * self.speed * self.length
    }
}

/// A straight tagged boundary segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Point,
    pub tangent: Point,
    pub length: f64,
    pub normal: Point,
}

impl Segment {
    /// Position across the segment in `[0, 1]`.
    pub fn coordinate(&self, x: Point) -> f64 {
        (((x[0] - self.start[0]) * self.tangent[0] + (x[1] - self.start[1]) * self.tangent[1])
            / self.length)
            .clamp(0.0, 1.0)
    }
}

/// Collects the facets with `tag` into one segment. Errors if the tag is
/// absent or its facets are not collinear.
pub fn tag_segment(mesh: &Mesh, tag: BoundaryTag) -> Result<Segment> {
    let facets: Vec<_> = mesh.facets_with_tag(tag).collect();
    let first = facets
        .first()
        .ok_or_else(|| Error::MissingTag(tag.to_string()))?;
    let normal = mesh.outward_normal(first.edge);
    let tangent = [-normal[1], normal[0]];
    let pts: Vec<Point> = facets
        .iter()
        .flat_map(|f| mesh.edges()[f.edge].map(|v| mesh.vertices()[v]))
        .collect();
    let proj = |p: &Point| p[0] * tangent[0] + p[1] * tangent[1];
    let off = |p: &Point| p[0] * normal[0] + p[1] * normal[1];
    let o0 = off(&pts[0]);
    let scale = pts
        .iter()
        .map(proj)
        .fold(0.0f64, |a, b| a.max(b.abs()))
        .max(1.0);
    if pts.iter().any(|p| (off(p) - o0).abs() > 1e-10 * scale) {
        return Err(Error::InvalidGeometry(format!(
            "facets tagged {tag} are not collinear"
        )));
    }
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(proj(p)), hi.max(proj(p)))
        });
    let start = pts
        .iter()
        .copied()
        .min_by(|a, b| proj(a).total_cmp(&proj(b)))
        .expect("non-empty");
    Ok(Segment {
        start,
        tangent,
        length: hi - lo,
        normal,
    })
}

/// Boundary data of the mixing problem in scaled units.
///
/// Each inlet carries a parabolic normal profile of one pure species with
/// peak molar flux density `peak_flux`; the outlet carries parabolic profiles
/// of both species sized to balance the inflow; walls carry nothing. Mass
/// fluxes are the molar-mass-weighted sums of the molar fluxes, so the
/// compatibility conditions hold pointwise and in total.
#[derive(Debug, Clone, PartialEq)]
pub struct InletProfiles {
    pub inlets: [Segment; 2],
    pub outlet: Segment,
    pub peak_flux: f64,
    pub molar_masses: [f64; 2],
    /// Outlet peak molar flux density of each species.
    pub outlet_peak: [f64; 2],
}

fn bump(s: f64) -> f64 {
    4.0 * s * (1.0 - s)
}

impl InletProfiles {
    /// `peak_flux` is the scaled peak molar flux density of either inlet.
    pub fn new(mesh: &Mesh, peak_flux: f64, molar_masses: [f64; 2]) -> Result<Self> {
        let inlets = [
            tag_segment(mesh, BoundaryTag::Inlet(1))?,
            tag_segment(mesh, BoundaryTag::Inlet(2))?,
        ];
        let outlet = tag_segment(mesh, BoundaryTag::Outlet)?;
        if mesh.facets_with_tag(BoundaryTag::Wall).next().is_none() {
            return Err(Error::MissingTag(BoundaryTag::Wall.to_string()));
        }
        let outlet_peak = [0, 1].map(|i| peak_flux * inlets[i].length / outlet.length);
        Ok(Self {
            inlets,
            outlet,
            peak_flux,
            molar_masses,
            outlet_peak,
        })
    }

    /// Outward normal molar flux density of species `i` at `x`.
    fn molar(&self, x: Point, tag: BoundaryTag, i: usize) -> Option<f64> {
        match tag {
            BoundaryTag::Wall => Some(0.0),
            BoundaryTag::Inlet(k @ (1 | 2)) => {
                let k = k as usize - 1;
                Some(if i == k {
                    -self.peak_flux * bump(self.inlets[k].coordinate(x))
                } else {
                    0.0
                })
            }
            BoundaryTag::Outlet => Some(self.outlet_peak[i] * bump(self.outlet.coordinate(x))),
            BoundaryTag::Inlet(_) => None,
        }
    }

    fn normal(&self, tag: BoundaryTag) -> Option<Point> {
        match tag {
            BoundaryTag::Inlet(k @ (1 | 2)) => Some(self.inlets[k as usize - 1].normal),
            BoundaryTag::Outlet => Some(self.outlet.normal),
            _ => None,
        }
    }

    /// Total inflow of species `i`, scaled.
    pub fn inflow(&self, i: usize) -> f64 {
        self.peak_flux * self.inlets[i].length * 2.0 / 3.0
    }
}

impl ProblemData for InletProfiles {
    fn mass_flux(&self, x: Point, tag: BoundaryTag) -> Option<[f64; 2]> {
        if tag == BoundaryTag::Wall {
            return Some([0.0; 2]);
        }
        let n = self.normal(tag)?;
        let g: f64 = (0..2)
            .map(|i| self.molar_masses[i] * self.molar(x, tag, i).unwrap_or(0.0))
            .sum();
        Some([g * n[0], g * n[1]])
    }

    fn species_flux(&self, x: Point, _normal: Point, tag: BoundaryTag, i: usize) -> Option<f64> {
        self.molar(x, tag, i)
    }
}

/// Diagnostics of a converged mixing run.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingDiagnostics {
    /// Peak benzene inlet speed, m/s.
    pub benzene_speed: f64,
    pub picard_iterations: usize,
    /// Outward molar flux of each species through each tag, mol/(m s),
    /// recovered variationally from the discrete species balance.
    pub species_flux: [BTreeMap<String, f64>; 2],
    /// Same, from the boundary traces of `c_i v_i . n`.
    pub trace_flux: [BTreeMap<String, f64>; 2],
    /// `|inflow + outflow| / inflow` per species (variational fluxes).
    pub species_balance: [f64; 2],
    /// Net mass flux over all boundaries relative to the inlet mass flux.
    pub net_mass_flux: f64,
    /// `|| v - sum_i omega_i v_i ||_0`, scaled.
    pub mass_average_defect: f64,
    /// Largest `|v_i - v|`, m/s.
    pub species_slip_max: f64,
    /// Same in scaled units.
    pub species_slip_max_scaled: f64,
    /// `|| sum_i d_i ||_0`, scaled.
    pub gibbs_duhem: f64,
    pub pressure_finite: bool,
    /// `max |p_v - mean of neighbours| / (max p - min p)` over interior vertices.
    pub pressure_roughness: f64,
    /// Mean benzene mole fraction on the outlet.
    pub outlet_benzene_fraction: f64,
}

pub struct MixingRun {
    pub config: MixingConfig,
    pub scales: Scales,
    pub model: MaterialModel,
    pub mesh: Mesh,
    pub spaces: Spaces,
    pub profiles: InletProfiles,
    pub outcome: PicardOutcome,
    pub derived: Derived,
    pub diagnostics: MixingDiagnostics,
}

impl MixingRun {
    /// Output fields in SI units; `shifted_pressure` includes the ambient value.
    pub fn vtk_fields(&self) -> Vec<VtkField> {
        let s = &self.scales;
        let units = FieldUnits {
            potential: s.rt,
            stress: s.pressure,
            velocity: s.speed,
            concentration: s.conc,
        };
        solution_fields(
            &self.mesh,
            &self.spaces,
            &self.outcome.state,
            &self.outcome.solution,
            &self.derived,
            units,
        )
    }
}

/// Equimolar start with the ideal-mixing total concentration.
pub fn initial_state(mesh: &Mesh, model: &MaterialModel) -> Result<MixtureState> {
    let c_ref = match &model.law {
        ConstitutiveLaw::MargulesBinary { c_ref, .. } => *c_ref,
        ConstitutiveLaw::IdealGas { .. } => {
            return Err(Error::InvalidArgument(
                "mixing case needs the Margules law".into(),
            ))
        }
    };
    let c_total = c_ref[0] * c_ref[1] / (0.5 * c_ref[1] + 0.5 * c_ref[0]);
    MixtureState::uniform(mesh, &[0.5 * c_total, 0.5 * c_total], model)
}

/// Meshes the junction and runs the relaxed Picard iteration.
///
/// The potentials are normalised to zero mean with zero reference values,
/// which fixes the overall composition level that flux data alone leaves
/// open.
pub fn run_mixing(config: &MixingConfig, exec: Execution) -> Result<MixingRun> {
    config.validate()?;
    let scales = config.scales();
    let model = config.model();
    let mesh = junction_mesh(&config.geometry)?;
    let spaces = Spaces::new(&mesh, Family::from_index(config.family)?, exec)?;
    let peak = config.c_ref[1] * config.cyclohexane_speed / (scales.conc * scales.speed);
    let m = [model.molar_masses[0], model.molar_masses[1]];
    let profiles = InletProfiles::new(&mesh, peak, m)?;
    let opts = PicardOptions {
        tolerance: config.tolerance,
        relaxation: config.relaxation,
        max_iter: config.max_iter,
        ..Default::default()
    };
    let problem = Problem {
        model: &model,
        mesh: &mesh,
        spaces: &spaces,
        data: &profiles,
        exec,
    };
    let outcome = picard(&problem, initial_state(&mesh, &model)?, &opts)?;
    let p_shift = config.ambient_pressure / scales.pressure;
    let derived = postprocess(
        &mesh,
        &spaces,
        &model,
        &outcome.state,
        &outcome.solution,
        p_shift,
    )?;
    let diagnostics = diagnose(
        config, &scales, &model, &mesh, &spaces, &profiles, &outcome, &derived,
    )?;
    Ok(MixingRun {
        config: config.clone(),
        scales,
        model,
        mesh,
        spaces,
        profiles,
        outcome,
        derived,
        diagnostics,
    })
}

#[allow(clippy::too_many_arguments)]
fn diagnose(
    config: &MixingConfig,
    scales: &Scales,
    model: &MaterialModel,
    mesh: &Mesh,
    spaces: &Spaces,
    profiles: &InletProfiles,
    outcome: &PicardOutcome,
    derived: &Derived,
) -> Result<MixingDiagnostics> {
    let sol = &outcome.solution;
    let state = &outcome.state;
    let tags = [
        BoundaryTag::Inlet(1),
        BoundaryTag::Inlet(2),
        BoundaryTag::Outlet,
    ];

    // Variational boundary flux: for a continuous piecewise-linear psi equal
    // to one on the tagged vertices, int_tag c v.n psi = int c v . grad psi
    // (no reactions here). It satisfies the discrete balance exactly.
    let rule = quadrature(crate::assembly::ASSEMBLY_DEGREE)?;
    let mut species_flux: [BTreeMap<String, f64>; 2] = Default::default();
    for tag in tags {
        let mut psi = vec![0.0; mesh.num_vertices()];
        for f in mesh.facets_with_tag(tag) {
            for v in mesh.edges()[f.edge] {
                psi[v] = 1.0;
            }
        }
        let mut total = [0.0; 2];
        for c in 0..mesh.num_cells() {
            let cell = mesh.cells()[c];
            if cell.iter().all(|&v| psi[v] == 0.0) {
                continue;
            }
            let geom = CellGeometry::new(mesh, c);
            let w = geom.weights(&rule);
            let tw = spaces.velocity.tabulate(mesh, c, &rule.points);
            let grad: [f64; 2] =
                [0, 1].map(|k| (0..3).map(|a| psi[cell[a]] * geom.grad_lambda[a][k]).sum());
            let cc = state.cell_concentrations(c);
            for (i, t) in total.iter_mut().enumerate() {
                let (vi, _) = spaces.velocity.evaluate(c, &tw, sol.species_velocity(i));
                for (q, wq) in w.iter().enumerate() {
                    *t += wq * cc[i] * (vi[2 * q] * grad[0] + vi[2 * q + 1] * grad[1]);
                }
            }
        }
        for i in 0..2 {
            species_flux[i].insert(tag.to_string(), total[i] * scales.line_flux());
        }
    }

    // Boundary traces.
    let edge_rule = EdgeRule::new(8);
    let mut trace_flux: [BTreeMap<String, f64>; 2] = Default::default();
    let mut outlet_x = (0.0, 0.0);
    for tag in tags {
        let mut total = [0.0; 2];
        for f in mesh.facets_with_tag(tag) {
            let c = mesh.edge_cells(f.edge)[0].expect("boundary edge has a cell");
            let [a, b] = mesh.edges()[f.edge].map(|v| mesh.vertices()[v]);
            let len = mesh.edge_length(f.edge);
            let n = mesh.outward_normal(f.edge);
            let geom = CellGeometry::new(mesh, c);
            let pts: Vec<[f64; 3]> = edge_rule
                .nodes
                .iter()
                .map(|t| {
                    let s = 0.5 * (t + 1.0);
                    geom.barycentric([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])])
                })
                .collect();
            let tw = spaces.velocity.tabulate(mesh, c, &pts);
            let cc = state.cell_concentrations(c);
            for (i, t) in total.iter_mut().enumerate() {
                let (vi, _) = spaces.velocity.evaluate(c, &tw, sol.species_velocity(i));
                for (q, wq) in edge_rule.weights.iter().enumerate() {
                    *t += 0.5 * len * wq * cc[i] * (vi[2 * q] * n[0] + vi[2 * q + 1] * n[1]);
                }
            }
            if tag == BoundaryTag::Outlet {
                outlet_x.0 += len * cc[0] / (cc[0] + cc[1]);
                outlet_x.1 += len;
            }
        }
        for i in 0..2 {
            trace_flux[i].insert(tag.to_string(), total[i] * scales.line_flux());
        }
    }

    let species_balance = [0, 1].map(|i| {
        let net: f64 = species_flux[i].values().sum();
        net.abs() / (profiles.inflow(i) * scales.line_flux())
    });
    let inlet_mass: f64 = (0..2)
        .map(|i| model.molar_masses[i] * profiles.inflow(i))
        .sum();
    let net_mass: f64 = (0..2)
        .map(|i| model.molar_masses[i] * species_flux[i].values().sum::<f64>() / scales.line_flux())
        .sum();

    let p = sol.pressure();
    let pressure_finite = p.iter().all(|v| v.is_finite());
    let pressure_roughness = roughness(mesh, spaces, p);

    Ok(MixingDiagnostics {
        benzene_speed: config.benzene_speed(),
        picard_iterations: outcome.history.iterations(),
        species_flux,
        trace_flux,
        species_balance,
        net_mass_flux: if inlet_mass > 0.0 {
            net_mass.abs() / inlet_mass
        } else {
            net_mass.abs()
        },
        mass_average_defect: derived.defect_l2,
        species_slip_max: derived.species_slip_max * scales.speed,
        species_slip_max_scaled: derived.species_slip_max,
        gibbs_duhem: derived.gibbs_duhem,
        pressure_finite,
        pressure_roughness,
        outlet_benzene_fraction: if outlet_x.1 > 0.0 {
            outlet_x.0 / outlet_x.1
        } else {
            f64::NAN
        },
    })
}

/// Largest deviation of an interior vertex value from the mean of its
/// neighbours, relative to the range of the field. Zero for a constant field.
fn roughness(mesh: &Mesh, spaces: &Spaces, p: &[f64]) -> f64 {
    // The pressure space is continuous piecewise linear: one dof per vertex.
    let mut vertex_p = vec![0.0; mesh.num_vertices()];
    for c in 0..mesh.num_cells() {
        for (a, &d) in spaces
            .pressure
            .dofmap
            .cell_dofs(c)
            .iter()
            .enumerate()
            .take(3)
        {
            vertex_p[mesh.cells()[c][a]] = p[d];
        }
    }
    let mut on_boundary = vec![false; mesh.num_vertices()];
    for f in mesh.boundary() {
        for v in mesh.edges()[f.edge] {
            on_boundary[v] = true;
        }
    }
    let mut sum = vec![0.0; mesh.num_vertices()];
    let mut count = vec![0usize; mesh.num_vertices()];
    for &[a, b] in mesh.edges() {
        sum[a] += vertex_p[b];
        sum[b] += vertex_p[a];
        count[a] += 1;
        count[b] += 1;
    }
    let (lo, hi) = vertex_p
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return 0.0;
    }
    (0..mesh.num_vertices())
        .filter(|&v| !on_boundary[v] && count[v] > 0)
        .map(|v| (vertex_p[v] - sum[v] / count[v] as f64).abs() / range)
        .fold(0.0, f64::max)
}
