//! Acceptance suite. Prints one PASS/FAIL line per criterion (INFO lines are
//! reported but not asserted) and exits nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    aspect_ratio, gas_model, mms_state, norm_inf, pairwise_form, quadratic_form, triangle_area,
};
use sosm_core::assembly::{assemble_system, discrete_driving_force, Family, Spaces};
use sosm_core::cases::{run_mixing, MixingConfig};
use sosm_core::error::Error;
use sosm_core::exec::Execution;
use sosm_core::fe::{aw_functionals, AwBasis, CellGeometry, FunctionSpace, Space};
use sosm_core::mesh::{unit_square_mesh, Diagonal, Point};
use sosm_core::quadrature::quadrature;
use sosm_core::solver::{LinearSolver, PicardOptions};
use sosm_core::thermo::{augment, transport_matrix, LocalState};
use sosm_core::verify::{
    rates, run_mms_level, ConvergenceRecord, ManufacturedCase, MmsParameters, Rate,
};

const LEVELS: [usize; 4] = [4, 8, 16, 32];

#[derive(Default)]
struct Report {
    failed: Vec<String>,
}

impl Report {
    fn check(&mut self, id: &str, pass: bool, detail: impl AsRef<str>) {
        println!(
            "[{}] {id}: {}",
            if pass { "PASS" } else { "FAIL" },
            detail.as_ref()
        );
        if !pass {
            self.failed.push(id.to_string());
        }
    }

    fn info(&self, id: &str, detail: impl AsRef<str>) {
        println!("[INFO] {id}: {}", detail.as_ref());
    }
}

struct Study {
    records: Vec<ConvergenceRecord>,
    rates: Vec<Rate>,
    elapsed: Duration,
}

impl Study {
    fn slope(&self, field: &str) -> f64 {
        self.rates
            .iter()
            .find(|r| r.field == field)
            .map(|r| r.slope)
            .unwrap_or(f64::NAN)
    }

    fn iterations(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.picard_iterations).collect()
    }
}

fn mms_study(family: Family) -> Result<Study, Error> {
    let case = ManufacturedCase::standard(MmsParameters::default());
    let opts = PicardOptions::default();
    let start = Instant::now();
    let mut records = Vec::new();
    for n in LEVELS {
        let level = run_mms_level(
            &case,
            family,
            n,
            Diagonal::Right,
            &opts,
            Execution::Parallel,
        )?;
        records.push(level.record);
    }
    let elapsed = start.elapsed();
    let rates = rates(&records)?;
    Ok(Study {
        records,
        rates,
        elapsed,
    })
}

fn convergence(report: &mut Report, id: &str, study: &Study) {
    let mut worst = Vec::new();
    let mut pass = true;
    for rate in &study.rates {
        let name = rate.field.as_str();
        let threshold = if name.starts_with("mu_") || name == "tau" || name == "p" {
            1.8
        } else if (name.starts_with("v_") || name.starts_with("d_")) && !name.starts_with("div") {
            0.9
        } else {
            continue;
        };
        pass &= rate.slope >= threshold;
        worst.push(format!("{name} {:.3} (>= {threshold})", rate.slope));
    }
    report.check(id, pass, worst.join(", "));
}

fn criterion_1_to_4_and_8(report: &mut Report) {
    let one = mms_study(Family::One);
    let two = mms_study(Family::Two);
    let (one, two) = match (one, two) {
        (Ok(one), Ok(two)) => (one, two),
        (one, two) => {
            let err = one.err().or(two.err()).expect("one study failed");
            for id in ["1", "2", "3", "4", "8"] {
                report.check(id, false, format!("MMS study failed: {err}"));
            }
            return;
        }
    };
    convergence(report, "1 (family 1 rates)", &one);
    report.check(
        "1 (runtime)",
        one.elapsed <= Duration::from_secs(300),
        format!("{:.1} s for n = {LEVELS:?}", one.elapsed.as_secs_f64()),
    );
    convergence(report, "2 (family 2 rates)", &two);

    let its = one.iterations();
    report.check(
        "3 (Picard iterations in 5..=10)",
        its.iter().all(|k| (5..=10).contains(k)),
        format!("{its:?} for n = {LEVELS:?}"),
    );
    report.info(
        "3 (reference counts)",
        format!(
            "n=4: {} (reference 6), n=32: {} (reference 7)",
            its[0], its[3]
        ),
    );

    composite_gaps(report, "4 (family 1)", &one, false);
    composite_gaps(report, "4 (family 2)", &two, true);
    mass_average(report, "8 (family 1)", &one);
    mass_average(report, "8 (family 2)", &two);
}

/// Composite errors against their worst component. `driving_force_asserted`
/// is false for family 1, where the driving-force gap is reported only.
fn composite_gaps(report: &mut Report, id: &str, study: &Study, driving_force_asserted: bool) {
    let grad_p = study.slope("grad_p");
    let mut parts = Vec::new();
    let mut pass = true;
    for i in 1..=3 {
        let component = study.slope(&format!("grad_mu_{i}")).min(grad_p);
        let gap = study.slope(&format!("d_{i}")) - component;
        parts.push(format!("d_{i} gap {gap:.3}"));
        pass &= gap >= 0.5;
    }
    let d_line = parts.join(", ");
    if driving_force_asserted {
        report.check(&format!("{id} driving forces"), pass, d_line);
    } else {
        report.info(&format!("{id} driving forces"), d_line);
    }
    let component = study.slope("div_tau").min(grad_p);
    let gap = study.slope("div_sigma") - component;
    report.check(
        &format!("{id} total stress divergence"),
        gap >= 0.5,
        format!("div_sigma gap {gap:.3}"),
    );
}

fn mass_average(report: &mut Report, id: &str, study: &Study) {
    let defects: Vec<f64> = study
        .records
        .iter()
        .map(|r| r.mass_average_defect)
        .collect();
    let monotone = defects.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = defects.iter().map(|d| format!("{d:.3e}")).collect();
    report.check(id, monotone, shown.join(" > "));
}

fn criterion_5(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut row, mut sym, mut psd, mut pd, mut form) = (0.0f64, true, 0.0f64, true, 0.0f64);
    for _ in 0..1000 {
        let n = rng.gen_range(2..=4);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
        let d: Vec<f64> = (0..n * (n - 1) / 2)
            .map(|_| rng.gen_range(0.1..10.0))
            .collect();
        let masses: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.2)).collect();
        let gamma = rng.gen_range(0.01..10.0);
        let rt = rng.gen_range(0.5..3000.0);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let model = gas_model(n, &d, &masses, rt);
        let m = transport_matrix(&c, &model).unwrap();
        let scale = norm_inf(&m);
        for i in 0..n {
            row = row.max(m.row(i).iter().sum::<f64>().abs() / scale);
            for j in 0..n {
                sym &= m[(i, j)] == m[(j, i)];
            }
        }
        psd = psd.min(SymmetricEigen::new(m.clone()).eigenvalues.min() / scale);
        let omega = LocalState::from_concentrations(&c, &masses).unwrap().omega;
        let mg: DMatrix<f64> = augment(&m, &omega, gamma).unwrap();
        pd &= mg.clone().cholesky().is_some();
        let vv = DVector::from_vec(v.clone());
        let lhs = (vv.transpose() * &mg * &vv)[(0, 0)];
        let mean: f64 = omega.iter().zip(&v).map(|(w, x)| w * x).sum();
        let rhs = pairwise_form(&model, &c, &v) + gamma * mean * mean;
        let size = ((scale + gamma) * vv.norm_squared()).max(rhs.abs());
        form = form.max((lhs - rhs).abs() / size);
    }
    report.check(
        "5 (row sums)",
        row <= 1e-13,
        format!("max relative row sum {row:.2e} (<= 1e-13)"),
    );
    report.check("5 (symmetry)", sym, "M = Mᵀ bitwise");
    report.check(
        "5 (M PSD)",
        psd >= -1e-12,
        format!("min eigenvalue / ||M|| = {psd:.2e}"),
    );
    report.check(
        "5 (M^gamma PD)",
        pd,
        "Cholesky succeeded on all 1000 states",
    );
    report.check(
        "5 (quadratic form)",
        form <= 1e-12,
        format!("max relative mismatch {form:.2e} (<= 1e-12)"),
    );
}

fn criterion_6(report: &mut Report) {
    let case = ManufacturedCase::standard(MmsParameters::default());
    let model = case.model();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut symmetric, mut psd, mut solved) = (true, true, Vec::new());
    for family in [Family::One, Family::Two] {
        for n in [2, 4, 8] {
            let mesh = unit_square_mesh(n, Diagonal::Right).unwrap();
            let state = mms_state(&mesh, &case);
            let spaces = Spaces::new(&mesh, family, Execution::Parallel).unwrap();
            let mut sys =
                assemble_system(&state, &model, &mesh, &spaces, Execution::Parallel).unwrap();
            let lookup: HashMap<(usize, usize), u64> = sys
                .entries
                .iter()
                .map(|&(r, c, v)| ((r, c), v.to_bits()))
                .collect();
            symmetric &= sys
                .entries
                .iter()
                .all(|&(r, c, v)| lookup.get(&(c, r)) == Some(&v.to_bits()));

            let layout = sys.layout;
            // K = [[Lambda, B^T], [B, -A]].
            for (range, sign) in [
                (0..layout.theta_dim(), 1.0),
                (layout.theta_dim()..layout.field_dim(), -1.0),
            ] {
                for _ in 0..50 {
                    let y: Vec<f64> = (0..range.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let yy: f64 = y.iter().map(|v| v * v).sum();
                    let (q, norm) = quadratic_form(&sys.entries, range.clone(), &y);
                    psd &= sign * q >= -1e-12 * norm * yy;
                }
            }

            sys.rhs = (0..sys.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut solver = LinearSolver::new();
            solver.check_uniqueness = true;
            solved.push(match solver.solve(&sys) {
                Ok((_, r)) => (
                    r.residual <= r.bound,
                    format!("{family:?} n={n}: {:.1e}", r.residual),
                ),
                Err(e) => (false, format!("{family:?} n={n}: {e}")),
            });
        }
    }
    report.check(
        "6 (K symmetric)",
        symmetric,
        "K = Kᵀ bitwise, both families, n = 2, 4, 8",
    );
    report.check(
        "6 (blocks PSD)",
        psd,
        "Lambda and A quadratic forms on 50 random vectors each",
    );
    let ok = solved.iter().all(|s| s.0);
    let detail: Vec<String> = solved.into_iter().map(|s| s.1).collect();
    report.check(
        "6 (nonsingular)",
        ok,
        format!("direct solve residuals {}", detail.join(", ")),
    );
}

fn criterion_7(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < 100 {
        let p = || -> Point { [0.0, 0.0] };
        let mut v: [Point; 3] = [p(), p(), p()];
        for x in v.iter_mut() {
            *x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        }
        let area = triangle_area(v[0], v[1], v[2]);
        if area.abs() < 1e-3 || aspect_ratio(v[0], v[1], v[2]) > 20.0 {
            continue;
        }
        if area < 0.0 {
            v.swap(1, 2);
        }
        let flips = [rng.gen(), rng.gen(), rng.gen()];
        let geom = CellGeometry::from_vertices(v, flips);
        let aw = AwBasis::new(&geom).unwrap();
        for j in 0..24 {
            let dofs = aw_functionals(&geom, |x| aw.eval_all(x).0[j]);
            for (i, d) in dofs.iter().enumerate() {
                worst = worst.max((d - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        tested += 1;
    }
    report.check(
        "7 (AW Kronecker)",
        worst <= 1e-10,
        format!("max |l_i(phi_j) - delta_ij| = {worst:.2e} on 100 triangles"),
    );

    let mesh = unit_square_mesh(4, Diagonal::Left).unwrap();
    let space = FunctionSpace::new(Space::Aw, &mesh, Execution::Serial).unwrap();
    let coef: Vec<f64> = (0..space.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut jump = 0.0f64;
    for e in 0..mesh.num_edges() {
        let [Some(c0), Some(c1)] = mesh.edge_cells(e) else {
            continue;
        };
        let [a, b] = mesh.edges()[e].map(|v| mesh.vertices()[v]);
        let n = mesh.edge_normal(e);
        for s in [0.0, 0.3, 0.5, 0.8, 1.0] {
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            let t: Vec<[f64; 2]> = [c0, c1]
                .iter()
                .map(|&c| {
                    let tab =
                        space.tabulate(&mesh, c, &[CellGeometry::new(&mesh, c).barycentric(x)]);
                    let (v, _) = space.evaluate(c, &tab, &coef);
                    [v[0] * n[0] + v[1] * n[1], v[1] * n[0] + v[2] * n[1]]
                })
                .collect();
            jump = jump
                .max((t[0][0] - t[1][0]).abs())
                .max((t[0][1] - t[1][1]).abs());
        }
    }
    report.check(
        "7 (normal trace)",
        jump <= 1e-10,
        format!("max jump {jump:.2e}"),
    );

    let case = ManufacturedCase::standard(MmsParameters::default());
    let model = case.model();
    let mesh = unit_square_mesh(4, Diagonal::Right).unwrap();
    let state = mms_state(&mesh, &case);
    let rule = quadrature(6).unwrap();
    let mut residual = 0.0f64;
    for family in [Family::One, Family::Two] {
        let spaces = Spaces::new(&mesh, family, Execution::Serial).unwrap();
        let w: Vec<f64> = (0..spaces.potential.dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let q: Vec<f64> = (0..spaces.pressure.dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        for i in 0..model.num_species() {
            let d = discrete_driving_force(&mesh, &spaces, &state, &model, i, &w, &q);
            let (mut err, mut size) = (0.0f64, 0.0f64);
            for c in 0..mesh.num_cells() {
                let (_, gw) = spaces.potential.evaluate(
                    c,
                    &spaces.potential.tabulate(&mesh, c, &rule.points),
                    &w,
                );
                let (_, gq) = spaces.pressure.evaluate(
                    c,
                    &spaces.pressure.tabulate(&mesh, c, &rule.points),
                    &q,
                );
                let (dv, _) = spaces.velocity.evaluate(
                    c,
                    &spaces.velocity.tabulate(&mesh, c, &rule.points),
                    &d,
                );
                let ci = state.cell_concentrations(c)[i];
                for (k, bary) in rule.points.iter().enumerate() {
                    let om = state.omega(&mesh, &model, c, bary)[i];
                    for comp in 0..2 {
                        let exact = -ci * gw[2 * k + comp] + om * gq[2 * k + comp];
                        err = err.max((dv[2 * k + comp] - exact).abs());
                        size = size.max(exact.abs());
                    }
                }
            }
            residual = residual.max(err / size.max(1.0));
        }
    }
    report.check(
        "7 (driving force representable)",
        residual <= 1e-13,
        format!("max residual {residual:.2e}"),
    );
}

fn criterion_9(report: &mut Report) {
    let cfg = MixingConfig {
        max_iter: 300,
        geometry: sosm_core::mesh::JunctionGeometry {
            h: 0.25,
            ..Default::default()
        },
        ..Default::default()
    };
    let speed = cfg.benzene_speed();
    report.check(
        "9 (benzene inlet speed)",
        (speed - 3.277e-6).abs() <= 0.5e-9,
        format!("{:.5} um/s", speed * 1e6),
    );

    let start = Instant::now();
    match run_mixing(&cfg, Execution::Parallel) {
        Ok(run) => {
            let d = &run.diagnostics;
            report.check(
                "9 (convergence, theta = 0.1)",
                true,
                format!("{} iterations", d.picard_iterations),
            );
            report.check(
                "9 (net mass flux)",
                d.net_mass_flux <= 1e-8,
                format!("{:.2e}", d.net_mass_flux),
            );
            let balance = d.species_balance[0].max(d.species_balance[1]);
            report.check(
                "9 (species balance)",
                balance <= 1e-6,
                format!("{balance:.2e}"),
            );
            report.check(
                "9 (smooth pressure)",
                d.pressure_finite && d.pressure_roughness < 0.5,
                format!("roughness {:.3}", d.pressure_roughness),
            );
            report.check(
                "9 (distinct species velocities)",
                d.species_slip_max_scaled > 10.0 * cfg.tolerance,
                format!("max |v_i - v| = {:.2e} scaled", d.species_slip_max_scaled),
            );
        }
        Err(Error::PicardNonConvergence(history)) => {
            let first = history.records.first().map_or(f64::NAN, |r| r.difference);
            report.check(
                "9 (convergence, theta = 0.1)",
                false,
                format!(
                    "no convergence in {} iterations ({:.0} s): difference {first:.2e} -> {:.2e}, tolerance {:.0e}",
                    history.iterations(),
                    start.elapsed().as_secs_f64(),
                    history.last_difference(),
                    cfg.tolerance
                ),
            );
        }
        Err(e) => report.check("9 (convergence, theta = 0.1)", false, e.to_string()),
    }

    // Same pipeline with the viscosity raised until the relaxed iteration
    // contracts; shows the flux bookkeeping independently of criterion 9.
    let viscous = MixingConfig {
        eta: 6e4,
        zeta: 6e4,
        ..cfg.clone()
    };
    match run_mixing(&viscous, Execution::Parallel) {
        Ok(run) => {
            let d = &run.diagnostics;
            report.info(
                "9 (viscous analogue, eta = 6e4 Pa s)",
                format!(
                    "{} iterations, net mass flux {:.1e}, species balance {:.1e}/{:.1e}, slip {:.1e}, pressure roughness {:.3}",
                    d.picard_iterations,
                    d.net_mass_flux,
                    d.species_balance[0],
                    d.species_balance[1],
                    d.species_slip_max_scaled,
                    d.pressure_roughness
                ),
            );
        }
        Err(e) => report.info("9 (viscous analogue, eta = 6e4 Pa s)", e.to_string()),
    }
}

fn main() {
    let mut report = Report::default();
    criterion_1_to_4_and_8(&mut report);
    criterion_5(&mut report);
    criterion_6(&mut report);
    criterion_7(&mut report);
    criterion_9(&mut report);
    if report.failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!(
            "acceptance: {} failed: {}",
            report.failed.len(),
            report.failed.join("; ")
        );
        std::process::exit(1);
    }
}
