use nalgebra::{DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{
    aspect_ratio, gas_model, mms_state, neumaier_sum, norm_inf, pairwise_form, quadratic_form,
    triangle_area,
};
use sosm_core::assembly::{assemble_system, discrete_driving_force, BlockLayout, Family, Spaces};
use sosm_core::exec::Execution;
use sosm_core::fe::{aw_functionals, AwBasis, CellGeometry, FunctionSpace, Space};
use sosm_core::mesh::{junction_mesh, unit_square_mesh, Diagonal, JunctionGeometry, Point};
use sosm_core::quadrature::quadrature;
use sosm_core::solver::{theta_q_diff_norm, PicardOptions, SolutionState};
use sosm_core::thermo::{
    augment, concentrations_from_state, margules_ln_activity, transport_matrix, ConstitutiveLaw,
    LocalState, MaterialModel,
};
use sosm_core::verify::{run_mms_level, ManufacturedCase, MmsParameters, ScalarFunction};

/// `(n, c, D_ij, M, gamma, RT, v)`.
type TransportCase = (usize, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64, Vec<f64>);

fn transport_case() -> impl Strategy<Value = TransportCase> {
    (2usize..=4).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(0.1f64..10.0, n),
            prop::collection::vec(0.1f64..10.0, n * (n - 1) / 2),
            prop::collection::vec(0.01f64..0.2, n),
            0.01f64..10.0,
            0.5f64..3000.0,
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transport_matrix_structure((n, c, d, masses, gamma, rt, v) in transport_case()) {
        let model = gas_model(n, &d, &masses, rt);
        let m = transport_matrix(&c, &model).unwrap();
        let scale = norm_inf(&m);
        for i in 0..n {
            let row: f64 = m.row(i).iter().sum();
            prop_assert!(row.abs() <= 1e-13 * scale, "row {i} sums to {row}");
            for j in 0..n {
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        prop_assert!(eig.min() >= -1e-12 * scale);

        let omega = LocalState::from_concentrations(&c, &masses).unwrap().omega;
        let mg = augment(&m, &omega, gamma).unwrap();
        prop_assert!(mg.clone().cholesky().is_some());
        let eig_g = SymmetricEigen::new(mg.clone()).eigenvalues;
        prop_assert!(eig_g.min() > 0.0);

        let vv = DVector::from_vec(v.clone());
        let lhs = (vv.transpose() * &mg * &vv)[(0, 0)];
        let mut rhs = pairwise_form(&model, &c, &v);
        let mean: f64 = omega.iter().zip(&v).map(|(w, x)| w * x).sum();
        rhs += gamma * mean * mean;
        let size = (scale + gamma) * vv.norm_squared();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * size.max(rhs.abs()), "{lhs} vs {rhs}");

        let ones = DVector::from_element(n, 1.0);
        let g = &mg * ones;
        for i in 0..n {
            prop_assert!((g[i] - gamma * omega[i]).abs() <= 1e-13 * (scale + gamma));
        }
    }

    #[test]
    fn transport_matrix_permutation_equivariance((n, c, d, masses, _gamma, rt, _v) in transport_case(), shift in 1usize..4) {
        let model = gas_model(n, &d, &masses, rt);
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        let pm = MaterialModel {
            molar_masses: perm.iter().map(|&p| masses[p]).collect(),
            ..model.clone()
        }
        .with_diffusivities(|i, j| model.diffusivity(perm[i], perm[j]));
        let pc: Vec<f64> = perm.iter().map(|&p| c[p]).collect();
        let m = transport_matrix(&c, &model).unwrap();
        let mp = transport_matrix(&pc, &pm).unwrap();
        // The total concentration is summed in a different order.
        let scale = norm_inf(&m);
        for i in 0..n {
            for j in 0..n {
                prop_assert!((mp[(i, j)] - m[(perm[i], perm[j])]).abs() <= 1e-14 * scale);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn margules_round_trip(x1 in 1e-3f64..0.999, a12 in -1.0f64..1.5, a21 in -1.0f64..1.5) {
        let c_ref = [9.20e3, 11.23e3];
        let model = MaterialModel {
            law: ConstitutiveLaw::MargulesBinary { a12, a21, c_ref, mu_ref: [0.3, -0.2] },
            ..gas_model(2, &[1.0], &[0.078, 0.084], 2.5)
        };
        let x2 = 1.0 - x1;
        let [g1, g2] = margules_ln_activity(x1, a12, a21);
        let mu = [0.3 + 2.5 * (x1.ln() + g1), -0.2 + 2.5 * (x2.ln() + g2)];
        let s = concentrations_from_state(&mu, 0.0, &model).unwrap();
        prop_assert!((s.x[0] - x1).abs() < 1e-10, "{} vs {x1}", s.x[0]);
        prop_assert!((s.x[1] - x2).abs() < 1e-10);
        let c_total = c_ref[0] * c_ref[1] / (x1 * c_ref[1] + x2 * c_ref[0]);
        prop_assert!((s.c_total - c_total).abs() < 1e-10 * c_total);
    }

    #[test]
    fn aw_kronecker_on_random_triangles(
        a in prop::array::uniform2(-2.0f64..2.0),
        b in prop::array::uniform2(-2.0f64..2.0),
        c in prop::array::uniform2(-2.0f64..2.0),
        flips in prop::array::uniform3(any::<bool>()),
    ) {
        let v: [Point; 3] = [a, b, c];
        let area = triangle_area(a, b, c);
        let aspect = aspect_ratio(a, b, c);
        prop_assume!(area.abs() > 1e-3 && aspect <= 20.0);
        let v = if area > 0.0 { v } else { [a, c, b] };
        let geom = CellGeometry::from_vertices(v, flips);
        let aw = AwBasis::new(&geom).unwrap();
        for j in 0..24 {
            let dofs = aw_functionals(&geom, |p| aw.eval_all(p).0[j]);
            for (i, d) in dofs.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - expect).abs() < 1e-10, "basis {j} functional {i}: {d}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn unit_square_topology(n in 1usize..40, right in any::<bool>()) {
        let diag = if right { Diagonal::Right } else { Diagonal::Left };
        let mesh = unit_square_mesh(n, diag).unwrap();
        mesh.check_invariants().unwrap();
        let v = mesh.num_vertices() as i64;
        let e = mesh.num_edges() as i64;
        let f = mesh.num_cells() as i64 + 1;
        prop_assert_eq!(v - e + f, 2);
        let area = neumaier_sum((0..mesh.num_cells()).map(|c| mesh.cell_area(c)));
        prop_assert!((area - 1.0).abs() <= 1e-14);
        for &[a, b] in mesh.edges() {
            prop_assert!(a < b);
        }
    }

    #[test]
    fn junction_meshes_are_valid(
        inlet_width in 0.5f64..2.0,
        outlet_width in 0.5f64..2.0,
        inlet_length in 0.0f64..3.0,
        outlet_length in 0.5f64..5.0,
        frac in 0.2f64..1.0,
    ) {
        let geom = JunctionGeometry {
            inlet_width,
            outlet_width,
            inlet_length,
            outlet_length,
            h: frac * inlet_width.min(outlet_width) * 0.5,
        };
        let mesh = junction_mesh(&geom).unwrap();
        mesh.check_invariants().unwrap();
        let expected = outlet_width * (inlet_width + outlet_length) + 2.0 * inlet_width * inlet_length;
        let area = neumaier_sum((0..mesh.num_cells()).map(|c| mesh.cell_area(c)));
        prop_assert!((area - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn lambda_and_a_blocks_are_psd() {
    let case = ManufacturedCase::standard(MmsParameters::default());
    let model = case.model();
    let mesh = unit_square_mesh(4, Diagonal::Right).unwrap();
    let state = mms_state(&mesh, &case);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for family in [Family::One, Family::Two] {
        let spaces = Spaces::new(&mesh, family, Execution::Parallel).unwrap();
        let sys = assemble_system(&state, &model, &mesh, &spaces, Execution::Parallel).unwrap();
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
                assert!(sign * q >= -1e-12 * norm * yy, "{family:?} {range:?}: {q}");
            }
        }
    }
}

#[test]
fn stress_normal_trace_is_continuous() {
    let mesh = unit_square_mesh(3, Diagonal::Left).unwrap();
    let space = FunctionSpace::new(Space::Aw, &mesh, Execution::Serial).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let coef: Vec<f64> = (0..space.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut checked = 0;
    for e in 0..mesh.num_edges() {
        let [Some(c0), Some(c1)] = mesh.edge_cells(e) else {
            continue;
        };
        let [a, b] = mesh.edges()[e].map(|v| mesh.vertices()[v]);
        let n = mesh.edge_normal(e);
        for s in [0.0, 0.21, 0.5, 0.77, 1.0] {
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            let traces: Vec<[f64; 2]> = [c0, c1]
                .iter()
                .map(|&c| {
                    let bary = CellGeometry::new(&mesh, c).barycentric(x);
                    let tab = space.tabulate(&mesh, c, &[bary]);
                    let (v, _) = space.evaluate(c, &tab, &coef);
                    [v[0] * n[0] + v[1] * n[1], v[1] * n[0] + v[2] * n[1]]
                })
                .collect();
            for k in 0..2 {
                assert!(
                    (traces[0][k] - traces[1][k]).abs() < 1e-10,
                    "edge {e} s {s}: {traces:?}"
                );
            }
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn driving_force_is_representable() {
    let case = ManufacturedCase::standard(MmsParameters::default());
    let model = case.model();
    let mesh = unit_square_mesh(4, Diagonal::Right).unwrap();
    let state = mms_state(&mesh, &case);
    let rule = quadrature(6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
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
            let mut worst = 0.0f64;
            let mut size = 0.0f64;
            for c in 0..mesh.num_cells() {
                let tx = spaces.potential.tabulate(&mesh, c, &rule.points);
                let tp = spaces.pressure.tabulate(&mesh, c, &rule.points);
                let tv = spaces.velocity.tabulate(&mesh, c, &rule.points);
                let (_, gw) = spaces.potential.evaluate(c, &tx, &w);
                let (_, gq) = spaces.pressure.evaluate(c, &tp, &q);
                let (dv, _) = spaces.velocity.evaluate(c, &tv, &d);
                let ci = state.cell_concentrations(c)[i];
                for (k, bary) in rule.points.iter().enumerate() {
                    let om = state.omega(&mesh, &model, c, bary)[i];
                    for comp in 0..2 {
                        let exact = -ci * gw[2 * k + comp] + om * gq[2 * k + comp];
                        worst = worst.max((dv[2 * k + comp] - exact).abs());
                        size = size.max(exact.abs());
                    }
                }
            }
            assert!(
                worst <= 1e-13 * size.max(1.0),
                "{family:?} species {i}: {worst:e}"
            );
        }
    }
}

#[test]
fn theta_norm_triangle_inequality() {
    let case = ManufacturedCase::standard(MmsParameters::default());
    let model = case.model();
    let mesh = unit_square_mesh(3, Diagonal::Right).unwrap();
    let state = mms_state(&mesh, &case);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for family in [Family::One, Family::Two] {
        let spaces = Spaces::new(&mesh, family, Execution::Serial).unwrap();
        let layout = BlockLayout::new(model.num_species(), &spaces);
        let zero = SolutionState::zeros(layout);
        let mut random = || SolutionState {
            x: (0..layout.dim())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
            ..zero.clone()
        };
        for _ in 0..10 {
            let (a, b, c) = (random(), random(), random());
            let d = |x: &SolutionState, y: &SolutionState| {
                theta_q_diff_norm(&mesh, &spaces, &model, &state, x, y).unwrap()
            };
            let (ab, bc, ac) = (d(&a, &b), d(&b, &c), d(&a, &c));
            assert!(ac <= ab + bc + 1e-12 * (ab + bc), "{ac} > {ab} + {bc}");
            assert_eq!(d(&a, &a), 0.0);
            assert!((ab - d(&b, &a)).abs() <= 1e-12 * ab);
        }
    }
}

#[test]
fn picard_is_equivariant_under_species_relabelling() {
    let d = vec![0.75, 1.0, 1.25];
    let perm = [2usize, 0, 1];
    let params = MmsParameters::default();
    let base = ManufacturedCase::new(d.clone(), ScalarFunction::bump(), params).unwrap();
    let swapped = ManufacturedCase::new(
        perm.iter().map(|&p| d[p]).collect(),
        ScalarFunction::bump(),
        params,
    )
    .unwrap();
    let opts = PicardOptions::default();
    let a = run_mms_level(
        &base,
        Family::One,
        4,
        Diagonal::Right,
        &opts,
        Execution::Serial,
    )
    .unwrap();
    let b = run_mms_level(
        &swapped,
        Family::One,
        4,
        Diagonal::Right,
        &opts,
        Execution::Serial,
    )
    .unwrap();
    assert_eq!(
        a.outcome.history.iterations(),
        b.outcome.history.iterations()
    );
    let sa = &a.outcome.solution;
    let sb = &b.outcome.solution;
    let diff = |x: &[f64], y: &[f64]| {
        let s = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        x.iter()
            .zip(y)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
            / s
    };
    for (i, &p) in perm.iter().enumerate() {
        assert!(diff(sa.potential(p), sb.potential(i)) < 1e-8);
        assert!(diff(sa.species_velocity(p), sb.species_velocity(i)) < 1e-8);
    }
    assert!(diff(sa.pressure(), sb.pressure()) < 1e-8);
    assert!(diff(sa.velocity(), sb.velocity()) < 1e-8);
    assert!(diff(sa.stress(), sb.stress()) < 1e-8);
}
