//! Mixing pipeline at a viscosity where the relaxed Picard iteration
//! contracts. At the physical viscosity it does not; see the acceptance
//! suite.

use sosm_core::cases::{run_mixing, MixingConfig};
use sosm_core::exec::Execution;
use sosm_core::io::{read_vtk_summary, save_vtk};
use sosm_core::mesh::JunctionGeometry;

#[test]
fn viscous_analogue_balances_fluxes() {
    let cfg = MixingConfig {
        eta: 6e4,
        zeta: 6e4,
        geometry: JunctionGeometry {
            h: 0.25,
            ..Default::default()
        },
        ..Default::default()
    };
    let run = run_mixing(&cfg, Execution::Parallel).unwrap();
    let d = &run.diagnostics;
    assert!(d.picard_iterations < cfg.max_iter);
    assert!(d.net_mass_flux <= 1e-8, "{}", d.net_mass_flux);
    for b in d.species_balance {
        assert!(b <= 1e-6, "{b}");
    }
    assert!(d.pressure_finite);
    assert!(d.pressure_roughness < 0.5, "{}", d.pressure_roughness);
    assert!(d.species_slip_max_scaled > 10.0 * cfg.tolerance);
    assert!(d.outlet_benzene_fraction > 0.0 && d.outlet_benzene_fraction < 1.0);

    // Benzene enters only through the top arm; the outlet carries it out.
    let benzene = &d.species_flux[0];
    assert!(
        benzene["inlet1"] < 0.0 && benzene["outlet"] > 0.0,
        "{benzene:?}"
    );
    assert!(benzene["inlet2"].abs() <= 1e-6 * benzene["inlet1"].abs());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mix.vtk");
    let fields = run.vtk_fields();
    save_vtk(&run.mesh, &fields, &path).unwrap();
    let summary = read_vtk_summary(&path).unwrap();
    assert_eq!(
        summary.point_fields.len() + summary.cell_fields.len(),
        fields.len()
    );
}
