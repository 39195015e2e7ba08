#![allow(dead_code)]

use nalgebra::DMatrix;

use sosm_core::assembly::{interpolate_coefficients, MixtureState, Sample};
use sosm_core::mesh::{Mesh, Point};
use sosm_core::thermo::{ConstitutiveLaw, MaterialModel};
use sosm_core::verify::ManufacturedCase;

/// Ideal-gas model with pairwise diffusivities given in `(i < j)` order.
pub fn gas_model(n: usize, d: &[f64], m: &[f64], rt: f64) -> MaterialModel {
    let mut diffusivities = vec![0.0; n * n];
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            diffusivities[i * n + j] = d[k];
            diffusivities[j * n + i] = d[k];
            k += 1;
        }
    }
    MaterialModel {
        molar_masses: m.to_vec(),
        diffusivities,
        rt,
        eta: 1.0,
        zeta: 1.0,
        gamma_aug: 0.1,
        law: ConstitutiveLaw::IdealGas {
            p_ref: 1.0,
            mu_ref: vec![0.0; n],
        },
    }
}

pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// `vᵀ M v` from the pairwise form `1/2 sum_ij RT c_i c_j / (D_ij c_T) (v_i - v_j)^2`.
pub fn pairwise_form(model: &MaterialModel, c: &[f64], v: &[f64]) -> f64 {
    let n = c.len();
    let c_total: f64 = c.iter().sum();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                q += 0.5 * model.rt * c[i] * c[j] / (model.diffusivity(i, j) * c_total)
                    * (v[i] - v[j]).powi(2);
            }
        }
    }
    q
}

/// Exact manufactured concentrations sampled onto the mesh.
pub fn mms_state(mesh: &Mesh, case: &ManufacturedCase) -> MixtureState {
    let model = case.model();
    interpolate_coefficients(mesh, &model, None, |s| {
        let p = match s {
            Sample::Centroid(c) => mesh.centroid(c),
            Sample::Vertex(v) => mesh.vertices()[v],
        };
        Ok(case.concentrations(p))
    })
    .unwrap()
}

/// `yᵀ K[range, range] y` and the largest entry magnitude of that block.
pub fn quadratic_form(
    entries: &[(usize, usize, f64)],
    range: std::ops::Range<usize>,
    y: &[f64],
) -> (f64, f64) {
    let mut q = 0.0;
    let mut norm = 0.0f64;
    for &(r, c, v) in entries {
        if range.contains(&r) && range.contains(&c) {
            q += y[r - range.start] * v * y[c - range.start];
            norm = norm.max(v.abs());
        }
    }
    (q, norm)
}

pub fn triangle_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

/// Longest edge squared over twice the area: longest edge over smallest altitude.
pub fn aspect_ratio(a: Point, b: Point, c: Point) -> f64 {
    let len = |p: Point, q: Point| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let longest = len(a, b).max(len(b, c)).max(len(c, a));
    longest * longest / (2.0 * triangle_area(a, b, c).abs())
}

pub fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
