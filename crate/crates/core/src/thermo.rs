//! Mixture thermodynamics: constitutive laws, density and mass-fraction
//! algebra, and the Onsager transport matrix with its augmentation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Molar gas constant in J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314_462_618;

const MARGULES_MAX_ITER: usize = 50;

/// Maps chemical potentials (and pressure) to concentrations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstitutiveLaw {
    /// `c_i = (p_ref / RT) exp((mu_i - mu_ref_i) / RT)`.
    IdealGas { p_ref: f64, mu_ref: Vec<f64> },
    /// Binary liquid with a two-parameter Margules activity model and an
    /// ideal-mixing equation of state for the total concentration.
    MargulesBinary {
        a12: f64,
        a21: f64,
        c_ref: [f64; 2],
        mu_ref: [f64; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialModel {
    pub molar_masses: Vec<f64>,
    /// Stefan-Maxwell diffusivities, row-major `n x n`; diagonal unused.
    pub diffusivities: Vec<f64>,
    pub rt: f64,
    pub eta: f64,
    pub zeta: f64,
    pub gamma_aug: f64,
    pub law: ConstitutiveLaw,
}

impl MaterialModel {
    pub fn num_species(&self) -> usize {
        self.molar_masses.len()
    }

    pub fn diffusivity(&self, i: usize, j: usize) -> f64 {
        self.diffusivities[i * self.num_species() + j]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_species();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "at least two species are required".into(),
            ));
        }
        if self.diffusivities.len() != n * n {
            return Err(Error::InvalidArgument(format!(
                "diffusivity matrix has {} entries, expected {}",
                self.diffusivities.len(),
                n * n
            )));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {v}"
                )))
            }
        };
        for (i, &m) in self.molar_masses.iter().enumerate() {
            positive(&format!("molar mass {i}"), m)?;
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                positive(&format!("diffusivity ({i},{j})"), self.diffusivity(i, j))?;
                if self.diffusivity(i, j) != self.diffusivity(j, i) {
                    return Err(Error::InvalidArgument(format!(
                        "diffusivities must be symmetric: D({i},{j}) != D({j},{i})"
                    )));
                }
            }
        }
        positive("RT", self.rt)?;
        positive("eta", self.eta)?;
        positive("zeta", self.zeta)?;
        positive("gamma", self.gamma_aug)?;
        match &self.law {
            ConstitutiveLaw::IdealGas { p_ref, mu_ref } => {
                positive("reference pressure", *p_ref)?;
                if mu_ref.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "{} reference potentials for {n} species",
                        mu_ref.len()
                    )));
                }
            }
            ConstitutiveLaw::MargulesBinary {
                a12, a21, c_ref, ..
            } => {
                if n != 2 {
                    return Err(Error::InvalidArgument(
                        "the Margules model is binary only".into(),
                    ));
                }
                if !(a12.is_finite() && a21.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "Margules parameters must be finite".into(),
                    ));
                }
                positive("reference concentration 1", c_ref[0])?;
                positive("reference concentration 2", c_ref[1])?;
            }
        }
        Ok(())
    }

    /// Model with every diffusivity given by `d(i, j)`.
    pub fn with_diffusivities(mut self, d: impl Fn(usize, usize) -> f64) -> Self {
        let n = self.num_species();
        self.diffusivities = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { d(k / n, k % n) })
            .collect();
        self
    }
}

/// Pointwise thermodynamic state.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalState {
    pub c: Vec<f64>,
    pub c_total: f64,
    pub x: Vec<f64>,
    pub omega: Vec<f64>,
    pub rho: f64,
}

impl LocalState {
    pub fn from_concentrations(c: &[f64], molar_masses: &[f64]) -> Result<Self> {
        if let Some(ci) = c.iter().find(|&&ci| !(ci > 0.0 && ci.is_finite())) {
            return Err(Error::Domain(format!("concentration {ci} is not positive")));
        }
        let c_total: f64 = c.iter().sum();
        let rho: f64 = c.iter().zip(molar_masses).map(|(c, m)| c * m).sum();
        Ok(Self {
            c: c.to_vec(),
            c_total,
            x: c.iter().map(|ci| ci / c_total).collect(),
            omega: c
                .iter()
                .zip(molar_masses)
                .map(|(c, m)| m * c / rho)
                .collect(),
            rho,
        })
    }
}

/// Onsager transport matrix
/// `M_ij = -RT c_i c_j / (D_ij c_T)` for `i != j`, with zero row sums.
pub fn transport_matrix(c: &[f64], model: &MaterialModel) -> Result<DMatrix<f64>> {
    let n = model.num_species();
    if c.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} concentrations for {n} species",
            c.len()
        )));
    }
    if let Some(ci) = c.iter().find(|&&ci| !(ci > 0.0)) {
        return Err(Error::Domain(format!("concentration {ci} is not positive")));
    }
    let c_total: f64 = c.iter().sum();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = -model.rt * (c[i] * c[j]) / (model.diffusivity(i, j) * c_total);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    for i in 0..n {
        m[(i, i)] = -(0..n).filter(|&j| j != i).map(|j| m[(i, j)]).sum::<f64>();
    }
    Ok(m)
}

/// Augmented transport matrix `M + gamma omega omega^T`.
pub fn augment(m: &DMatrix<f64>, omega: &[f64], gamma: f64) -> Result<DMatrix<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!(
            "augmentation parameter {gamma} is not positive"
        )));
    }
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] += gamma * omega[i] * omega[j];
        }
    }
    Ok(out)
}

/// Concentrations from chemical potentials and (mean-zero) pressure.
pub fn concentrations_from_state(mu: &[f64], p: f64, model: &MaterialModel) -> Result<LocalState> {
    let _ = p; // neither shipped law depends on the pressure
    let c = match &model.law {
        ConstitutiveLaw::IdealGas { p_ref, mu_ref } => mu
            .iter()
            .zip(mu_ref)
            .map(|(m, m0)| p_ref / model.rt * ((m - m0) / model.rt).exp())
            .collect::<Vec<_>>(),
        ConstitutiveLaw::MargulesBinary {
            a12,
            a21,
            c_ref,
            mu_ref,
        } => {
            let target = ((mu[0] - mu_ref[0]) - (mu[1] - mu_ref[1])) / model.rt;
            let [x1, x2] = margules_mole_fraction(target, *a12, *a21)?;
            let c_total = c_ref[0] * c_ref[1] / (x1 * c_ref[1] + x2 * c_ref[0]);
            vec![x1 * c_total, x2 * c_total]
        }
    };
    LocalState::from_concentrations(&c, &model.molar_masses)
}

/// Logarithms of the binary Margules activity coefficients.
pub fn margules_ln_activity(x1: f64, a12: f64, a21: f64) -> [f64; 2] {
    let x2 = 1.0 - x1;
    [
        x2 * x2 * (a12 + 2.0 * (a21 - a12) * x1),
        x1 * x1 * (a21 + 2.0 * (a12 - a21) * x2),
    ]
}

/// Solves `ln(g1 x1 / (g2 x2)) = target` for `x1` by damped Newton in the
/// logit `z = ln(x1 / x2)`, starting from the ideal-solution value.
///
/// Returns `[x1, x2]`, each evaluated without cancellation so that nearly
/// pure mixtures keep a positive minority fraction.
pub fn margules_mole_fraction(target: f64, a12: f64, a21: f64) -> Result<[f64; 2]> {
    if !target.is_finite() {
        return Err(Error::Domain(format!(
            "non-finite exchange potential {target}"
        )));
    }
    let fraction = |z: f64| {
        if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        }
    };
    let residual = |z: f64| {
        let x1 = fraction(z);
        let [g1, g2] = margules_ln_activity(x1, a12, a21);
        z + g1 - g2 - target
    };
    let tol = 1e-13 * target.abs().max(1.0);
    let mut z = target;
    let mut r = residual(z);
    for _ in 0..MARGULES_MAX_ITER {
        if r.abs() <= tol {
            let x = [fraction(z), fraction(-z)];
            if x.iter().any(|&xi| !(xi > 0.0)) {
                return Err(Error::Domain(format!(
                    "exchange potential {target} gives a pure phase (x = {x:?})"
                )));
            }
            return Ok(x);
        }
        let x1 = fraction(z);
        let x2 = 1.0 - x1;
        let d1 = -2.0 * x2 * (a12 + 2.0 * (a21 - a12) * x1) + 2.0 * x2 * x2 * (a21 - a12);
        let d2 = 2.0 * x1 * (a21 + 2.0 * (a12 - a21) * x2) - 2.0 * x1 * x1 * (a12 - a21);
        let mut slope = 1.0 + (d1 - d2) * x1 * x2;
        if !(slope.abs() > 1e-12) {
            slope = 1.0;
        }
        let step = -r / slope;
        let mut t = 1.0;
        loop {
            let zn = z + t * step;
            let rn = residual(zn);
            if rn.abs() < r.abs() || t < 1e-6 {
                z = zn;
                r = rn;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NonConvergence {
        what: "Margules inversion",
        iterations: MARGULES_MAX_ITER,
        residual: r.abs(),
    })
}

/// `|| sum_i d_i ||_0` from driving forces sampled at weighted points.
///
/// Each item is a quadrature weight and the driving forces of all species at
/// that point.
pub fn gibbs_duhem_residual<'a>(samples: impl IntoIterator<Item = (f64, &'a [[f64; 2]])>) -> f64 {
    samples
        .into_iter()
        .map(|(w, d)| {
            let s = d.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
            w * (s[0] * s[0] + s[1] * s[1])
        })
        .sum::<f64>()
        .sqrt()
}
