//! Quadrature on the reference triangle and on edges.
//!
//! Triangle rules of degree >= 3 are collapsed (Duffy) tensor products of
//! Gauss-Legendre rules; degrees 1 and 2 use the classical centroid and
//! three-point interior rules.

use crate::error::{Error, Result};

/// Highest polynomial degree for which a triangle rule is provided.
pub const MAX_DEGREE: usize = 10;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
///
/// Nodes are returned in ascending order. Exact for polynomials of degree
/// `2 m - 1`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1, "gauss_legendre needs at least one point");
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for k in 0..m.div_ceil(2) {
        // Chebyshev-like initial guess, then Newton on P_m.
        let mut x = -(std::f64::consts::PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(m, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = x;
        nodes[m - 1 - k] = -x;
        weights[k] = w;
        weights[m - 1 - k] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A quadrature rule on the reference triangle with vertices (0,0), (1,0), (0,1).
///
/// Points are stored in barycentric coordinates `(l0, l1, l2)`; the reference
/// point is `(l1, l2)`. Weights sum to the reference area 1/2.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub degree: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integral of `f` over the reference triangle.
    pub fn integrate_reference(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(b, w)| w * f(b[1], b[2]))
            .sum()
    }
}

/// Triangle rule exact for all polynomials of total degree `degree`.
pub fn quadrature(degree: usize) -> Result<QuadratureRule> {
    match degree {
        0 | 11.. => Err(Error::UnsupportedDegree(degree)),
        1 => Ok(QuadratureRule {
            degree,
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![0.5],
        }),
        2 => {
            let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
            Ok(QuadratureRule {
                degree,
                points: vec![[a, b, b], [b, a, b], [b, b, a]],
                weights: vec![1.0 / 6.0; 3],
            })
        }
        _ => Ok(collapsed_rule(degree)),
    }
}

// x = u, y = v (1 - u) maps the unit square onto the triangle with
// Jacobian (1 - u); the extra linear factor needs one more degree in u.
fn collapsed_rule(degree: usize) -> QuadratureRule {
    let m = (degree + 2).div_ceil(2);
    let (nodes, weights) = gauss_legendre(m);
    let mut points = Vec::with_capacity(m * m);
    let mut ws = Vec::with_capacity(m * m);
    for (xu, wu) in nodes.iter().zip(&weights) {
        let u = 0.5 * (xu + 1.0);
        for (xv, wv) in nodes.iter().zip(&weights) {
            let v = 0.5 * (xv + 1.0);
            let x = u;
            let y = v * (1.0 - u);
            points.push([1.0 - x - y, x, y]);
            ws.push(0.25 * wu * wv * (1.0 - u));
        }
    }
    QuadratureRule {
        degree,
        points,
        weights: ws,
    }
}

/// Gauss-Legendre rule on the edge parameter `s` in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EdgeRule {
    /// Rule exact for polynomials in `s` of degree `degree`.
    pub fn new(degree: usize) -> Self {
        let (nodes, weights) = gauss_legendre(degree / 2 + 1);
        Self { nodes, weights }
    }
}
