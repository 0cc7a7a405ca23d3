use crate::error::{Error, Result};

/// Quadrature on the reference segment `[0, 1]` or the reference triangle
/// `{ξ, η ≥ 0, ξ + η ≤ 1}`. Points are barycentric; weights sum to the
/// reference measure (1 and 1/2 respectively).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub surface_dim: usize,
    pub degree: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn reference_measure(&self) -> f64 {
        if self.surface_dim == 1 {
            1.0
        } else {
            0.5
        }
    }

    /// Integrates a function of the reference coordinates (`ξ` or `(ξ, η)`).
    pub fn integrate_reference(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(bary, w)| w * f(&bary[1..]))
            .sum()
    }
}

/// Exact-through-`degree` rule: 3-point Gauss–Legendre on segments (degree 5),
/// the symmetric 6-point rule on triangles (degree 4).
pub fn reference_quadrature(surface_dim: usize, degree: usize) -> Result<QuadratureRule> {
    match (surface_dim, degree) {
        (1, 0..=5) => {
            let s = 0.5 * (0.6_f64).sqrt();
            let nodes = [0.5 - s, 0.5, 0.5 + s];
            Ok(QuadratureRule {
                surface_dim,
                degree: 5,
                points: nodes.iter().map(|&x| vec![1.0 - x, x]).collect(),
                weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
            })
        }
        (2, 0..=4) => {
            let sqrt10 = 10f64.sqrt();
            let root = (38.0 - 44.0 * (0.4f64).sqrt()).sqrt();
            let a1 = (8.0 - sqrt10 + root) / 18.0;
            let a2 = (8.0 - sqrt10 - root) / 18.0;
            let wroot = (213125.0 - 53320.0 * sqrt10).sqrt();
            // weights for unit total, halved for the reference triangle
            let w1 = 0.5 * (620.0 + wroot) / 3720.0;
            let w2 = 0.5 * (620.0 - wroot) / 3720.0;
            let mut points = Vec::with_capacity(6);
            let mut weights = Vec::with_capacity(6);
            for (a, w) in [(a1, w1), (a2, w2)] {
                let b = 1.0 - 2.0 * a;
                points.extend([vec![b, a, a], vec![a, b, a], vec![a, a, b]]);
                weights.extend([w, w, w]);
            }
            Ok(QuadratureRule { surface_dim, degree: 4, points, weights })
        }
        _ => Err(Error::Unsupported(format!(
            "quadrature of degree {degree} on {surface_dim}-dimensional elements"
        ))),
    }
}
