//! Piecewise-linear finite elements on the flat simplices of Γ_h(t).
//!
//! A [`FemSpace`] fixes the connectivity-dependent data (sparsity pattern,
//! element-to-slot map, quadrature rule). [`LevelGeometry`] caches everything
//! that depends on vertex positions at one time so that repeated assemblies
//! for many samples only evaluate coefficients.

mod quadrature;

use std::sync::Arc;

pub use quadrature::{reference_quadrature, QuadratureRule};

use crate::error::{Error, Result};
use crate::linalg::{CsrPattern, SparseMatrix, Vector};
use crate::mesh::{Positions, SurfaceMesh};
use crate::stochastic::{RandomCoefficient, Sample};

/// Degree of the quadrature used wherever a coefficient or a right-hand side enters.
pub const QUADRATURE_DEGREE: usize = 4;

#[derive(Debug, Clone)]
pub struct FemSpace {
    mesh: SurfaceMesh,
    pattern: Arc<CsrPattern>,
    slots: Vec<usize>,
    quadrature: QuadratureRule,
}

/// Position-dependent element data of one time level.
#[derive(Debug, Clone)]
pub struct LevelGeometry {
    positions: Positions,
    measures: Vec<f64>,
    /// `∇χ_a · ∇χ_b`, `(n+1)²` entries per element.
    grad_dots: Vec<f64>,
    /// Tangential basis gradients, `(n+1)·d` entries per element.
    gradients: Vec<f64>,
    /// Ambient quadrature points, `n_q·d` entries per element.
    quad_points: Vec<f64>,
    total_measure: f64,
}

impl LevelGeometry {
    pub fn positions(&self) -> &Positions {
        &self.positions
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        self.measures[e]
    }

    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    pub fn quadrature_point(&self, e: usize, q: usize, n_q: usize) -> &[f64] {
        let d = self.positions.dim();
        let start = (e * n_q + q) * d;
        &self.quad_points[start..start + d]
    }

    /// All ambient quadrature points, element-major.
    pub fn quadrature_points(&self) -> impl Iterator<Item = &[f64]> {
        self.quad_points.chunks_exact(self.positions.dim())
    }
}

/// Geometry and mass matrix at one instant `t_k` of the time grid.
#[derive(Debug, Clone)]
pub struct AssembledLevel {
    pub k: usize,
    pub t: f64,
    pub geometry: LevelGeometry,
    pub mass: SparseMatrix,
}

impl FemSpace {
    pub fn new(mesh: SurfaceMesh) -> Result<Self> {
        let n = mesh.vertex_count();
        let mut rows = vec![Vec::new(); n];
        for el in mesh.elements() {
            for &a in el {
                rows[a].extend_from_slice(el);
            }
        }
        let pattern = Arc::new(CsrPattern::from_rows(n, rows)?);
        let mut slots = Vec::with_capacity(mesh.element_count() * mesh.nodes_per_element().pow(2));
        for el in mesh.elements() {
            for &a in el {
                for &b in el {
                    slots.push(pattern.slot(a, b).expect("pattern contains element couplings"));
                }
            }
        }
        let quadrature = reference_quadrature(mesh.surface_dim(), QUADRATURE_DEGREE)?;
        Ok(FemSpace { mesh, pattern, slots, quadrature })
    }

    pub fn mesh(&self) -> &SurfaceMesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn pattern(&self) -> &Arc<CsrPattern> {
        &self.pattern
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quadrature
    }

    fn nodes(&self) -> usize {
        self.mesh.nodes_per_element()
    }

    /// Quadrature weight scaling for element `e`: `|E| / |reference|`.
    #[inline]
    fn jacobian(&self, geom: &LevelGeometry, e: usize) -> f64 {
        geom.measures[e] / self.quadrature.reference_measure()
    }

    pub fn geometry(&self, positions: Positions) -> Result<LevelGeometry> {
        if positions.len() != self.dim() || positions.dim() != self.mesh.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: positions.len() });
        }
        let nodes = self.nodes();
        let d = positions.dim();
        let n_elem = self.mesh.element_count();
        let n_q = self.quadrature.len();
        let mut measures = Vec::with_capacity(n_elem);
        let mut grad_dots = Vec::with_capacity(n_elem * nodes * nodes);
        let mut gradients = Vec::with_capacity(n_elem * nodes * d);
        let mut quad_points = Vec::with_capacity(n_elem * n_q * d);
        for (e, el) in self.mesh.elements().enumerate() {
            let frame = self.mesh.frame(&positions, e)?;
            measures.push(frame.measure);
            for a in 0..nodes {
                for b in 0..nodes {
                    grad_dots.push(dot(&frame.gradients[a], &frame.gradients[b]));
                }
            }
            for g in &frame.gradients {
                gradients.extend_from_slice(g);
            }
            for bary in &self.quadrature.points {
                for k in 0..d {
                    quad_points.push(el.iter().zip(bary).map(|(&v, l)| l * positions.point(v)[k]).sum());
                }
            }
        }
        let total_measure = measures.iter().sum();
        Ok(LevelGeometry { positions, measures, grad_dots, gradients, quad_points, total_measure })
    }

    /// Exact P1 mass matrix: `(L/6)[[2,1],[1,2]]` per segment,
    /// `(A/12)(1 + δ_ab)` per triangle.
    pub fn assemble_mass(&self, geom: &LevelGeometry) -> SparseMatrix {
        let nodes = self.nodes();
        let (diag, off) = if nodes == 2 { (2.0 / 6.0, 1.0 / 6.0) } else { (2.0 / 12.0, 1.0 / 12.0) };
        let mut m = SparseMatrix::zeros(Arc::clone(&self.pattern));
        let values = m.values_mut();
        for (e, &measure) in geom.measures.iter().enumerate() {
            let slots = &self.slots[e * nodes * nodes..(e + 1) * nodes * nodes];
            for a in 0..nodes {
                for b in 0..nodes {
                    values[slots[a * nodes + b]] += measure * if a == b { diag } else { off };
                }
            }
        }
        m
    }

    /// Stiffness matrix `Σ_E (∫_E α) ∇χ_a·∇χ_b` with α evaluated at the
    /// quadrature points of the flat elements.
    pub fn assemble_stiffness_fn(&self, geom: &LevelGeometry, t: f64, alpha: impl Fn(&[f64]) -> f64) -> Result<SparseMatrix> {
        let n_q = self.quadrature.len();
        let mut weights = Vec::with_capacity(self.mesh.element_count());
        for e in 0..self.mesh.element_count() {
            let mut integral = 0.0;
            for q in 0..n_q {
                let x = geom.quadrature_point(e, q, n_q);
                let value = alpha(x);
                if !(value > 0.0) {
                    return Err(Error::Ellipticity { value, point: x.to_vec(), t });
                }
                integral += self.quadrature.weights[q] * value;
            }
            weights.push(integral * self.jacobian(geom, e));
        }
        Ok(self.stiffness_from_element_weights(geom, &weights))
    }

    pub fn assemble_stiffness(
        &self,
        geom: &LevelGeometry,
        t: f64,
        coefficient: &RandomCoefficient,
        sample: &Sample,
    ) -> Result<SparseMatrix> {
        self.assemble_stiffness_fn(geom, t, |x| coefficient.eval(x, t, sample))
    }

    /// `Σ_E w_E ∇χ_a·∇χ_b`; `w_E = ∫_E α`. No positivity check.
    pub fn stiffness_from_element_weights(&self, geom: &LevelGeometry, weights: &[f64]) -> SparseMatrix {
        let nodes = self.nodes();
        let nn = nodes * nodes;
        let mut s = SparseMatrix::zeros(Arc::clone(&self.pattern));
        let values = s.values_mut();
        for (e, &w) in weights.iter().enumerate() {
            let slots = &self.slots[e * nn..(e + 1) * nn];
            let dots = &geom.grad_dots[e * nn..(e + 1) * nn];
            for k in 0..nn {
                values[slots[k]] += w * dots[k];
            }
        }
        s
    }

    /// `∫_E α` for every element, without positivity check.
    pub fn element_integrals(&self, geom: &LevelGeometry, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let n_q = self.quadrature.len();
        (0..self.mesh.element_count())
            .map(|e| {
                let s: f64 = (0..n_q).map(|q| self.quadrature.weights[q] * f(geom.quadrature_point(e, q, n_q))).sum();
                s * self.jacobian(geom, e)
            })
            .collect()
    }

    /// Load vector `F_j = ∫_{Γ_h} f χ_j` by element quadrature.
    pub fn assemble_load(&self, geom: &LevelGeometry, f: impl FnMut(&[f64]) -> f64) -> Vector {
        let values: Vec<f64> = geom.quadrature_points().map(f).collect();
        self.load_from_point_values(geom, &values)
    }

    /// Load vector from precomputed `f` values at every quadrature point (element-major).
    pub fn load_from_point_values(&self, geom: &LevelGeometry, values: &[f64]) -> Vector {
        let n_q = self.quadrature.len();
        let mut load = vec![0.0; self.dim()];
        for (e, el) in self.mesh.elements().enumerate() {
            let jac = self.jacobian(geom, e);
            for (q, bary) in self.quadrature.points.iter().enumerate() {
                let wf = jac * self.quadrature.weights[q] * values[e * n_q + q];
                for (&v, l) in el.iter().zip(bary) {
                    load[v] += wf * l;
                }
            }
        }
        load
    }

    /// `F_j = ∫ s χ_j + ∫ q·∇χ_j`: a load in weak-residual form, where `flux`
    /// returns the ambient vector `q` at a quadrature point.
    pub fn assemble_load_with_flux(
        &self,
        geom: &LevelGeometry,
        source: impl FnMut(&[f64]) -> f64,
        flux: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Vector {
        let mut load = self.assemble_load(geom, source);
        let nodes = self.nodes();
        let d = geom.positions.dim();
        let n_q = self.quadrature.len();
        for (e, el) in self.mesh.elements().enumerate() {
            let jac = self.jacobian(geom, e);
            let grads = &geom.gradients[e * nodes * d..(e + 1) * nodes * d];
            for q in 0..n_q {
                let flux_q = flux(geom.quadrature_point(e, q, n_q));
                let w = jac * self.quadrature.weights[q];
                for (a, &v) in el.iter().enumerate() {
                    load[v] += w * dot(&flux_q, &grads[a * d..(a + 1) * d]);
                }
            }
        }
        load
    }

    /// Nodal interpolation of an ambient function.
    pub fn interpolate(&self, positions: &Positions, g: impl Fn(&[f64]) -> f64) -> Vector {
        positions.iter().map(g).collect()
    }

    /// `‖Σ_j c_j χ_j − g‖_{L²(Γ_h)}` with degree-4 quadrature.
    pub fn l2_error(&self, geom: &LevelGeometry, coefficients: &[f64], g: impl Fn(&[f64]) -> f64) -> f64 {
        let n_q = self.quadrature.len();
        let mut acc = 0.0;
        for (e, el) in self.mesh.elements().enumerate() {
            let mut local = 0.0;
            for (q, bary) in self.quadrature.points.iter().enumerate() {
                let uh: f64 = el.iter().zip(bary).map(|(&v, l)| l * coefficients[v]).sum();
                let diff = uh - g(geom.quadrature_point(e, q, n_q));
                local += self.quadrature.weights[q] * diff * diff;
            }
            acc += self.jacobian(geom, e) * local;
        }
        acc.sqrt()
    }

    pub fn l2_norm_p1(&self, geom: &LevelGeometry, coefficients: &[f64]) -> f64 {
        self.l2_error(geom, coefficients, |_| 0.0)
    }

    pub fn l2_norm_fn(&self, geom: &LevelGeometry, g: impl Fn(&[f64]) -> f64) -> f64 {
        let zeros = vec![0.0; self.dim()];
        self.l2_error(geom, &zeros, g)
    }

    pub fn assemble_level(&self, k: usize, t: f64, positions: Positions) -> Result<AssembledLevel> {
        let geometry = self.geometry(positions)?;
        let mass = self.assemble_mass(&geometry);
        Ok(AssembledLevel { k, t, geometry, mass })
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EvolvingSurface;

    fn single(points: &[Vec<f64>]) -> (FemSpace, LevelGeometry) {
        let dim = points[0].len();
        let simplices: Vec<usize> = (0..points.len()).collect();
        let mesh = SurfaceMesh::new(Positions::from_points(dim, points).unwrap(), simplices, points.len() - 1, 0).unwrap();
        let space = FemSpace::new(mesh).unwrap();
        let geom = space.geometry(space.mesh().reference_vertices().clone()).unwrap();
        (space, geom)
    }

    fn assert_matrix(m: &SparseMatrix, expected: &[Vec<f64>], tol: f64) {
        let dense = m.to_dense();
        for (row, erow) in dense.iter().zip(expected) {
            for (v, e) in row.iter().zip(erow) {
                assert!((v - e).abs() <= tol, "{dense:?} vs {expected:?}");
            }
        }
    }

    #[test]
    fn element_mass_matrices() {
        let (space, geom) = single(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        let l = 5.0;
        assert_matrix(&space.assemble_mass(&geom), &[vec![2.0 * l / 6.0, l / 6.0], vec![l / 6.0, 2.0 * l / 6.0]], 1e-15);

        let (space, geom) = single(&[vec![0.0, 0.0, 0.0], vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 1.0]]);
        let a = geom.total_measure();
        assert!((a - 2f64.sqrt()).abs() < 1e-15);
        let expected: Vec<Vec<f64>> =
            (0..3).map(|i| (0..3).map(|j| a / 12.0 * if i == j { 2.0 } else { 1.0 }).collect()).collect();
        assert_matrix(&space.assemble_mass(&geom), &expected, 1e-15);
    }

    #[test]
    fn element_stiffness_matrices() {
        let (space, geom) = single(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let s = space.assemble_stiffness_fn(&geom, 0.0, |_| 1.0).unwrap();
        assert_matrix(&s, &[vec![1.0, -0.5, -0.5], vec![-0.5, 0.5, 0.0], vec![-0.5, 0.0, 0.5]], 1e-15);

        let (space, geom) = single(&[vec![1.0, 1.0], vec![1.0, 3.5]]);
        let c = 1.7;
        let s = space.assemble_stiffness_fn(&geom, 0.0, |_| c).unwrap();
        assert_matrix(&s, &[vec![c / 2.5, -c / 2.5], vec![-c / 2.5, c / 2.5]], 1e-15);
    }

    #[test]
    fn stiffness_rejects_non_positive_coefficient() {
        let (space, geom) = single(&[vec![0.0, 0.0], vec![1.0, 0.0]]);
        let err = space.assemble_stiffness_fn(&geom, 0.25, |x| x[0] - 0.5).unwrap_err();
        assert!(matches!(err, Error::Ellipticity { t, .. } if t == 0.25));
    }

    #[test]
    fn load_examples() {
        let surface = EvolvingSurface::moving_ellipsoid();
        let space = FemSpace::new(SurfaceMesh::initial_mesh(&surface, 1).unwrap()).unwrap();
        let geom = space.geometry(space.mesh().vertices_at(&surface, 0.4).unwrap()).unwrap();
        assert!(space.assemble_load(&geom, |_| 0.0).iter().all(|&v| v == 0.0));
        let ones = space.assemble_load(&geom, |_| 1.0);
        let row_sums = space.assemble_mass(&geom).spmv(&vec![1.0; space.dim()]).unwrap();
        for (a, b) in ones.iter().zip(&row_sums) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn load_of_linear_function_on_single_element() {
        // f = 1 + 2x + 3y on the unit right triangle:
        // ∫ f λ_a = (A/12)(2 f_a + Σ_{b≠a} f_b) for linear f
        let (space, geom) = single(&[vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] + 3.0 * x[1];
        let nodal = [1.0, 3.0, 4.0];
        let load = space.assemble_load(&geom, f);
        let total: f64 = nodal.iter().sum();
        for a in 0..3 {
            let expected = 0.5 / 12.0 * (total + nodal[a]);
            assert!((load[a] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn l2_norm_examples() {
        let surface = EvolvingSurface::moving_ellipse();
        let space = FemSpace::new(SurfaceMesh::initial_mesh(&surface, 2).unwrap()).unwrap();
        let geom = space.geometry(space.mesh().vertices_at(&surface, 0.7).unwrap()).unwrap();
        assert_eq!(space.l2_norm_p1(&geom, &vec![0.0; space.dim()]), 0.0);
        let c = 2.5;
        let expected = c * geom.total_measure().sqrt();
        assert!((space.l2_norm_p1(&geom, &vec![c; space.dim()]) - expected).abs() < 1e-14);
        assert!((space.l2_norm_fn(&geom, |_| c) - expected).abs() < 1e-14);

        let lin = |x: &[f64]| 0.3 - 1.2 * x[0] + 0.7 * x[1];
        let nodal = space.interpolate(geom.positions(), lin);
        assert!(space.l2_error(&geom, &nodal, lin) < 1e-14);
    }

    #[test]
    fn flux_load_reproduces_stiffness_action() {
        // for u_h = Σ c_j χ_j and flux = α∇u_h, ∫ flux·∇χ_j = (S c)_j
        let surface = EvolvingSurface::moving_ellipsoid();
        let space = FemSpace::new(SurfaceMesh::initial_mesh(&surface, 1).unwrap()).unwrap();
        let geom = space.geometry(space.mesh().reference_vertices().clone()).unwrap();
        let lin = [0.4, -0.9, 1.3];
        let c = space.interpolate(geom.positions(), |x| lin.iter().zip(x).map(|(a, b)| a * b).sum());
        let s = space.assemble_stiffness_fn(&geom, 0.0, |_| 1.0).unwrap();
        let sc = s.spmv(&c).unwrap();
        // ∇_Γh of the linear interpolant is P_h lin; flux = lin gives the same pairing with ∇χ_j
        let weak = space.assemble_load_with_flux(&geom, |_| 0.0, |_| lin.to_vec());
        for (a, b) in weak.iter().zip(&sc) {
            assert!((a - b).abs() < 1e-13);
        }
    }
}
