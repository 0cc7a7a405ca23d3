//! Simplicial approximations of evolving curves and surfaces.
//!
//! A [`SurfaceMesh`] stores reference vertices on Γ(0) and the element
//! connectivity. Vertex positions at later times follow the surface flow, so
//! the connectivity never changes over time.

use std::collections::HashMap;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::geometry::EvolvingSurface;

/// Flat list of points in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Positions {
    dim: usize,
    coords: Vec<f64>,
}

impl Positions {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!("{} coordinates do not split into points of dimension {dim}", coords.len())));
        }
        Ok(Positions { dim, coords })
    }

    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Ok(Positions { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn point(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    reference: Positions,
    simplices: Vec<usize>,
    surface_dim: usize,
    level: usize,
}

/// Measure and P1 basis gradients of one flat simplex. The gradients are
/// ambient vectors lying in the plane of the element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementFrame {
    pub measure: f64,
    pub gradients: Vec<Vec<f64>>,
}

impl SurfaceMesh {
    pub fn new(reference: Positions, simplices: Vec<usize>, surface_dim: usize, level: usize) -> Result<Self> {
        if !(1..=2).contains(&surface_dim) || reference.dim() != surface_dim + 1 {
            return Err(Error::invalid(format!(
                "a {surface_dim}-dimensional mesh cannot live in R^{}",
                reference.dim()
            )));
        }
        let nodes = surface_dim + 1;
        if !simplices.len().is_multiple_of(nodes) {
            return Err(Error::invalid("simplex index list is not a multiple of the element size"));
        }
        if let Some(&bad) = simplices.iter().find(|&&i| i >= reference.len()) {
            return Err(Error::invalid(format!("vertex index {bad} out of range")));
        }
        Ok(SurfaceMesh { reference, simplices, surface_dim, level })
    }

    /// Base polytope with vertices on the coordinate axes (a 4-gon for curves,
    /// an octahedron for surfaces), projected to Γ(0) and uniformly refined
    /// `level` times.
    pub fn initial_mesh(surface: &EvolvingSurface, level: usize) -> Result<Self> {
        let dim = surface.ambient_dim();
        let (points, simplices): (Vec<Vec<f64>>, Vec<usize>) = match dim {
            2 => (
                vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
                vec![0, 1, 1, 2, 2, 3, 3, 0],
            ),
            3 => (
                vec![
                    vec![1.0, 0.0, 0.0],
                    vec![-1.0, 0.0, 0.0],
                    vec![0.0, 1.0, 0.0],
                    vec![0.0, -1.0, 0.0],
                    vec![0.0, 0.0, 1.0],
                    vec![0.0, 0.0, -1.0],
                ],
                vec![0, 2, 4, 2, 1, 4, 1, 3, 4, 3, 0, 4, 2, 0, 5, 1, 2, 5, 3, 1, 5, 0, 3, 5],
            ),
            d => return Err(Error::Unsupported(format!("meshes in R^{d}"))),
        };
        let projected = points
            .iter()
            .map(|p| surface.project_to_surface(p, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let mut mesh = SurfaceMesh::new(Positions::from_points(dim, &projected)?, simplices, dim - 1, 0)?;
        for _ in 0..level {
            mesh = mesh.refine(surface)?;
        }
        Ok(mesh)
    }

    /// Splits every element at its edge midpoints; new vertices are projected to Γ(0).
    pub fn refine(&self, surface: &EvolvingSurface) -> Result<Self> {
        let dim = self.reference.dim();
        let mut coords = self.reference.coords().to_vec();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, coords: &mut Vec<f64>| -> Result<usize> {
            let key = (a.min(b), a.max(b));
            if let Some(&m) = midpoints.get(&key) {
                return Ok(m);
            }
            let mid: Vec<f64> = (0..dim).map(|i| 0.5 * (coords[a * dim + i] + coords[b * dim + i])).collect();
            let on_surface = surface.project_to_surface(&mid, 0.0)?;
            let index = coords.len() / dim;
            coords.extend_from_slice(&on_surface);
            midpoints.insert(key, index);
            Ok(index)
        };

        let mut simplices = Vec::with_capacity(self.simplices.len() * if self.surface_dim == 1 { 2 } else { 4 });
        for element in self.elements() {
            match *element {
                [a, b] => {
                    let m = midpoint(a, b, &mut coords)?;
                    simplices.extend_from_slice(&[a, m, m, b]);
                }
                [a, b, c] => {
                    let ab = midpoint(a, b, &mut coords)?;
                    let bc = midpoint(b, c, &mut coords)?;
                    let ca = midpoint(c, a, &mut coords)?;
                    simplices.extend_from_slice(&[a, ab, ca, ab, b, bc, ca, bc, c, ab, bc, ca]);
                }
                _ => unreachable!("element size is checked on construction"),
            }
        }
        SurfaceMesh::new(Positions::new(dim, coords)?, simplices, self.surface_dim, self.level + 1)
    }

    pub fn reference_vertices(&self) -> &Positions {
        &self.reference
    }

    pub fn surface_dim(&self) -> usize {
        self.surface_dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.reference.dim()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn nodes_per_element(&self) -> usize {
        self.surface_dim + 1
    }

    pub fn vertex_count(&self) -> usize {
        self.reference.len()
    }

    pub fn element_count(&self) -> usize {
        self.simplices.len() / self.nodes_per_element()
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let n = self.nodes_per_element();
        &self.simplices[e * n..(e + 1) * n]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.simplices.chunks_exact(self.nodes_per_element())
    }

    pub fn vertices_at(&self, surface: &EvolvingSurface, t: f64) -> Result<Positions> {
        surface.check_time(t)?;
        if t == 0.0 {
            return Ok(self.reference.clone());
        }
        let mut coords = Vec::with_capacity(self.reference.coords().len());
        for p in self.reference.iter() {
            coords.extend(surface.flow_map(p, t)?);
        }
        Positions::new(self.reference.dim(), coords)
    }

    /// Largest element diameter over the given times.
    pub fn mesh_size(&self, surface: &EvolvingSurface, times: &[f64]) -> Result<f64> {
        if times.is_empty() {
            return Err(Error::invalid("mesh_size needs at least one time"));
        }
        let mut h = 0.0_f64;
        for &t in times {
            let positions = self.vertices_at(surface, t)?;
            h = h.max(self.max_diameter(&positions));
        }
        Ok(h)
    }

    pub fn max_diameter(&self, positions: &Positions) -> f64 {
        self.elements().map(|el| diameter(positions, el)).fold(0.0, f64::max)
    }

    pub fn min_diameter(&self, positions: &Positions) -> f64 {
        self.elements().map(|el| diameter(positions, el)).fold(f64::INFINITY, f64::min)
    }

    /// Total length/area of Γ_h for the given vertex positions.
    pub fn measure(&self, positions: &Positions) -> Result<f64> {
        let mut total = 0.0;
        for (e, el) in self.elements().enumerate() {
            total += frame_of(positions, el, e)?.measure;
        }
        Ok(total)
    }

    pub fn frame(&self, positions: &Positions, e: usize) -> Result<ElementFrame> {
        frame_of(positions, self.element(e), e)
    }

    /// True when every vertex of a curve has two incident segments, or every
    /// edge of a surface has two incident triangles.
    pub fn is_closed(&self) -> bool {
        match self.surface_dim {
            1 => {
                let mut count = vec![0usize; self.vertex_count()];
                for el in self.elements() {
                    count[el[0]] += 1;
                    count[el[1]] += 1;
                }
                count.iter().all(|&c| c == 2)
            }
            _ => {
                let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
                for el in self.elements() {
                    for k in 0..3 {
                        let (a, b) = (el[k], el[(k + 1) % 3]);
                        *edges.entry((a.min(b), a.max(b))).or_default() += 1;
                    }
                }
                edges.values().all(|&c| c == 2)
            }
        }
    }

    /// Plain-text OFF dump. Curve meshes are written with 2-vertex faces and
    /// planar points are padded with a zero third coordinate.
    pub fn write_off<W: Write>(&self, positions: &Positions, mut out: W) -> io::Result<()> {
        writeln!(out, "OFF")?;
        writeln!(out, "{} {} 0", positions.len(), self.element_count())?;
        for p in positions.iter() {
            let z = if p.len() > 2 { p[2] } else { 0.0 };
            writeln!(out, "{:.17e} {:.17e} {:.17e}", p[0], p[1], z)?;
        }
        for el in self.elements() {
            write!(out, "{}", el.len())?;
            for i in el {
                write!(out, " {i}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn diameter(positions: &Positions, el: &[usize]) -> f64 {
    let mut d = 0.0_f64;
    for a in 0..el.len() {
        for b in a + 1..el.len() {
            d = d.max(distance(positions.point(el[a]), positions.point(el[b])));
        }
    }
    d
}

fn distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn frame_of(positions: &Positions, el: &[usize], e: usize) -> Result<ElementFrame> {
    let points: Vec<&[f64]> = el.iter().map(|&i| positions.point(i)).collect();
    element_frame(&points).map_err(|err| match err {
        Error::DegenerateElement { measure, .. } => Error::DegenerateElement { element: e, measure },
        other => other,
    })
}

/// Measure and tangential P1 gradients of a segment or triangle embedded in
/// ambient space.
pub fn element_frame(points: &[&[f64]]) -> Result<ElementFrame> {
    let n = points.len().checked_sub(1).filter(|n| (1..=2).contains(n)).ok_or_else(|| {
        Error::invalid(format!("element_frame needs 2 or 3 vertices, got {}", points.len()))
    })?;
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, found: points.iter().map(|p| p.len()).find(|&l| l != d).unwrap_or(d) });
    }
    let edges: Vec<Vec<f64>> = points[1..].iter().map(|p| p.iter().zip(points[0]).map(|(a, b)| a - b).collect()).collect();
    let mut h = 0.0_f64;
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            h = h.max(distance(points[a], points[b]));
        }
    }

    match n {
        1 => {
            let len2 = dot(&edges[0], &edges[0]);
            let measure = len2.sqrt();
            if h == 0.0 || !measure.is_finite() {
                return Err(Error::DegenerateElement { element: 0, measure });
            }
            let g1: Vec<f64> = edges[0].iter().map(|v| v / len2).collect();
            let g0: Vec<f64> = g1.iter().map(|v| -v).collect();
            Ok(ElementFrame { measure, gradients: vec![g0, g1] })
        }
        _ => {
            let g11 = dot(&edges[0], &edges[0]);
            let g12 = dot(&edges[0], &edges[1]);
            let g22 = dot(&edges[1], &edges[1]);
            let det = g11 * g22 - g12 * g12;
            let measure = 0.5 * det.max(0.0).sqrt();
            if h == 0.0 || !(measure >= 1e-14 * h * h) {
                return Err(Error::DegenerateElement { element: 0, measure });
            }
            // ∇λ_a = Σ_b (G⁻¹)_ab e_b for a = 1, 2
            let (i11, i12, i22) = (g22 / det, -g12 / det, g11 / det);
            let g1: Vec<f64> = (0..d).map(|k| i11 * edges[0][k] + i12 * edges[1][k]).collect();
            let g2: Vec<f64> = (0..d).map(|k| i12 * edges[0][k] + i22 * edges[1][k]).collect();
            let g0: Vec<f64> = (0..d).map(|k| -g1[k] - g2[k]).collect();
            Ok(ElementFrame { measure, gradients: vec![g0, g1, g2] })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_mesh_counts() {
        let curve = SurfaceMesh::initial_mesh(&EvolvingSurface::moving_ellipse(), 0).unwrap();
        assert_eq!((curve.vertex_count(), curve.element_count()), (4, 4));
        let surf = SurfaceMesh::initial_mesh(&EvolvingSurface::moving_ellipsoid(), 0).unwrap();
        assert_eq!((surf.vertex_count(), surf.element_count()), (6, 8));
    }

    #[test]
    fn refined_counts_follow_euler_formula() {
        let s = EvolvingSurface::moving_ellipsoid();
        for level in 0..4 {
            let mesh = SurfaceMesh::initial_mesh(&s, level).unwrap();
            let f = 8 * 4usize.pow(level as u32);
            assert_eq!(mesh.element_count(), f);
            assert_eq!(mesh.vertex_count(), 2 + 4 * 4usize.pow(level as u32));
            assert!(mesh.is_closed());
        }
        let c = EvolvingSurface::moving_ellipse();
        for level in 0..5 {
            let mesh = SurfaceMesh::initial_mesh(&c, level).unwrap();
            assert_eq!(mesh.element_count(), 4 << level);
            assert_eq!(mesh.vertex_count(), 4 << level);
            assert!(mesh.is_closed());
        }
    }

    #[test]
    fn vertices_follow_the_flow() {
        let s = EvolvingSurface::moving_ellipse().with_time_horizon(2.0);
        let mesh = SurfaceMesh::initial_mesh(&s, 0).unwrap();
        assert_eq!(&mesh.vertices_at(&s, 0.0).unwrap(), mesh.reference_vertices());
        let moved = mesh.vertices_at(&s, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((moved.point(0)[0] - 1.25_f64.sqrt()).abs() < 1e-15);
        assert_eq!(moved.point(0)[1], 0.0);

        let e = EvolvingSurface::moving_ellipsoid();
        let mesh = SurfaceMesh::initial_mesh(&e, 0).unwrap();
        assert_eq!(mesh.vertices_at(&e, 0.8).unwrap().point(4), &[0.0, 0.0, 1.0]);
        assert!(matches!(mesh.vertices_at(&e, 1.2), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn mesh_size_examples() {
        let seg = SurfaceMesh::new(Positions::new(2, vec![0.0, 0.0, 3.0, 4.0]).unwrap(), vec![0, 1], 1, 0).unwrap();
        let still = EvolvingSurface::unit_circle();
        assert_eq!(seg.mesh_size(&still, &[0.0]).unwrap(), 5.0);

        let square = SurfaceMesh::initial_mesh(&still, 0).unwrap();
        assert!((square.mesh_size(&still, &[0.0, 0.5, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);

        let moving = EvolvingSurface::moving_ellipse();
        let mesh = SurfaceMesh::initial_mesh(&moving, 0).unwrap();
        let h0 = mesh.mesh_size(&moving, &[0.0]).unwrap();
        let h1 = mesh.mesh_size(&moving, &[1.0]).unwrap();
        assert!((h0 - 1.5).abs() < 1e-15);
        assert_eq!(mesh.mesh_size(&moving, &[0.0, 1.0]).unwrap(), h0.max(h1));
        assert!(h1 > h0);
        assert!(mesh.mesh_size(&moving, &[]).is_err());
    }

    #[test]
    fn element_frame_examples() {
        let seg = element_frame(&[&[0.0, 0.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(seg.measure, 5.0);

        let tri = element_frame(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]).unwrap();
        assert!((tri.measure - 3f64.sqrt() / 2.0).abs() < 1e-15);

        let right = element_frame(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(right.measure, 0.5);
        assert_eq!(right.gradients, vec![vec![-1.0, -1.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);

        let flat = element_frame(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[2.0, 0.0, 0.0]]);
        assert!(matches!(flat, Err(Error::DegenerateElement { .. })));
        let point = element_frame(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(matches!(point, Err(Error::DegenerateElement { .. })));
    }

    #[test]
    fn gradients_reproduce_linear_functions() {
        // Σ_a g(p_a) ∇λ_a equals the tangential part of ∇g
        let p = [[0.3, -0.2, 1.1], [1.4, 0.5, 0.7], [0.1, 1.2, 0.4]];
        let frame = element_frame(&[&p[0], &p[1], &p[2]]).unwrap();
        let c = [0.7, -1.3, 2.1];
        let g = |x: &[f64; 3]| dot(&c, x);
        let grad: Vec<f64> = (0..3).map(|k| (0..3).map(|a| g(&p[a]) * frame.gradients[a][k]).sum()).collect();
        let e1: Vec<f64> = (0..3).map(|k| p[1][k] - p[0][k]).collect();
        let e2: Vec<f64> = (0..3).map(|k| p[2][k] - p[0][k]).collect();
        assert!((dot(&grad, &e1) - dot(&c, &e1)).abs() < 1e-13);
        assert!((dot(&grad, &e2) - dot(&c, &e2)).abs() < 1e-13);
    }

    #[test]
    fn refinement_keeps_vertices_on_surface_and_quasi_uniform() {
        for s in [EvolvingSurface::moving_ellipse(), EvolvingSurface::moving_ellipsoid()] {
            let mut previous_measure = 0.0;
            for level in 0..4 {
                let mesh = SurfaceMesh::initial_mesh(&s, level).unwrap();
                for p in mesh.reference_vertices().iter() {
                    assert!(s.level_set(p, 0.0).unwrap().abs() <= 1e-12);
                }
                let mut ratio = 0.0_f64;
                for t in [0.0, 0.5, 1.0] {
                    let pos = mesh.vertices_at(&s, t).unwrap();
                    ratio = ratio.max(mesh.max_diameter(&pos) / mesh.min_diameter(&pos));
                    for p in pos.iter() {
                        assert!(s.level_set(p, t).unwrap().abs() <= 1e-12);
                    }
                }
                assert!(ratio <= 10.0, "level {level}: diameter ratio {ratio}");
                let measure = mesh.measure(mesh.reference_vertices()).unwrap();
                assert!(measure > previous_measure);
                previous_measure = measure;
            }
        }
    }

    #[test]
    fn off_dump_lists_vertices_and_faces() {
        let s = EvolvingSurface::moving_ellipsoid();
        let mesh = SurfaceMesh::initial_mesh(&s, 0).unwrap();
        let mut buf = Vec::new();
        mesh.write_off(mesh.reference_vertices(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "OFF");
        assert_eq!(lines[1], "6 8 0");
        assert_eq!(lines.len(), 2 + 6 + 8);
        assert_eq!(lines[8], "3 0 2 4");
    }
}
