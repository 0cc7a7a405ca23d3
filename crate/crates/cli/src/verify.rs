//! Fast property checks behind the `verify` subcommand. The measuring
//! functions return the raw discrepancy so that callers can apply their own
//! thresholds.

use std::sync::Arc;

use esfem::fem::reference_quadrature;
use esfem::linalg::{dot, DEFAULT_TOL};
use esfem::manufactured::{diffusion_term, finite_difference_rhs, ConstantField};
use esfem::stepper::{precompute_time_levels, RhsFn};
use esfem::stochastic::{draw_sample, draw_samples, CustomCoefficient};
use esfem::{
    simulate_path, EvolvingSurface, Experiment, FemSpace, Positions, RandomCoefficient, Result, Sample, SeedSpec, SurfaceMesh,
    TimeGrid,
};

pub const ELEMENT_TOL: f64 = 1e-14;
pub const KERNEL_TOL: f64 = 1e-12;
pub const CONSERVATION_TOL: f64 = 1e-6;
pub const RHS_TOL: f64 = 1e-6;
pub const EIGEN_TOL: f64 = 1e-8;
pub const FD_STEP: f64 = 1e-3;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Largest quadrature error over all monomials of degree ≤ 4 on the
/// reference segment and triangle.
pub fn quadrature_error() -> Result<f64> {
    let mut worst = 0.0_f64;
    let segment = reference_quadrature(1, 4)?;
    for a in 0..=4 {
        let q = segment.integrate_reference(|p| p[0].powi(a));
        worst = worst.max((q - 1.0 / f64::from(a + 1)).abs());
    }
    let triangle = reference_quadrature(2, 4)?;
    for a in 0..=4u32 {
        for b in 0..=4 - a {
            let q = triangle.integrate_reference(|p| p[0].powi(a as i32) * p[1].powi(b as i32));
            let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
            worst = worst.max((q - exact).abs());
        }
    }
    Ok(worst)
}

pub struct ElementReport {
    /// Largest entry error of the assembled mass and stiffness matrices.
    pub matrix_error: f64,
    /// `‖S·1‖_∞ / ‖S‖_∞` over the test elements.
    pub kernel_ratio: f64,
}

fn single_element(points: &[f64], dim: usize) -> Result<(FemSpace, esfem::LevelGeometry)> {
    let positions = Positions::new(dim, points.to_vec())?;
    let n = positions.len();
    let mesh = SurfaceMesh::new(positions.clone(), (0..n).collect(), n - 1, 0)?;
    let space = FemSpace::new(mesh)?;
    let geom = space.geometry(positions)?;
    Ok((space, geom))
}

/// Assembles single elements and compares with closed forms: `L/6 (1+δ)` and
/// `±1/L` on a segment, `|E|/12 (1+δ)` and the cotangent formula on a triangle.
pub fn element_report() -> Result<ElementReport> {
    let mut matrix_error = 0.0_f64;
    let mut kernel_ratio = 0.0_f64;
    let mut record = |space: &FemSpace, geom: &esfem::LevelGeometry, mass: &[Vec<f64>], stiff: &[Vec<f64>]| -> Result<()> {
        let m = space.assemble_mass(geom).to_dense();
        let s = space.assemble_stiffness_fn(geom, 0.0, |_| 1.0)?;
        let sd = s.to_dense();
        for i in 0..mass.len() {
            for j in 0..mass.len() {
                matrix_error = matrix_error.max((m[i][j] - mass[i][j]).abs()).max((sd[i][j] - stiff[i][j]).abs());
            }
        }
        let ones = vec![1.0; space.dim()];
        let ker = s.spmv(&ones)?.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        kernel_ratio = kernel_ratio.max(ker / s.norm_inf());
        Ok(())
    };

    // segment in the plane
    let (p, q) = ([0.3_f64, -0.2], [1.1_f64, 0.4]);
    let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
    let (space, geom) = single_element(&[p[0], p[1], q[0], q[1]], 2)?;
    let mass = vec![vec![len / 3.0, len / 6.0], vec![len / 6.0, len / 3.0]];
    let stiff = vec![vec![1.0 / len, -1.0 / len], vec![-1.0 / len, 1.0 / len]];
    record(&space, &geom, &mass, &stiff)?;

    // skew triangle in space
    let verts = [[0.1, 0.0, 0.2], [1.0, 0.3, -0.1], [0.2, 0.9, 0.5]];
    let (space, geom) = single_element(&verts.concat(), 3)?;
    let sub = |a: usize, b: usize| -> [f64; 3] { std::array::from_fn(|i| verts[a][i] - verts[b][i]) };
    let cross = |u: [f64; 3], v: [f64; 3]| [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let area = 0.5 * dot(&cross(sub(1, 0), sub(2, 0)), &cross(sub(1, 0), sub(2, 0))).sqrt();
    let mass: Vec<Vec<f64>> =
        (0..3).map(|i| (0..3).map(|j| area / 12.0 * if i == j { 2.0 } else { 1.0 }).collect()).collect();
    let mut stiff = vec![vec![0.0; 3]; 3];
    for c in 0..3 {
        // the angle at vertex c faces the edge (a, b)
        let (a, b) = ((c + 1) % 3, (c + 2) % 3);
        let (u, v) = (sub(a, c), sub(b, c));
        let cot = dot(&u, &v) / dot(&cross(u, v), &cross(u, v)).sqrt();
        stiff[a][b] -= 0.5 * cot;
        stiff[b][a] -= 0.5 * cot;
        stiff[a][a] += 0.5 * cot;
        stiff[b][b] += 0.5 * cot;
    }
    record(&space, &geom, &mass, &stiff)?;
    Ok(ElementReport { matrix_error, kernel_ratio })
}

/// Largest relative change of the discrete mass `1ᵀ M^k U^k` over `k` for a
/// source-free path with a random coefficient sample.
pub fn conservation_drift(experiment: Experiment, level: usize, steps: usize, seed: u64) -> Result<f64> {
    let surface = experiment.surface();
    let mesh = SurfaceMesh::initial_mesh(&surface, level)?;
    let grid = TimeGrid::new(surface.time_horizon, steps)?;
    let sample = draw_sample(SeedSpec::new(seed, 0, 0), experiment.sample_dim());
    let zero: &RhsFn<'_> = &|_, _, _| Ok(0.0);
    let path = simulate_path(&mesh, &surface, &experiment.coefficient(), zero, |x| 1.0 + x[0] - 0.5 * x[1], &sample, &grid, DEFAULT_TOL)?;
    let space = FemSpace::new(mesh)?;
    let levels = precompute_time_levels(&space, &surface, &grid)?;
    let ones = vec![1.0; space.dim()];
    let totals = levels
        .iter()
        .zip(&path.coefficients)
        .map(|(l, u)| l.mass.spmv(u).map(|mu| dot(&ones, &mu)))
        .collect::<Result<Vec<_>>>()?;
    Ok(totals.iter().map(|m| (m - totals[0]).abs() / totals[0].abs()).fold(0.0, f64::max))
}

/// Random `(x, t, Y)` with `x ∈ Γ(t)` and `t` away from the ends of the
/// time interval so that centred differences in time stay inside it.
fn random_points(experiment: Experiment, count: usize, seed: u64) -> Result<Vec<(Vec<f64>, f64, Sample)>> {
    let surface = experiment.surface();
    let d = surface.ambient_dim();
    draw_samples(SeedSpec::new(seed, 0, 0), count, d + 3)
        .into_iter()
        .map(|s| {
            let v = s.values();
            let t = 0.01 + 0.98 * (v[d] + 1.0) / 2.0;
            let x = surface.project_to_surface(&v[..d], t)?;
            Ok((x, t, Sample::new(v[d + 1..].to_vec())?))
        })
        .collect()
}

/// Largest relative discrepancy `|f_AD − f_FD| / max(|f_AD|, 1)` at `count`
/// random points.
pub fn rhs_discrepancy(experiment: Experiment, count: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0_f64;
    for (x, t, y) in random_points(experiment, count, seed)? {
        let ad = experiment.rhs_f(&x, t, &y)?;
        let fd = finite_difference_rhs(experiment, &x, t, &y, FD_STEP)?;
        worst = worst.max((ad - fd).abs() / ad.abs().max(1.0));
    }
    Ok(worst)
}

struct FirstCoordinate;

impl esfem::autodiff::AmbientField for FirstCoordinate {
    fn eval<T: esfem::autodiff::Scalar>(&self, x: &[T], _t: T) -> T {
        x[0]
    }
}

/// Largest `|−Δ_Γ x₁ − 2x₁|` on the unit sphere at `count` random points.
pub fn sphere_eigen_error(count: usize, seed: u64) -> Result<f64> {
    let sphere = EvolvingSurface::unit_sphere();
    let mut worst = 0.0_f64;
    for s in draw_samples(SeedSpec::new(seed, 0, 0), count, 3) {
        let x = sphere.project_to_surface(s.values(), 0.0)?;
        let lap = diffusion_term(&sphere, &ConstantField(1.0), &FirstCoordinate, &x, 0.0)?;
        worst = worst.max((-lap - 2.0 * x[0]).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    /// Replace the diffusion coefficient by `α ≡ −1`.
    NegativeAlpha,
}

/// Assembles the stiffness matrix of every experiment at a few random
/// samples and times; an ellipticity violation is an error.
pub fn ellipticity_check(fault: Option<Fault>, seed: u64) -> Result<()> {
    for experiment in [Experiment::Ellipse2D, Experiment::Ellipsoid3D] {
        let surface = experiment.surface();
        let space = FemSpace::new(SurfaceMesh::initial_mesh(&surface, 2)?)?;
        let coefficient = match fault {
            Some(Fault::NegativeAlpha) => RandomCoefficient::Custom(CustomCoefficient {
                func: Arc::new(|_, _, _| -1.0),
                sample_dim: experiment.sample_dim(),
                alpha_min: -1.0,
                alpha_max: -1.0,
            }),
            None => experiment.coefficient(),
        };
        for (i, sample) in draw_samples(SeedSpec::new(seed, 0, 0), 4, experiment.sample_dim()).iter().enumerate() {
            let t = i as f64 / 3.0;
            let geom = space.geometry(space.mesh().vertices_at(&surface, t)?)?;
            space.assemble_stiffness(&geom, t, &coefficient, sample)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn threshold(name: &'static str, measured: Result<f64>, tol: f64) -> Check {
    match measured {
        Ok(v) => Check { name, passed: v <= tol, detail: format!("measured {v:.3e}, limit {tol:.0e}") },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

/// Runs every property and reports one line per check.
pub fn verify(fault: Option<Fault>, seed: u64) -> Vec<Check> {
    let elements = element_report();
    let (matrices, kernel) = match elements {
        Ok(r) => (Ok(r.matrix_error), Ok(r.kernel_ratio)),
        Err(e) => (Err(e.clone()), Err(e)),
    };
    let worst = |a: Result<f64>, b: Result<f64>| Ok(a?.max(b?));
    vec![
        threshold("quadrature exactness", quadrature_error(), ELEMENT_TOL),
        threshold("element matrices", matrices, ELEMENT_TOL),
        threshold("stiffness kernel", kernel, KERNEL_TOL),
        threshold(
            "mass conservation",
            worst(conservation_drift(Experiment::Ellipse2D, 3, 64, seed), conservation_drift(Experiment::Ellipsoid3D, 2, 64, seed)),
            CONSERVATION_TOL,
        ),
        threshold(
            "AD vs FD right-hand side",
            worst(rhs_discrepancy(Experiment::Ellipse2D, 200, seed), rhs_discrepancy(Experiment::Ellipsoid3D, 200, seed)),
            RHS_TOL,
        ),
        threshold("sphere eigenfunction", sphere_eigen_error(200, seed), EIGEN_TOL),
        match ellipticity_check(fault, seed) {
            Ok(()) => Check { name: "ellipticity", passed: true, detail: "coefficient positive at all quadrature points".into() },
            Err(e) => Check { name: "ellipticity", passed: false, detail: format!("error: {e}") },
        },
    ]
}
