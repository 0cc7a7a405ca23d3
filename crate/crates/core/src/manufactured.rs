//! Manufactured solutions of the two moving-geometry experiments.
//!
//! The right-hand side is obtained from the strong form
//!
//! ```text
//! f = ∂•u + u ∇_Γ·v − ∇_Γ·(α ∇_Γ u)
//! ```
//!
//! by differentiating the closed-form ambient expressions with nested dual
//! numbers. Surface divergences use `∇_Γ·F = tr(P ∇F)` with the projector
//! `P = I − ννᵀ` built from the level-set normal, and the flux
//! `F = α P ∇ũ` is differentiated as a whole.

use crate::autodiff::{derivative, gradient, AmbientField, Dual, Scalar};
use crate::error::{Error, Result};
use crate::fem::{FemSpace, LevelGeometry};
use crate::geometry::{projector_from_normal, EvolvingSurface};
use crate::linalg::Vector;
use crate::stochastic::{RandomCoefficient, Sample};

/// Level-set tolerance for points accepted by [`Experiment::rhs_f`].
pub const ON_SURFACE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    /// Moving ellipse in R², coefficient and solution with `sin`/`cos` modes.
    Ellipse2D,
    /// Ellipsoid in R³ with oscillating first axis, polynomial data.
    Ellipsoid3D,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialFactor {
    /// `cos(f x₁) + cos(f x₂)`
    CosSum { freq: f64 },
    /// `cos(f x_coord)`
    Cos { coord: usize, freq: f64 },
    /// `x_a x_b`
    Product { a: usize, b: usize },
    /// `x_coord`
    Coord(usize),
}

/// `sin(ω t) · g(x)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionTerm {
    pub time_freq: f64,
    pub spatial: SpatialFactor,
}

impl AmbientField for SolutionTerm {
    fn eval<T: Scalar>(&self, x: &[T], t: T) -> T {
        let g = match self.spatial {
            SpatialFactor::CosSum { freq } => x[0].scale(freq).cos() + x[1].scale(freq).cos(),
            SpatialFactor::Cos { coord, freq } => x[coord].scale(freq).cos(),
            SpatialFactor::Product { a, b } => x[a] * x[b],
            SpatialFactor::Coord(c) => x[c],
        };
        t.scale(self.time_freq).sin() * g
    }
}

/// `Σ_m w_m F_m` for fixed weights.
#[derive(Debug, Clone)]
pub struct Combination<F> {
    pub terms: Vec<F>,
    pub weights: Vec<f64>,
}

impl<F: AmbientField> Combination<F> {
    /// `F₀ + Σ_m Y_m F_m`.
    pub fn affine(terms: Vec<F>, sample: &Sample) -> Self {
        Combination { terms, weights: sample.affine_weights() }
    }
}

impl<F: AmbientField> AmbientField for Combination<F> {
    fn eval<T: Scalar>(&self, x: &[T], t: T) -> T {
        self.terms
            .iter()
            .zip(&self.weights)
            .fold(T::zero(), |acc, (f, &w)| acc + f.eval(x, t).scale(w))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantField(pub f64);

impl AmbientField for ConstantField {
    fn eval<T: Scalar>(&self, _x: &[T], _t: T) -> T {
        T::from_f64(self.0)
    }
}

/// `∂•u = ũ_t + v·∇ũ`.
pub fn material_derivative_of<U: AmbientField>(surface: &EvolvingSurface, u: &U, x: &[f64], t: f64) -> Result<f64> {
    let v = surface.velocity(x, t)?;
    let xs: Vec<Dual<f64>> = x.iter().map(|&xi| Dual::constant(xi)).collect();
    let u_t = derivative(|s| u.eval(&xs, s), t);
    let grad = gradient(|p| u.eval(p, Dual::constant(t)), x);
    Ok(u_t + v.iter().zip(&grad).map(|(a, b)| a * b).sum::<f64>())
}

/// `∂•u + u ∇_Γ·v`.
pub fn transport_term<U: AmbientField>(surface: &EvolvingSurface, u: &U, x: &[f64], t: f64) -> Result<f64> {
    let md = material_derivative_of(surface, u, x, t)?;
    Ok(md + u.eval(x, t) * surface.tangential_divergence_velocity(x, t)?)
}

/// `∇_Γ·(α ∇_Γ u) = tr(P ∇(α P ∇ũ))`.
pub fn diffusion_term<A: AmbientField, U: AmbientField>(
    surface: &EvolvingSurface,
    alpha: &A,
    u: &U,
    x: &[f64],
    t: f64,
) -> Result<f64> {
    let d = x.len();
    let proj = projector_from_normal(&surface.normal_generic(x, t)?);
    let t_dual = Dual::constant(t);
    let mut p: Vec<Dual<f64>> = x.iter().map(|&xi| Dual::constant(xi)).collect();
    let mut acc = 0.0;
    for j in 0..d {
        p[j].eps = 1.0;
        let nu = surface.normal_generic(&p, t_dual)?;
        let grad_u = gradient(|q: &[Dual<Dual<f64>>]| u.eval(q, Dual::constant(t_dual)), &p);
        let a = alpha.eval(&p, t_dual);
        let nu_dot_grad = nu.iter().zip(&grad_u).fold(Dual::zero(), |s, (&n, &g)| s + n * g);
        for i in 0..d {
            let flux_i = a * (grad_u[i] - nu[i] * nu_dot_grad);
            acc += proj[i * d + j] * flux_i.eps;
        }
        p[j].eps = 0.0;
    }
    Ok(acc)
}

/// Strong-form right-hand side `∂•u + u∇_Γ·v − ∇_Γ·(α∇_Γ u)` for arbitrary
/// differentiable `u` and `α`, evaluated with the level-set extension (also
/// off Γ(t)).
pub fn strong_rhs<A: AmbientField, U: AmbientField>(
    surface: &EvolvingSurface,
    alpha: &A,
    u: &U,
    x: &[f64],
    t: f64,
) -> Result<f64> {
    Ok(transport_term(surface, u, x, t)? - diffusion_term(surface, alpha, u, x, t)?)
}

/// Per-point pieces of the right-hand side of an affine problem:
/// `f(Y) = Σ_m ψ_m transport[m] − Σ_{m,n} ψ_m ψ_n diffusion[m][n]` with
/// `ψ = (1, Y₁, …)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RhsComponents {
    pub transport: Vec<f64>,
    pub diffusion: Vec<Vec<f64>>,
}

impl RhsComponents {
    pub fn combine(&self, weights: &[f64]) -> f64 {
        let mut f = 0.0;
        for (m, &wm) in weights.iter().enumerate() {
            f += wm * self.transport[m];
            for (n, &wn) in weights.iter().enumerate() {
                f -= wm * wn * self.diffusion[m][n];
            }
        }
        f
    }
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Ellipse2D => "ellipse2d",
            Experiment::Ellipsoid3D => "ellipsoid3d",
        }
    }

    pub fn surface(&self) -> EvolvingSurface {
        match self {
            Experiment::Ellipse2D => EvolvingSurface::moving_ellipse(),
            Experiment::Ellipsoid3D => EvolvingSurface::moving_ellipsoid(),
        }
    }

    pub fn coefficient(&self) -> RandomCoefficient {
        match self {
            Experiment::Ellipse2D => RandomCoefficient::Experiment1,
            Experiment::Ellipsoid3D => RandomCoefficient::Experiment2,
        }
    }

    pub fn sample_dim(&self) -> usize {
        2
    }

    /// `u = u₀ + Σ_m Y_m u_m`; `u₀` is also the expectation `E[u]`.
    pub fn solution_terms(&self) -> Vec<SolutionTerm> {
        let term = |time_freq, spatial| SolutionTerm { time_freq, spatial };
        match self {
            Experiment::Ellipse2D => vec![
                term(1.0, SpatialFactor::CosSum { freq: 3.0 }),
                term(1.0, SpatialFactor::Cos { coord: 0, freq: 5.0 }),
                term(1.0, SpatialFactor::Cos { coord: 1, freq: 5.0 }),
            ],
            Experiment::Ellipsoid3D => vec![
                term(1.0, SpatialFactor::Product { a: 0, b: 1 }),
                term(2.0, SpatialFactor::Product { a: 0, b: 0 }),
                term(2.0, SpatialFactor::Coord(1)),
            ],
        }
    }

    pub fn solution(&self, sample: &Sample) -> Combination<SolutionTerm> {
        Combination::affine(self.solution_terms(), sample)
    }

    pub fn exact_u(&self, x: &[f64], t: f64, sample: &Sample) -> f64 {
        self.solution(sample).eval(x, t)
    }

    /// `E[u]`: the `Y`-terms average out because `E[Y_m] = 0`.
    pub fn expected_u(&self, x: &[f64], t: f64) -> f64 {
        self.solution_terms()[0].eval(x, t)
    }

    pub fn material_derivative(&self, x: &[f64], t: f64, sample: &Sample) -> Result<f64> {
        material_derivative_of(&self.surface(), &self.solution(sample), x, t)
    }

    /// Right-hand side at a point of Γ(t).
    pub fn rhs_f(&self, x: &[f64], t: f64, sample: &Sample) -> Result<f64> {
        let surface = self.surface();
        let phi = surface.level_set(x, t)?;
        if phi.abs() > ON_SURFACE_TOL {
            return Err(Error::OffSurface { distance: phi.abs(), tolerance: ON_SURFACE_TOL });
        }
        self.rhs_f_extended(x, t, sample)
    }

    /// Right-hand side through the ambient extension; used at quadrature
    /// points of the flat elements, which lie off Γ(t).
    pub fn rhs_f_extended(&self, x: &[f64], t: f64, sample: &Sample) -> Result<f64> {
        let surface = self.surface();
        surface.check_time(t)?;
        let alpha = Combination::affine(self.coefficient().affine_terms().expect("affine"), sample);
        strong_rhs(&surface, &alpha, &self.solution(sample), x, t)
    }

    pub fn rhs_components(&self, x: &[f64], t: f64) -> Result<RhsComponents> {
        rhs_components(&self.surface(), &self.coefficient().affine_terms().expect("affine"), &self.solution_terms(), x, t)
    }
}

/// Transport and diffusion pieces for every pair of solution and coefficient terms.
pub fn rhs_components<A: AmbientField, U: AmbientField>(
    surface: &EvolvingSurface,
    alpha_terms: &[A],
    u_terms: &[U],
    x: &[f64],
    t: f64,
) -> Result<RhsComponents> {
    let transport = u_terms.iter().map(|u| transport_term(surface, u, x, t)).collect::<Result<Vec<_>>>()?;
    let diffusion = u_terms
        .iter()
        .map(|u| alpha_terms.iter().map(|a| diffusion_term(surface, a, u, x, t)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(RhsComponents { transport, diffusion })
}

/// Load vector with the diffusion term moved onto the test functions,
/// `F_j = ∫ (∂•u + u∇_Γ·v) χ_j + ∫ α ∇ũ·∇_{Γ_h}χ_j`. Only meant as a
/// cross-check of the strong-form load.
pub fn weak_residual_load(
    experiment: Experiment,
    space: &FemSpace,
    geom: &LevelGeometry,
    t: f64,
    sample: &Sample,
) -> Result<Vector> {
    let surface = experiment.surface();
    let u = experiment.solution(sample);
    let coefficient = experiment.coefficient();
    let mut first_error = None;
    let load = space.assemble_load_with_flux(
        geom,
        |x| {
            transport_term(&surface, &u, x, t).unwrap_or_else(|e| {
                first_error.get_or_insert(e);
                0.0
            })
        },
        |x| {
            let a = coefficient.eval(x, t, sample);
            gradient(|p| u.eval(p, Dual::constant(t)), x).into_iter().map(|g| a * g).collect()
        },
    );
    match first_error {
        Some(e) => Err(e),
        None => Ok(load),
    }
}

/// Fourth-order central difference `(−g(2h) + 8g(h) − 8g(−h) + g(−2h)) / 12h`.
fn central_difference(g: impl Fn(f64) -> f64, h: f64) -> f64 {
    (-g(2.0 * h) + 8.0 * g(h) - 8.0 * g(-h) + g(-2.0 * h)) / (12.0 * h)
}

fn fd_gradient(g: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            central_difference(
                |s| {
                    let mut p = x.to_vec();
                    p[i] += s;
                    g(&p)
                },
                h,
            )
        })
        .collect()
}

/// Independent finite-difference evaluation of the strong right-hand side
/// at a point of Γ(t), using only plain evaluations of the solution, the
/// coefficient, the velocity and the projector. `h` is the stencil width of
/// every difference quotient.
pub fn finite_difference_rhs(experiment: Experiment, x: &[f64], t: f64, sample: &Sample, h: f64) -> Result<f64> {
    let surface = experiment.surface();
    let axes = surface.axes().expect("experiment surfaces scale along their axes");
    let coefficient = experiment.coefficient();
    let u = |p: &[f64], s: f64| experiment.exact_u(p, s, sample);
    let d = x.len();

    // along the trajectory X(s) through x at time t
    let trajectory = |s: f64| -> Vec<f64> {
        x.iter().zip(axes.iter()).map(|(&xi, ax)| xi * (ax.eval(t + s) / ax.eval(t)).sqrt()).collect()
    };
    let material = central_difference(|s| u(&trajectory(s), t + s), h);

    let proj = surface.projector(x, t)?;
    let mut div_v = 0.0;
    for j in 0..d {
        let dv = central_difference(
            |s| {
                let mut p = x.to_vec();
                p[j] += s;
                surface.velocity(&p, t).map(|v| v.iter().enumerate().map(|(i, vi)| proj[i * d + j] * vi).sum::<f64>()).unwrap_or(f64::NAN)
            },
            h,
        );
        div_v += dv;
    }

    // flux w = α P ∇ũ and its surface divergence tr(P ∇w)
    let flux = |p: &[f64]| -> Vec<f64> {
        let grad = fd_gradient(|q| u(q, t), p, h);
        let pp = surface.projector(p, t).unwrap_or_else(|_| vec![f64::NAN; d * d]);
        let a = coefficient.eval(p, t, sample);
        (0..d).map(|i| a * (0..d).map(|k| pp[i * d + k] * grad[k]).sum::<f64>()).collect()
    };
    let mut div_flux = 0.0;
    for j in 0..d {
        div_flux += central_difference(
            |s| {
                let mut p = x.to_vec();
                p[j] += s;
                let w = flux(&p);
                (0..d).map(|i| proj[i * d + j] * w[i]).sum()
            },
            h,
        );
    }

    let value = material + u(x, t) * div_v - div_flux;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Singular("finite-difference stencil left the domain of the normal"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::{draw_samples, SeedSpec};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn exact_u_examples() {
        let y = Sample::new(vec![0.4, -0.8]).unwrap();
        for exp in [Experiment::Ellipse2D, Experiment::Ellipsoid3D] {
            let x = if exp == Experiment::Ellipse2D { vec![0.3, 0.9] } else { vec![0.3, 0.9, -0.2] };
            assert_eq!(exp.exact_u(&x, 0.0, &y), 0.0);
        }
        let v = Experiment::Ellipse2D.exact_u(&[0.0, 0.0], FRAC_PI_2, &Sample::zeros(2));
        assert!((v - 2.0).abs() < 1e-15);
        let off = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt(), 0.0];
        assert!(Experiment::Ellipsoid3D.exact_u(&off, 0.5, &y).is_finite());
    }

    #[test]
    fn expected_u_examples() {
        let x = [0.7, -0.4];
        assert_eq!(Experiment::Ellipse2D.expected_u(&x, 0.0), 0.0);
        let t = 0.6;
        let expected = t.sin() * ((3.0 * x[0]).cos() + (3.0 * x[1]).cos());
        assert!((Experiment::Ellipse2D.expected_u(&x, t) - expected).abs() < 1e-15);
        let x3 = [0.7, -0.4, 0.2];
        assert!((Experiment::Ellipsoid3D.expected_u(&x3, t) - t.sin() * x3[0] * x3[1]).abs() < 1e-15);
    }

    #[test]
    fn expected_u_is_the_parameter_average() {
        // 5-point Gauss–Legendre in each Y direction is exact for affine dependence
        let nodes = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
        let weights = [0.568_888_888_888_888_9, 0.478_628_670_499_366_5, 0.478_628_670_499_366_5, 0.236_926_885_056_189_1, 0.236_926_885_056_189_1];
        for exp in [Experiment::Ellipse2D, Experiment::Ellipsoid3D] {
            let x: Vec<f64> = [0.35, -0.8, 0.45][..exp.surface().ambient_dim()].to_vec();
            let t = 0.77;
            let mut avg = 0.0;
            for (y1, w1) in nodes.iter().zip(&weights) {
                for (y2, w2) in nodes.iter().zip(&weights) {
                    avg += w1 * w2 * exp.exact_u(&x, t, &Sample::new(vec![*y1, *y2]).unwrap());
                }
            }
            assert!((avg / 4.0 - exp.expected_u(&x, t)).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_u_matches_monte_carlo_mean() {
        let exp = Experiment::Ellipse2D;
        let x = [0.9, 0.2];
        let t = 0.8;
        let m = 100_000;
        let values: Vec<f64> = draw_samples(SeedSpec::new(99, 0, 0), m, 2).iter().map(|s| exp.exact_u(&x, t, s)).collect();
        let mean = values.iter().sum::<f64>() / m as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        assert!((mean - exp.expected_u(&x, t)).abs() < 3.0 * (var / m as f64).sqrt());
    }

    #[test]
    fn material_derivative_at_initial_time() {
        let y = Sample::new(vec![0.3, -0.6]).unwrap();
        let x0 = EvolvingSurface::moving_ellipse().project_to_surface(&[0.4, 0.7], 0.0).unwrap();
        let md = Experiment::Ellipse2D.material_derivative(&x0, 0.0, &y).unwrap();
        let expected = (3.0 * x0[0]).cos() + (3.0 * x0[1]).cos() + 0.3 * (5.0 * x0[0]).cos() - 0.6 * (5.0 * x0[1]).cos();
        assert!((md - expected).abs() < 1e-14);

        // frozen surface: only the time derivative remains
        let sphere = EvolvingSurface::unit_sphere();
        let u = Experiment::Ellipsoid3D.solution(&y);
        let x = [0.0, 0.6, 0.8];
        let md = material_derivative_of(&sphere, &u, &x, 0.0).unwrap();
        assert!((md - (0.0 + 2.0 * 0.3 * 0.0 - 0.6 * 2.0 * 0.6)).abs() < 1e-14);
    }

    #[test]
    fn material_derivative_matches_flow_line_differences() {
        let delta = 1e-5;
        for exp in [Experiment::Ellipse2D, Experiment::Ellipsoid3D] {
            let surface = exp.surface();
            for (k, s) in draw_samples(SeedSpec::new(3, 1, 0), 50, 6).iter().enumerate() {
                let v = s.values();
                let x0 = surface.project_to_surface(&v[..surface.ambient_dim()], 0.0).unwrap();
                let t = 0.1 + 0.8 * (k as f64 / 50.0);
                let y = Sample::new(v[4..6].to_vec()).unwrap();
                let x = surface.flow_map(&x0, t).unwrap();
                let up = exp.exact_u(&surface.flow_map(&x0, t + delta).unwrap(), t + delta, &y);
                let um = exp.exact_u(&surface.flow_map(&x0, t - delta).unwrap(), t - delta, &y);
                let fd = (up - um) / (2.0 * delta);
                assert!((exp.material_derivative(&x, t, &y).unwrap() - fd).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rhs_at_initial_time() {
        let zero = Sample::zeros(2);
        let x = EvolvingSurface::moving_ellipse().project_to_surface(&[0.5, -0.3], 0.0).unwrap();
        let f = Experiment::Ellipse2D.rhs_f(&x, 0.0, &zero).unwrap();
        assert!((f - ((3.0 * x[0]).cos() + (3.0 * x[1]).cos())).abs() < 1e-14);
        let x = EvolvingSurface::moving_ellipsoid().project_to_surface(&[0.5, -0.3, 0.6], 0.0).unwrap();
        let f = Experiment::Ellipsoid3D.rhs_f(&x, 0.0, &zero).unwrap();
        assert!((f - x[0] * x[1]).abs() < 1e-14);
    }

    #[test]
    fn rhs_rejects_points_off_the_surface() {
        let err = Experiment::Ellipse2D.rhs_f(&[0.5, 0.5], 0.2, &Sample::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::OffSurface { .. }));
        assert!(Experiment::Ellipse2D.rhs_f_extended(&[0.5, 0.5], 0.2, &Sample::zeros(2)).is_ok());
    }

    #[test]
    fn sphere_eigenfunction() {
        let sphere = EvolvingSurface::unit_sphere();
        struct X1;
        impl AmbientField for X1 {
            fn eval<T: Scalar>(&self, x: &[T], _t: T) -> T {
                x[0]
            }
        }
        for s in draw_samples(SeedSpec::new(8, 0, 0), 200, 3) {
            let x = sphere.project_to_surface(s.values(), 0.0).unwrap();
            let lap = diffusion_term(&sphere, &ConstantField(1.0), &X1, &x, 0.3).unwrap();
            assert!((-lap - 2.0 * x[0]).abs() < 1e-8);
        }
    }

    #[test]
    fn components_recombine_to_the_full_rhs() {
        for exp in [Experiment::Ellipse2D, Experiment::Ellipsoid3D] {
            let surface = exp.surface();
            for s in draw_samples(SeedSpec::new(12, 0, 0), 20, 5) {
                let v = s.values();
                let x = surface.flow_map(&surface.project_to_surface(&v[..surface.ambient_dim()], 0.0).unwrap(), 0.4).unwrap();
                let y = Sample::new(v[3..5].to_vec()).unwrap();
                let parts = exp.rhs_components(&x, 0.4).unwrap();
                let direct = exp.rhs_f(&x, 0.4, &y).unwrap();
                assert!((parts.combine(&y.affine_weights()) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn rhs_matches_finite_differences() {
        for exp in [Experiment::Ellipse2D, Experiment::Ellipsoid3D] {
            let surface = exp.surface();
            let d = surface.ambient_dim();
            for s in draw_samples(SeedSpec::new(21, 0, 0), 100, 6) {
                let v = s.values();
                let t = 0.05 + 0.9 * (v[5] + 1.0) / 2.0;
                let x = surface.project_to_surface(&v[..d], t).unwrap();
                let y = Sample::new(v[3..5].to_vec()).unwrap();
                let ad = exp.rhs_f(&x, t, &y).unwrap();
                let fd = finite_difference_rhs(exp, &x, t, &y, 1e-3).unwrap();
                assert!((ad - fd).abs() <= 1e-6 * ad.abs().max(1.0), "{exp:?} at {x:?}, t = {t}: {ad} vs {fd}");
            }
        }
    }
}
