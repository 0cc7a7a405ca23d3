//! Analytic evolving surfaces.
//!
//! The built-in families are axis-scaled quadrics
//! `Γ(t) = { x : Σᵢ xᵢ² / aᵢ(t) = 1 }`. Their material flow is the exact
//! coordinate scaling `xᵢ ↦ xᵢ √(aᵢ(t)/aᵢ(0))`, whose velocity field is
//! `vᵢ = ȧᵢ/(2aᵢ) xᵢ`. Custom surfaces supply level set, flow and velocity
//! as callbacks.

use std::fmt;
use std::sync::Arc;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Squared semi-axis as a function of time: `mean + sin_amp·sin t + cos_amp·cos t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisFn {
    pub mean: f64,
    pub sin_amp: f64,
    pub cos_amp: f64,
}

impl AxisFn {
    pub const fn constant(c: f64) -> Self {
        AxisFn { mean: c, sin_amp: 0.0, cos_amp: 0.0 }
    }

    pub const fn oscillating(mean: f64, sin_amp: f64, cos_amp: f64) -> Self {
        AxisFn { mean, sin_amp, cos_amp }
    }

    pub fn eval<T: Scalar>(&self, t: T) -> T {
        T::from_f64(self.mean) + t.sin().scale(self.sin_amp) + t.cos().scale(self.cos_amp)
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.sin_amp * t.cos() - self.cos_amp * t.sin()
    }

    pub fn is_constant(&self) -> bool {
        self.sin_amp == 0.0 && self.cos_amp == 0.0
    }
}

pub type LevelSetFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;
pub type VectorFieldFn = dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync;

/// Callback-defined surface. `flow` maps a point of Γ(0) to its position at `t`.
#[derive(Clone)]
pub struct CustomSurface {
    pub ambient_dim: usize,
    pub level_set: Arc<LevelSetFn>,
    pub flow: Arc<VectorFieldFn>,
    pub velocity: Arc<VectorFieldFn>,
}

impl fmt::Debug for CustomSurface {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSurface")
            .field("ambient_dim", &self.ambient_dim)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum SurfaceKind {
    /// `x₁²/a(t) + x₂²/b(t) = 1`
    Ellipse2D { a: AxisFn, b: AxisFn },
    /// `x₁²/a(t) + x₂² + x₃² = 1`
    Ellipsoid3D { a: AxisFn },
    Custom(CustomSurface),
}

#[derive(Debug, Clone)]
pub struct EvolvingSurface {
    pub kind: SurfaceKind,
    pub time_horizon: f64,
}

const FD_STEP: f64 = 1e-6;
const TIME_SLACK: f64 = 1e-12;

impl EvolvingSurface {
    pub fn new(kind: SurfaceKind, time_horizon: f64) -> Self {
        EvolvingSurface { kind, time_horizon }
    }

    /// Ellipse with `a(t) = 1 + sin(t)/4`, `b(t) = 1 + cos(t)/4` on `[0, 1]`.
    pub fn moving_ellipse() -> Self {
        Self::new(
            SurfaceKind::Ellipse2D {
                a: AxisFn::oscillating(1.0, 0.25, 0.0),
                b: AxisFn::oscillating(1.0, 0.0, 0.25),
            },
            1.0,
        )
    }

    /// Ellipsoid with oscillating first axis `a(t) = 1 + sin(t)/4` on `[0, 1]`.
    pub fn moving_ellipsoid() -> Self {
        Self::new(SurfaceKind::Ellipsoid3D { a: AxisFn::oscillating(1.0, 0.25, 0.0) }, 1.0)
    }

    pub fn unit_circle() -> Self {
        Self::new(
            SurfaceKind::Ellipse2D { a: AxisFn::constant(1.0), b: AxisFn::constant(1.0) },
            1.0,
        )
    }

    pub fn unit_sphere() -> Self {
        Self::new(SurfaceKind::Ellipsoid3D { a: AxisFn::constant(1.0) }, 1.0)
    }

    pub fn with_time_horizon(mut self, time_horizon: f64) -> Self {
        self.time_horizon = time_horizon;
        self
    }

    pub fn ambient_dim(&self) -> usize {
        match &self.kind {
            SurfaceKind::Ellipse2D { .. } => 2,
            SurfaceKind::Ellipsoid3D { .. } => 3,
            SurfaceKind::Custom(c) => c.ambient_dim,
        }
    }

    pub fn surface_dim(&self) -> usize {
        self.ambient_dim() - 1
    }

    /// Axis functions of the scaling families; `None` for custom surfaces.
    pub fn axes(&self) -> Option<[AxisFn; 3]> {
        let one = AxisFn::constant(1.0);
        match &self.kind {
            SurfaceKind::Ellipse2D { a, b } => Some([*a, *b, one]),
            SurfaceKind::Ellipsoid3D { a } => Some([*a, one, one]),
            SurfaceKind::Custom(_) => None,
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        let slack = TIME_SLACK * self.time_horizon.abs().max(1.0);
        if t.is_finite() && t >= -slack && t <= self.time_horizon + slack {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { t, horizon: self.time_horizon })
        }
    }

    fn check_dim(&self, x: &[impl Sized]) -> Result<()> {
        if x.len() == self.ambient_dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected: self.ambient_dim(), found: x.len() })
        }
    }

    /// Level-set function φ; zero exactly on Γ(t).
    pub fn level_set(&self, x: &[f64], t: f64) -> Result<f64> {
        self.check_dim(x)?;
        match (&self.kind, self.axes()) {
            (SurfaceKind::Custom(c), _) => Ok((c.level_set)(x, t)),
            (_, Some(axes)) => Ok(scaled_level_set(&axes, x, t)),
            _ => unreachable!(),
        }
    }

    /// Ambient gradient of φ.
    pub fn level_set_gradient(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        match (&self.kind, self.axes()) {
            (SurfaceKind::Custom(c), _) => Ok(central_gradient(|p| (c.level_set)(p, t), x)),
            (_, Some(axes)) => {
                Ok(x.iter().zip(axes.iter()).map(|(&xi, ax)| 2.0 * xi / ax.eval(t)).collect())
            }
            _ => unreachable!(),
        }
    }

    pub fn normal(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let g = self.level_set_gradient(x, t)?;
        normalize(g)
    }

    /// Normal `∇φ/|∇φ|` of the scaling families, generic over the scalar so
    /// that it can be differentiated.
    pub fn normal_generic<T: Scalar>(&self, x: &[T], t: T) -> Result<Vec<T>> {
        self.check_dim(x)?;
        let axes = self
            .axes()
            .ok_or_else(|| Error::Unsupported("differentiable normal of a custom surface".into()))?;
        let g: Vec<T> = x.iter().zip(axes.iter()).map(|(&xi, ax)| xi.scale(2.0) / ax.eval(t)).collect();
        let norm2 = g.iter().fold(T::zero(), |acc, &gi| acc + gi * gi);
        if norm2.value() <= 1e-28 {
            return Err(Error::Singular("vanishing level-set gradient"));
        }
        let inv = T::one() / norm2.sqrt();
        Ok(g.into_iter().map(|gi| gi * inv).collect())
    }

    /// Tangential projector `P = I − ννᵀ`, row-major.
    pub fn projector(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let nu = self.normal(x, t)?;
        Ok(projector_from_normal(&nu))
    }

    pub fn flow_map(&self, x0: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        self.check_dim(x0)?;
        match (&self.kind, self.axes()) {
            (SurfaceKind::Custom(c), _) => Ok((c.flow)(x0, t)),
            (_, Some(axes)) => Ok(x0
                .iter()
                .zip(axes.iter())
                .map(|(&xi, ax)| xi * (ax.eval(t) / ax.eval(0.0)).sqrt())
                .collect()),
            _ => unreachable!(),
        }
    }

    pub fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        self.check_dim(x)?;
        match (&self.kind, self.axes()) {
            (SurfaceKind::Custom(c), _) => Ok((c.velocity)(x, t)),
            (_, Some(axes)) => Ok(x
                .iter()
                .zip(axes.iter())
                .map(|(&xi, ax)| ax.rate(t) / (2.0 * ax.eval(t)) * xi)
                .collect()),
            _ => unreachable!(),
        }
    }

    /// Surface divergence of the velocity, `tr(P ∇v)`.
    pub fn tangential_divergence_velocity(&self, x: &[f64], t: f64) -> Result<f64> {
        let nu = self.normal(x, t)?;
        let d = x.len();
        match (&self.kind, self.axes()) {
            (SurfaceKind::Custom(c), _) => {
                // ∇v by central differences, (∇v)_ij = ∂_j v_i
                let mut jac = vec![0.0; d * d];
                let mut p = x.to_vec();
                for j in 0..d {
                    let step = FD_STEP * x[j].abs().max(1.0);
                    p[j] = x[j] + step;
                    let vp = (c.velocity)(&p, t);
                    p[j] = x[j] - step;
                    let vm = (c.velocity)(&p, t);
                    p[j] = x[j];
                    for i in 0..d {
                        jac[i * d + j] = (vp[i] - vm[i]) / (2.0 * step);
                    }
                }
                let proj = projector_from_normal(&nu);
                Ok((0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| proj[i * d + j] * jac[j * d + i]).sum())
            }
            (_, Some(axes)) => Ok(nu
                .iter()
                .zip(axes.iter())
                .map(|(&n, ax)| (1.0 - n * n) * ax.rate(t) / (2.0 * ax.eval(t)))
                .sum()),
            _ => unreachable!(),
        }
    }

    /// Maps an ambient point onto Γ(t). Scaling families use the radial
    /// normalisation `x / √(Σ xᵢ²/aᵢ)`; custom surfaces use Newton steps along ∇φ.
    pub fn project_to_surface(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        self.check_dim(x)?;
        match (&self.kind, self.axes()) {
            (SurfaceKind::Custom(c), _) => {
                let mut p = x.to_vec();
                for _ in 0..60 {
                    let phi = (c.level_set)(&p, t);
                    if phi.abs() <= 1e-14 {
                        return Ok(p);
                    }
                    let g = central_gradient(|q| (c.level_set)(q, t), &p);
                    let g2: f64 = g.iter().map(|v| v * v).sum();
                    if g2 <= 1e-28 {
                        return Err(Error::Singular("vanishing level-set gradient"));
                    }
                    for (pi, gi) in p.iter_mut().zip(&g) {
                        *pi -= phi * gi / g2;
                    }
                }
                Err(Error::Singular("projection onto custom surface did not converge"))
            }
            (_, Some(axes)) => {
                let r2: f64 = x.iter().zip(axes.iter()).map(|(&xi, ax)| xi * xi / ax.eval(t)).sum();
                if r2 <= 0.0 {
                    return Err(Error::Singular("cannot project the origin"));
                }
                let inv = 1.0 / r2.sqrt();
                Ok(x.iter().map(|xi| xi * inv).collect())
            }
            _ => unreachable!(),
        }
    }
}

fn scaled_level_set(axes: &[AxisFn; 3], x: &[f64], t: f64) -> f64 {
    x.iter().zip(axes.iter()).map(|(&xi, ax)| xi * xi / ax.eval(t)).sum::<f64>() - 1.0
}

fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|j| {
            let step = FD_STEP * x[j].abs().max(1.0);
            p[j] = x[j] + step;
            let fp = f(&p);
            p[j] = x[j] - step;
            let fm = f(&p);
            p[j] = x[j];
            (fp - fm) / (2.0 * step)
        })
        .collect()
}

fn normalize(g: Vec<f64>) -> Result<Vec<f64>> {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 1e-14 {
        return Err(Error::Singular("vanishing level-set gradient"));
    }
    Ok(g.into_iter().map(|v| v / norm).collect())
}

pub fn projector_from_normal<T: Scalar>(nu: &[T]) -> Vec<T> {
    let d = nu.len();
    let mut p = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            let delta = if i == j { T::one() } else { T::zero() };
            p[i * d + j] = delta - nu[i] * nu[j];
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn flow_map_examples() {
        let ellipse = EvolvingSurface::moving_ellipse();
        assert_eq!(ellipse.flow_map(&[1.0, 0.0], 0.0).unwrap(), vec![1.0, 0.0]);
        // the quarter-period point lies past the default horizon T = 1
        let long = EvolvingSurface::moving_ellipse().with_time_horizon(2.0);
        let p = long.flow_map(&[1.0, 0.0], FRAC_PI_2).unwrap();
        assert!(close(&p, &[1.25_f64.sqrt(), 0.0], 1e-15));
        assert!((p[0] - 1.118034).abs() < 1e-6);

        let ellipsoid = EvolvingSurface::moving_ellipsoid();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(ellipsoid.flow_map(&[0.0, 1.0, 0.0], t).unwrap(), vec![0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn flow_map_rejects_times_outside_horizon() {
        let s = EvolvingSurface::moving_ellipse();
        assert!(matches!(s.flow_map(&[1.0, 0.0], 1.5), Err(Error::TimeOutOfRange { .. })));
        assert!(matches!(s.velocity(&[1.0, 0.0], -0.1), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn velocity_examples() {
        let ellipsoid = EvolvingSurface::moving_ellipsoid();
        assert!(close(&ellipsoid.velocity(&[1.0, 0.0, 0.0], 0.0).unwrap(), &[0.125, 0.0, 0.0], 1e-15));
        let ellipse = EvolvingSurface::moving_ellipse();
        let v = ellipse.velocity(&[0.0, 1.25_f64.sqrt()], 0.0).unwrap();
        assert!(close(&v, &[0.0, 0.0], 1e-15));
        let sphere = EvolvingSurface::unit_sphere();
        assert_eq!(sphere.velocity(&[0.6, 0.8, 0.0], 0.5).unwrap(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn normal_examples() {
        let ellipsoid = EvolvingSurface::moving_ellipsoid();
        assert!(close(&ellipsoid.normal(&[0.0, 0.0, 1.0], 0.7).unwrap(), &[0.0, 0.0, 1.0], 1e-15));
        assert!(close(&ellipsoid.normal(&[0.0, 1.0, 0.0], 0.0).unwrap(), &[0.0, 1.0, 0.0], 1e-15));
        let ellipse = EvolvingSurface::moving_ellipse();
        assert!(close(&ellipse.normal(&[1.0, 0.0], 0.0).unwrap(), &[1.0, 0.0], 1e-15));
        assert!(matches!(ellipse.normal(&[0.0, 0.0], 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn tangential_divergence_examples() {
        let ellipsoid = EvolvingSurface::moving_ellipsoid();
        let d = ellipsoid.tangential_divergence_velocity(&[0.0, 1.0, 0.0], 0.0).unwrap();
        assert!((d - 0.125).abs() < 1e-15);
        let t = 0.6;
        let tip = [AxisFn::oscillating(1.0, 0.25, 0.0).eval(t).sqrt(), 0.0, 0.0];
        assert!(ellipsoid.tangential_divergence_velocity(&tip, t).unwrap().abs() < 1e-15);
        let sphere = EvolvingSurface::unit_sphere();
        assert_eq!(sphere.tangential_divergence_velocity(&[0.0, 0.6, 0.8], 0.2).unwrap(), 0.0);
    }

    #[test]
    fn projection_examples() {
        let ellipse = EvolvingSurface::moving_ellipse();
        assert!(close(&ellipse.project_to_surface(&[2.0, 0.0], 0.0).unwrap(), &[1.0, 0.0], 1e-15));
        let on = [0.0, 1.25_f64.sqrt()];
        assert!(close(&ellipse.project_to_surface(&on, 0.0).unwrap(), &on, 1e-12));
        let ellipsoid = EvolvingSurface::moving_ellipsoid();
        assert!(close(&ellipsoid.project_to_surface(&[0.0, 0.0, 2.0], 0.0).unwrap(), &[0.0, 0.0, 1.0], 1e-15));
        assert!(matches!(ellipsoid.project_to_surface(&[0.0; 3], 0.0), Err(Error::Singular(_))));
    }

    fn custom_sphere() -> EvolvingSurface {
        // sphere of radius r(t) = 1 + t/2
        let custom = CustomSurface {
            ambient_dim: 3,
            level_set: Arc::new(|x, t| {
                let r = 1.0 + 0.5 * t;
                x.iter().map(|v| v * v).sum::<f64>() / (r * r) - 1.0
            }),
            flow: Arc::new(|x0, t| x0.iter().map(|v| v * (1.0 + 0.5 * t)).collect()),
            velocity: Arc::new(|x, t| x.iter().map(|v| v * 0.5 / (1.0 + 0.5 * t)).collect()),
        };
        EvolvingSurface::new(SurfaceKind::Custom(custom), 1.0)
    }

    #[test]
    fn custom_surface_callbacks() {
        let s = custom_sphere();
        let p = s.project_to_surface(&[0.3, -0.2, 1.4], 0.5).unwrap();
        assert!(s.level_set(&p, 0.5).unwrap().abs() < 1e-12);
        let nu = s.normal(&p, 0.5).unwrap();
        let r: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(close(&nu, &p.iter().map(|v| v / r).collect::<Vec<_>>(), 1e-8));
        // uniform dilation: ∇_Γ·v = 2 · 0.5 / r(t)
        let div = s.tangential_divergence_velocity(&p, 0.5).unwrap();
        assert!((div - 1.0 / 1.25).abs() < 1e-8);
    }

    fn random_reference_point(dim: usize, dir: &[f64]) -> Vec<f64> {
        dir[..dim].to_vec()
    }

    proptest! {
        #[test]
        fn flow_stays_on_surface_and_matches_velocity(
            dir in prop::array::uniform3(-1.0f64..1.0),
            t in 1e-4f64..(1.0 - 1e-4),
            three_d in any::<bool>(),
        ) {
            prop_assume!(dir.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let s = if three_d { EvolvingSurface::moving_ellipsoid() } else { EvolvingSurface::moving_ellipse() };
            let dim = s.ambient_dim();
            prop_assume!(dir[..dim].iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let x0 = s.project_to_surface(&random_reference_point(dim, &dir), 0.0).unwrap();
            prop_assert!(s.level_set(&x0, 0.0).unwrap().abs() <= 1e-12);
            let x = s.flow_map(&x0, t).unwrap();
            prop_assert!(s.level_set(&x, t).unwrap().abs() <= 1e-12);

            let delta = 1e-5;
            let xp = s.flow_map(&x0, t + delta).unwrap();
            let xm = s.flow_map(&x0, t - delta).unwrap();
            let v = s.velocity(&x, t).unwrap();
            for i in 0..dim {
                prop_assert!((v[i] - (xp[i] - xm[i]) / (2.0 * delta)).abs() <= 1e-6);
            }

            let nu = s.normal(&x, t).unwrap();
            prop_assert!((nu.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12);

            let p = s.projector(&x, t).unwrap();
            for i in 0..dim {
                let pn: f64 = (0..dim).map(|j| p[i * dim + j] * nu[j]).sum();
                prop_assert!(pn.abs() <= 1e-12);
                for j in 0..dim {
                    let p2: f64 = (0..dim).map(|k| p[i * dim + k] * p[k * dim + j]).sum();
                    prop_assert!((p2 - p[i * dim + j]).abs() <= 1e-12);
                }
            }
        }
    }
}
