//! Random parameters and diffusion coefficients.
//!
//! Every sample is drawn from its own ChaCha8 stream seeded with
//! `derive_seed(master, replicate, index)`, where
//!
//! ```text
//! derive_seed(m, r, i) = splitmix64(splitmix64(splitmix64(m) ^ r) ^ i)
//! ```
//!
//! so a Monte-Carlo estimate does not depend on which worker draws which
//! sample, and increasing the sample count only appends new samples.

use std::fmt;
use std::sync::Arc;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AmbientField, Scalar};
use crate::error::{Error, Result};

/// A point `Y ∈ (−1, 1)^d` of the parameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample(Vec<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.abs() < 1.0)) {
            return Err(Error::invalid(format!("sample component {v} outside (-1, 1)")));
        }
        Ok(Sample(values))
    }

    pub fn zeros(d: usize) -> Self {
        Sample(vec![0.0; d])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Weights `(1, Y₁, …, Y_d)` of an affine expansion in `Y`.
    pub fn affine_weights(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.0.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master: u64,
    pub replicate: u64,
    pub sample: u64,
}

impl SeedSpec {
    pub fn new(master: u64, replicate: u64, sample: u64) -> Self {
        SeedSpec { master, replicate, sample }
    }
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, replicate: u64, sample: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ replicate) ^ sample)
}

/// One uniform draw from `(−1, 1)^d` for the given stream.
pub fn draw_sample(seed: SeedSpec, d: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed.master, seed.replicate, seed.sample));
    let values = (0..d)
        .map(|_| loop {
            let u: f64 = rng.sample(Open01);
            let y = 2.0 * u - 1.0;
            if y.abs() < 1.0 {
                break y;
            }
        })
        .collect();
    Sample(values)
}

/// `m` samples with indices `seed.sample .. seed.sample + m`.
pub fn draw_samples(seed: SeedSpec, m: usize, d: usize) -> Vec<Sample> {
    (0..m as u64).map(|i| draw_sample(SeedSpec { sample: seed.sample + i, ..seed }, d)).collect()
}

/// Source of the `index`-th sample of replicate `replicate`.
pub trait Sampler: Send + Sync {
    fn sample(&self, replicate: u64, index: u64) -> Sample;
}

#[derive(Debug, Clone, Copy)]
pub struct SeededSampler {
    pub master: u64,
    pub dim: usize,
}

impl Sampler for SeededSampler {
    fn sample(&self, replicate: u64, index: u64) -> Sample {
        draw_sample(SeedSpec::new(self.master, replicate, index), self.dim)
    }
}

/// Always returns the same sample. Useful to reduce a Monte-Carlo run to a
/// single deterministic path.
#[derive(Debug, Clone)]
pub struct FixedSampler(pub Sample);

impl Sampler for FixedSampler {
    fn sample(&self, _replicate: u64, _index: u64) -> Sample {
        self.0.clone()
    }
}

/// One summand of an affine-in-`Y` coefficient expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientTerm {
    Constant(f64),
    /// `scale · sin(freq · x_coord)`
    Sine { coord: usize, freq: f64, scale: f64 },
    /// `offset + scale · x_coord^power`
    Power { coord: usize, power: u32, scale: f64, offset: f64 },
}

impl AmbientField for CoefficientTerm {
    fn eval<T: Scalar>(&self, x: &[T], _t: T) -> T {
        match *self {
            CoefficientTerm::Constant(c) => T::from_f64(c),
            CoefficientTerm::Sine { coord, freq, scale } => x[coord].scale(freq).sin().scale(scale),
            CoefficientTerm::Power { coord, power, scale, offset } => {
                T::from_f64(offset) + x[coord].powi(power).scale(scale)
            }
        }
    }
}

pub type CoefficientFn = dyn Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct CustomCoefficient {
    pub func: Arc<CoefficientFn>,
    pub sample_dim: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl fmt::Debug for CustomCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCoefficient")
            .field("sample_dim", &self.sample_dim)
            .field("alpha_min", &self.alpha_min)
            .field("alpha_max", &self.alpha_max)
            .finish_non_exhaustive()
    }
}

/// Random diffusion coefficient α(x, t, Y).
#[derive(Debug, Clone)]
pub enum RandomCoefficient {
    /// `1 + (Y₁/4) sin(2x₁) + (Y₂/4) sin(2x₂)`
    Experiment1,
    /// `1 + x₁² + Y₁ x₁⁴ + Y₂ x₂⁴`
    Experiment2,
    Custom(CustomCoefficient),
}

impl RandomCoefficient {
    /// Terms `α₀, α₁, …` with `α = α₀ + Σ_m Y_m α_m`, when the coefficient has that form.
    pub fn affine_terms(&self) -> Option<Vec<CoefficientTerm>> {
        match self {
            RandomCoefficient::Experiment1 => Some(vec![
                CoefficientTerm::Constant(1.0),
                CoefficientTerm::Sine { coord: 0, freq: 2.0, scale: 0.25 },
                CoefficientTerm::Sine { coord: 1, freq: 2.0, scale: 0.25 },
            ]),
            RandomCoefficient::Experiment2 => Some(vec![
                CoefficientTerm::Power { coord: 0, power: 2, scale: 1.0, offset: 1.0 },
                CoefficientTerm::Power { coord: 0, power: 4, scale: 1.0, offset: 0.0 },
                CoefficientTerm::Power { coord: 1, power: 4, scale: 1.0, offset: 0.0 },
            ]),
            RandomCoefficient::Custom(_) => None,
        }
    }

    pub fn sample_dim(&self) -> usize {
        match self {
            RandomCoefficient::Custom(c) => c.sample_dim,
            _ => 2,
        }
    }

    /// Declared `(α_min, α_max)`. For the second experiment the lower bound is
    /// exclusive and the upper bound holds on the ellipsoid family.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            RandomCoefficient::Experiment1 => (0.5, 1.5),
            // x₁² ≤ 1.25 and x₂² ≤ 1 on Γ(t)
            RandomCoefficient::Experiment2 => (0.0, 1.0 + 1.25 + 1.25 * 1.25 + 1.0),
            RandomCoefficient::Custom(c) => (c.alpha_min, c.alpha_max),
        }
    }

    pub fn eval(&self, x: &[f64], t: f64, sample: &Sample) -> f64 {
        match self {
            RandomCoefficient::Custom(c) => (c.func)(x, t, sample.values()),
            _ => {
                let terms = self.affine_terms().expect("experiment coefficients are affine");
                terms.iter().zip(sample.affine_weights()).map(|(term, w)| w * term.eval(x, t)).sum()
            }
        }
    }
}

/// `α(x, t, Y)`.
pub fn alpha_eval(coefficient: &RandomCoefficient, x: &[f64], t: f64, sample: &Sample) -> f64 {
    coefficient.eval(x, t, sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EvolvingSurface;

    #[test]
    fn draws_are_deterministic_and_inside_the_cube() {
        let seed = SeedSpec::new(42, 3, 0);
        let a = draw_samples(seed, 500, 3);
        assert_eq!(a, draw_samples(seed, 500, 3));
        assert!(a.iter().all(|s| s.values().iter().all(|y| y.abs() < 1.0)));
        // appending samples keeps the prefix
        assert_eq!(&draw_samples(seed, 1000, 3)[..500], &a[..]);
        assert_ne!(draw_samples(SeedSpec::new(42, 4, 0), 1, 3), draw_samples(seed, 1, 3));
    }

    #[test]
    fn empirical_mean_is_centred() {
        let m = 10_000;
        let samples = draw_samples(SeedSpec::new(7, 0, 0), m, 2);
        let band = 3.0 * (1.0 / (3.0 * m as f64)).sqrt();
        assert!((band - 0.0173).abs() < 1e-4);
        for c in 0..2 {
            let mean: f64 = samples.iter().map(|s| s.values()[c]).sum::<f64>() / m as f64;
            assert!(mean.abs() < band, "component {c} mean {mean}");
        }
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let m = 10_000;
        let master = 2024;
        for (i, j) in [(0u64, 1u64), (5, 1000), (17, 18)] {
            let xs: Vec<f64> = (0..m).map(|r| draw_sample(SeedSpec::new(master, r, i), 1).values()[0]).collect();
            let ys: Vec<f64> = (0..m).map(|r| draw_sample(SeedSpec::new(master, r, j), 1).values()[0]).collect();
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (mx, my) = (mean(&xs), mean(&ys));
            let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
            let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
            let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
            let rho = cov / (vx * vy).sqrt();
            assert!(rho.abs() < 0.05, "ρ = {rho}");
        }
    }

    #[test]
    fn sample_validation() {
        assert!(Sample::new(vec![0.5, -0.999]).is_ok());
        assert!(Sample::new(vec![1.0]).is_err());
        assert!(Sample::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn alpha_examples() {
        let e1 = RandomCoefficient::Experiment1;
        assert_eq!(alpha_eval(&e1, &[0.3, -1.1], 0.2, &Sample::zeros(2)), 1.0);
        let y = Sample::new(vec![0.9, -0.7]).unwrap();
        assert_eq!(alpha_eval(&e1, &[0.0, 0.0], 0.5, &y), 1.0);
        let e2 = RandomCoefficient::Experiment2;
        let y = Sample::new(vec![1.0 - 1e-16, 0.0]).unwrap();
        assert!((alpha_eval(&e2, &[1.0, 0.0, 0.0], 0.0, &y) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn experiment_one_stays_within_bounds() {
        let e1 = RandomCoefficient::Experiment1;
        let (lo, hi) = e1.bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let y = Sample::new(vec![rng.gen_range(-0.999_999..0.999_999), rng.gen_range(-0.999_999..0.999_999)]).unwrap();
            let a = e1.eval(&x, 0.0, &y);
            assert!(lo < a && a < hi);
        }
    }

    #[test]
    fn experiment_two_is_positive_on_the_surface() {
        let e2 = RandomCoefficient::Experiment2;
        let (lo, hi) = e2.bounds();
        let surface = EvolvingSurface::moving_ellipsoid();
        let samples = draw_samples(SeedSpec::new(5, 0, 0), 20_000, 6);
        for s in &samples {
            let v = s.values();
            let Ok(x0) = surface.project_to_surface(&v[0..3], 0.0) else { continue };
            let t = 0.5 * (v[3] + 1.0);
            let x = surface.flow_map(&x0, t).unwrap();
            let y = Sample::new(v[4..6].to_vec()).unwrap();
            let a = e2.eval(&x, t, &y);
            assert!(a > lo && a <= hi, "α = {a}");
        }
    }
}
