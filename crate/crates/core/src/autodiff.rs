//! Forward-mode automatic differentiation with nestable dual numbers.
//!
//! `Dual<T>` carries a value and a single directional derivative. Because
//! `Dual<T>` is itself a [`Scalar`] whenever `T` is, second derivatives come
//! from `Dual<Dual<f64>>`: the inner level seeds one direction, the outer
//! level another. Gradients are obtained by seeding one coordinate at a time.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Arithmetic needed by the closed-form fields that get differentiated.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn from_f64(v: f64) -> Self;
    /// Innermost real value.
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn powi(self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = acc * self;
        }
        acc
    }

    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn powi(self, n: u32) -> Self {
        f64::powi(self, n as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T> {
    pub re: T,
    pub eps: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, eps: T) -> Self {
        Dual { re, eps }
    }

    pub fn constant(re: T) -> Self {
        Dual { re, eps: T::zero() }
    }

    pub fn variable(re: T) -> Self {
        Dual { re, eps: T::one() }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Dual::new(self.re * rhs.re, self.re * rhs.eps + self.eps * rhs.re)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.re;
        let re = self.re * inv;
        Dual::new(re, (self.eps - re * rhs.eps) * inv)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.eps)
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(T::from_f64(v))
    }
    fn value(&self) -> f64 {
        self.re.value()
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.eps * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.eps * self.re.sin()))
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.eps / (s + s))
    }
}

/// A closed-form function of ambient position and time that can be
/// evaluated on any [`Scalar`], and hence differentiated to any order.
pub trait AmbientField: Send + Sync {
    fn eval<T: Scalar>(&self, x: &[T], t: T) -> T;
}

/// Gradient of `f` at `x` by one forward sweep per coordinate.
pub fn gradient<T, F>(f: F, x: &[T]) -> Vec<T>
where
    T: Scalar,
    F: Fn(&[Dual<T>]) -> Dual<T>,
{
    let mut seeded: Vec<Dual<T>> = x.iter().map(|&xi| Dual::constant(xi)).collect();
    (0..x.len())
        .map(|i| {
            seeded[i].eps = T::one();
            let d = f(&seeded).eps;
            seeded[i].eps = T::zero();
            d
        })
        .collect()
}

/// Derivative of a scalar function of one variable.
pub fn derivative<T, F>(f: F, x: T) -> T
where
    T: Scalar,
    F: Fn(Dual<T>) -> Dual<T>,
{
    f(Dual::variable(x)).eps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_derivatives_of_elementary_functions() {
        let x = 0.7_f64;
        assert!((derivative(|v| v.sin(), x) - x.cos()).abs() < 1e-15);
        assert!((derivative(|v| v.cos(), x) + x.sin()).abs() < 1e-15);
        assert!((derivative(|v| v.sqrt(), x) - 0.5 / x.sqrt()).abs() < 1e-15);
        assert!((derivative(|v| Dual::from_f64(1.0) / v, x) + 1.0 / (x * x)).abs() < 1e-14);
        assert!((derivative(|v| v.powi(4), x) - 4.0 * x.powi(3)).abs() < 1e-14);
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // d²/dx² sin(3x) = -9 sin(3x)
        let x = 0.3_f64;
        let second = derivative(|v: Dual<f64>| derivative(|w| (w.scale(3.0)).sin(), v), x);
        assert!((second + 9.0 * (3.0 * x).sin()).abs() < 1e-13);
    }

    #[test]
    fn mixed_partials_via_nested_gradient() {
        // f = x² y³, ∂²f/∂x∂y = 6 x y²
        let p = [1.3_f64, -0.4];
        let dfdx = |q: &[Dual<f64>]| {
            gradient(|r: &[Dual<Dual<f64>>]| r[0] * r[0] * r[1].powi(3), q)[0]
        };
        let hess_row = gradient(dfdx, &p);
        assert!((hess_row[1] - 6.0 * p[0] * p[1] * p[1]).abs() < 1e-13);
        assert!((hess_row[0] - 2.0 * p[1].powi(3)).abs() < 1e-13);
    }
}
