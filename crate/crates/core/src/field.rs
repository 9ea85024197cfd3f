use ndarray::LinalgScalar;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt::{Debug, Display};
use std::ops::Neg;

/// Scalar field of the observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

impl Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Field::Real => write!(f, "real"),
            Field::Complex => write!(f, "complex"),
        }
    }
}

/// Scalar type of a data matrix: `f64` or `Complex64`.
///
/// The trait carries the handful of field-dependent operations the
/// estimators need, so that all matrix code is written once.
pub trait Scalar:
    LinalgScalar + Neg<Output = Self> + PartialEq + Debug + Display + Send + Sync + 'static
{
    const FIELD: Field;

    fn from_re(re: f64) -> Self;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn conj(self) -> Self;
    /// Squared modulus |z|^2.
    fn abs_sq(self) -> f64;
    /// Multiply by a real scalar.
    fn scale(self, s: f64) -> Self;
    fn is_finite(self) -> bool;
    /// Draw one unit-variance standard normal component: N(0,1) in the real
    /// field, circular CN(0,1) in the complex field (E|z|^2 = 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    const FIELD: Field = Field::Real;

    #[inline]
    fn from_re(re: f64) -> Self {
        re
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn im(self) -> f64 {
        0.0
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn abs_sq(self) -> f64 {
        self * self
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        self * s
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for Complex64 {
    const FIELD: Field = Field::Complex;

    #[inline]
    fn from_re(re: f64) -> Self {
        Complex64::new(re, 0.0)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn im(self) -> f64 {
        self.im
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn abs_sq(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
    #[inline]
    fn scale(self, s: f64) -> Self {
        Complex64::new(self.re * s, self.im * s)
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im).scale(std::f64::consts::FRAC_1_SQRT_2)
    }
}

impl Field {
    /// Dimension multiplier for chi-square laws of squared norms: a complex
    /// p-vector has 2p real degrees of freedom.
    pub fn dof_factor(self) -> usize {
        match self {
            Field::Real => 1,
            Field::Complex => 2,
        }
    }
}
