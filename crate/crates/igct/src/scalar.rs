//! Scalar abstraction: the whole crate is generic over f32/f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::distr::uniform::SampleUniform;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar usable throughout the crate: f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + SampleUniform
    + Copy
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw uniformly from [0, 1).
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Convert an f64 literal (panics on values unrepresentable as Self).
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal out of scalar range")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f32 {
        StandardNormal.sample(rng)
    }
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> f32 {
        rng.random()
    }
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        StandardNormal.sample(rng)
    }
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        rng.random()
    }
}

/// Euclidean norm of a vector.
pub fn norm<F: Scalar>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}

/// Squared Euclidean distance between two equal-length vectors.
pub fn dist_sq<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<F>()
}
