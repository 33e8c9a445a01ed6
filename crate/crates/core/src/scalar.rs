//! Scalar abstraction for the numeric core.
//!
//! All math in this crate is written against [`Scalar`] so the same code runs
//! in `f32` or `f64`. The pipeline types exported from the crate root pin
//! `f64`, which is also the on-disk precision of every file format.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};
use rand::distributions::uniform::SampleUniform;
use rand::Rng;
use rand_distr::StandardNormal;

pub trait Scalar:
    Float + NumAssign + SampleUniform + Sum + Debug + Display + Send + Sync + 'static
{
    /// One standard-normal draw from `rng`.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn from_f64(v: f64) -> Self {
        Self::from(v).expect("f64 conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar fits in f64")
    }

    fn from_usize(v: usize) -> Self {
        Self::from(v).expect("usize conversion")
    }
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
}

/// 10^(dB/10), the linear power ratio of a decibel value.
pub fn db_to_linear<F: Scalar>(db: F) -> F {
    F::from_f64(10.0).powf(db / F::from_f64(10.0))
}

/// 10^((dBm - 30)/10): dBm to watts.
pub fn dbm_to_watts<F: Scalar>(dbm: F) -> F {
    db_to_linear(dbm - F::from_f64(30.0))
}
