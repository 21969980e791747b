use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Num;

/// Objective-space arithmetic. Only field operations and ordering are
/// required, so exact rationals work alongside `f32`/`f64`.
pub trait Scalar: Num + Clone + PartialOrd + Debug {}

impl<T: Num + Clone + PartialOrd + Debug> Scalar for T {}

/// Lossless conversion of a finite `f64` into a rational.
pub fn exact(value: f64) -> BigRational {
    BigRational::from_float(value).expect("finite value")
}

pub fn exact_int(value: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(value))
}
