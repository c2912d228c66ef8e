//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the numeric kernels are generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn from_f32_lossless(v: f32) -> Self;

    /// Converts through `f64`; panics only for values no float type can hold.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable as scalar")
    }

    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn from_f32_lossless(v: f32) -> Self {
        v
    }
}

impl Scalar for f64 {
    fn from_f32_lossless(v: f32) -> Self {
        v as f64
    }
}

#[inline]
pub fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| {
            let d = x - y;
            acc + d * d
        })
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Index of the nearest row under squared Euclidean distance; ties go to the lowest index.
pub fn nearest<'a, T: Scalar>(x: &[T], rows: impl IntoIterator<Item = &'a [T]>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (j, r) in rows.into_iter().enumerate() {
        let d = sq_dist(x, r);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// log(Σ exp(v)) without overflow.
pub fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    let s: T = v.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

pub fn l2_normalize<T: Scalar>(v: &mut [T]) {
    let n = dot(v, v).sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
}

pub fn l1_normalize<T: Scalar>(v: &mut [T]) {
    let n: T = v.iter().map(|x| x.abs()).sum();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
}
