//! Scalar abstraction shared by every numeric routine in the workspace.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real floating-point type the models are generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal or parameter into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon scaled to a usable "numerically zero" threshold.
    #[inline]
    fn tiny() -> Self {
        Self::epsilon() * Self::lit(64.0)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Complex phasor over a [`Scalar`].
pub type Phasor<T> = Complex<T>;

/// Builds a phasor from rectangular components.
#[inline]
pub fn xy<T: Scalar>(x: T, y: T) -> Phasor<T> {
    Complex::new(x, y)
}

/// Builds a phasor from magnitude and angle (rad).
#[inline]
pub fn polar<T: Scalar>(mag: T, angle: T) -> Phasor<T> {
    Complex::from_polar(mag, angle)
}

/// `j·z`
#[inline]
pub fn mul_j<T: Scalar>(z: Phasor<T>) -> Phasor<T> {
    Complex::new(-z.im, z.re)
}

/// Casts a complex `f64` value into another scalar type.
#[inline]
pub fn cast_phasor<T: Scalar>(z: Complex<f64>) -> Phasor<T> {
    Complex::new(T::lit(z.re), T::lit(z.im))
}
