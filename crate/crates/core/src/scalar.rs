//! Scalar abstraction for the closed-form layers (special functions, Bose
//! factors, heat kernels, bounds). Works for `f32` and `f64`.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::Debug;

pub trait Real: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static {
    /// Lossless-enough literal conversion.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl<T> Real for T where T: Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static {}
