//! Floating-point abstraction for the streaming path, which runs in either
//! single or double precision.

use std::fmt::Debug;

use num_traits::Float;
use rustfft::FftNum;

pub trait Real: FftNum + Float + Default + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn widen(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn widen(self) -> f64 {
        self
    }
}
