//! Floating-point element type shared by every tensor.
//!
//! Training runs in `f32`; gradient checks run in `f64`.

use std::cell::RefCell;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::Arc;

use rustfft::num_traits::{Float, FloatConst, FromPrimitive};
use rustfft::{Fft, FftNum, FftPlanner};

pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + FftNum
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short name of the width, used in diagnostics.
    const NAME: &'static str;

    /// Converts an `f64` constant into this width.
    fn c(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Complex FFT plan of length `n` from this thread's planner cache.
    fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<Self>>;
}

thread_local! {
    static PLANNER_F32: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
    static PLANNER_F64: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan_with<T: FftNum>(planner: &mut FftPlanner<T>, n: usize, inverse: bool) -> Arc<dyn Fft<T>> {
    if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn c(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<Self>> {
        PLANNER_F32.with(|p| plan_with(&mut p.borrow_mut(), n, inverse))
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn c(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn fft_plan(n: usize, inverse: bool) -> Arc<dyn Fft<Self>> {
        PLANNER_F64.with(|p| plan_with(&mut p.borrow_mut(), n, inverse))
    }
}
